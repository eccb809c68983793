#![no_main]

use libfuzzer_sys::fuzz_target;
use vst::data::raster::{decode_pnm, encode_pnm};

fuzz_target!(|data: &[u8]| {
    if let Ok(r) = decode_pnm(data) {
        assert_eq!(r.data.len(), r.width * r.height * r.channels);
        assert_eq!(decode_pnm(&encode_pnm(&r)).unwrap(), r);
    }
});
