#![no_main]

use libfuzzer_sys::fuzz_target;
use vst::data::decode_raster;

fuzz_target!(|data: &[u8]| {
    if let Ok(r) = decode_raster(data) {
        assert_eq!(r.data.len(), r.width * r.height * r.channels);
    }
});
