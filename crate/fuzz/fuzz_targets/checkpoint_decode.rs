#![no_main]

use libfuzzer_sys::fuzz_target;
use vst::model::checkpoint::{decode_checkpoint, Manifest};

// Input: manifest text, a NUL byte, then the weight blob.
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let (head, blob) = data.split_at(split);
    let Ok(text) = std::str::from_utf8(head) else { return };
    if let Ok(manifest) = Manifest::parse(text) {
        let _ = decode_checkpoint(manifest, blob.get(1..).unwrap_or(&[]));
    }
});
