#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use vst::data::parse_manifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = parse_manifest(text, Path::new("/base")) {
            let depth = m.has_depth();
            assert!(m.records.iter().all(|r| r.depth.is_some() == depth));
        }
    }
});
