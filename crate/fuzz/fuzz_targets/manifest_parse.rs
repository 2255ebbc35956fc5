#![no_main]

use imaginenet::dataset::Manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(manifest) = Manifest::from_json_str(text) else { return };
    let total: usize = manifest.counts().values().flat_map(|m| m.values()).sum();
    assert_eq!(total, manifest.clips.len());
});
