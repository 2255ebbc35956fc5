#![no_main]

use imaginenet::label_space::{build_label_space, encode_multi_hot, LabelSpaceConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = LabelSpaceConfig::from_toml_str(text) else { return };
    let Ok(space) = build_label_space(&cfg) else { return };
    for label in space.composites() {
        let hot = encode_multi_hot(label, space.n_classes()).unwrap();
        assert_eq!(hot.popcount(), label.len());
    }
    space.to_json_string().unwrap();
});
