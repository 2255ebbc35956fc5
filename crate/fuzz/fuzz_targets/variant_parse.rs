#![no_main]

use imaginenet::fusion::HeadConfig;
use imaginenet::pipeline::Subset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((kind, depth)) = HeadConfig::parse_variant(text) {
        let cfg = HeadConfig { depth, ..HeadConfig::new(kind, 4, 8) };
        assert_eq!(HeadConfig::parse_variant(&cfg.variant_name()).unwrap(), (kind, depth));
    }
    if let Ok(subset) = text.parse::<Subset>() {
        assert_eq!(subset.as_str(), text);
    }
});
