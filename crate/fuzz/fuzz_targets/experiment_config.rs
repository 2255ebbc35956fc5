#![no_main]

use imaginenet::pipeline::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = ExperimentConfig::from_toml_str(text) else { return };
    let hash = cfg.config_hash().unwrap();
    // a valid config survives its own TOML rendering
    let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
    assert_eq!(again.config_hash().unwrap(), hash);
    let a = &cfg.ablate;
    let runs = a.heads.len() * a.aggregations.len() * a.pos_emb.len() * a.seeds.len().max(1);
    if runs <= 256 {
        for run in cfg.expand_ablation() {
            let _ = run.validate();
        }
    }
});
