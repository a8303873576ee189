#![no_main]

use heavy_polymer::experiments::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(cfg) = ExperimentConfig::from_toml(data) {
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).expect("round trip");
        assert_eq!(again, cfg);
    }
});
