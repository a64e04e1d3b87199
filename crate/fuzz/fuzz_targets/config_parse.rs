#![no_main]

use libfuzzer_sys::fuzz_target;
use vrfm_cli::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::from_json(text) {
        if cfg.validate().is_ok() {
            let json = cfg.canonical_json();
            ExperimentConfig::from_json(&json).expect("canonical config parses");
        }
    }
});
