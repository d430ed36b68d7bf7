#![no_main]

use libfuzzer_sys::fuzz_target;
use satprecode::config::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::from_toml_str(text) {
        let echo = cfg.to_toml_string();
        let again = ExperimentConfig::from_toml_str(&echo).expect("config echo parses");
        assert_eq!(again, cfg);
    }
});
