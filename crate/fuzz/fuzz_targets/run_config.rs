#![no_main]

use libfuzzer_sys::fuzz_target;
use rbff::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::parse(text) {
        let again = RunConfig::parse(&cfg.to_config_string()).expect("printed config parses");
        assert_eq!(again.to_config_string(), cfg.to_config_string());
    }
});
