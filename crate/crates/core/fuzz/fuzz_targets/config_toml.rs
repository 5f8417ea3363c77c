#![no_main]

use libfuzzer_sys::fuzz_target;
use meshrl::config::ScenarioConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ScenarioConfig::from_toml_str(s) {
        // a valid config must survive its own serializer
        let text = cfg.to_toml_string().unwrap();
        let again = ScenarioConfig::from_toml_str(&text).expect("written config must parse");
        assert_eq!(again.to_toml_string().unwrap(), text);
    }
});
