#![no_main]

use casemem::config::EngineConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = EngineConfig::from_json(text) {
        cfg.validate().unwrap();
    }
});
