#![no_main]

use casemem::config::EngineConfig;
use casemem::persistence::{snapshot_from_str, snapshot_to_string};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let cfg = EngineConfig::default();
    if let Ok(state) = snapshot_from_str(text, &cfg) {
        let again = snapshot_from_str(&snapshot_to_string(&state), &cfg).unwrap();
        assert_eq!(again, state);
    }
});
