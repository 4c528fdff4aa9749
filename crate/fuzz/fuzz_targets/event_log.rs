#![no_main]

use casemem::config::EngineConfig;
use casemem::persistence::{read_events, replay};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(events) = read_events(data) {
        for pair in events.windows(2) {
            assert_eq!(pair[1].seq, pair[0].seq + 1);
        }
        let _ = replay(&events, &EngineConfig::default());
    }
});
