#![no_main]

use casemem::harness::cases::{parse_case_stream, write_case_stream};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cases) = parse_case_stream(data) {
        let mut buf = Vec::new();
        write_case_stream(&mut buf, &cases).unwrap();
        assert_eq!(parse_case_stream(buf.as_slice()).unwrap(), cases);
    }
});
