#![no_main]

use libfuzzer_sys::fuzz_target;
use lssl::tasks::parse_signal_csv;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(values) = parse_signal_csv(text) {
        assert!(values.iter().all(|v| v.is_finite()));
    }
});
