#![no_main]

use libfuzzer_sys::fuzz_target;
use lssl::cli::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::parse(text) {
        cfg.validate().unwrap();
    }
});
