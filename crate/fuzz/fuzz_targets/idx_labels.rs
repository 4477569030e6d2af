#![no_main]

use libfuzzer_sys::fuzz_target;
use lssl::tasks::{encode_idx_labels, parse_idx_labels};

fuzz_target!(|data: &[u8]| {
    if let Ok((count, labels)) = parse_idx_labels(data, usize::MAX) {
        assert_eq!(count, labels.len());
        assert_eq!(encode_idx_labels(&labels).unwrap(), data);
    }
});
