#![no_main]

use libfuzzer_sys::fuzz_target;
use lssl::layer::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = decode_checkpoint(data) {
        let bytes = encode_checkpoint(&model).unwrap();
        assert_eq!(decode_checkpoint(&bytes).unwrap(), model);
    }
});
