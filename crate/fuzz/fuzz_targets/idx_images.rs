#![no_main]

use libfuzzer_sys::fuzz_target;
use lssl::tasks::{encode_idx_images, idx_dataset, parse_idx_images, Split};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = parse_idx_images(data, 64) {
        let declared = u32::from_be_bytes([data[4], data[5], data[6], data[7]]) as usize;
        if declared == img.pixels.len() {
            // everything was materialized, so re-encoding must give the input back
            assert_eq!(encode_idx_images(img.rows, img.cols, &img.pixels).unwrap(), data);
        }
        let labels = vec![0u8; img.pixels.len()];
        let ds = idx_dataset(&img, &labels, Split::Train).unwrap();
        assert!(ds.sequences.data.iter().flat_map(|d| d.as_slice()).all(|v| (0.0..=1.0).contains(v)));
    }
});
