#![no_main]

use libfuzzer_sys::fuzz_target;
use rbff::preprocess::{preprocess_bytes, Preprocessing};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = preprocess_bytes(data, &Preprocessing::with_size(16)) {
        assert!(img.tensor().data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
});
