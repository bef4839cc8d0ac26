#![no_main]

use libfuzzer_sys::fuzz_target;
use rbff::container::Container;
use rbff::fusion::FeatureMatrix;

fuzz_target!(|data: &[u8]| {
    let Ok(c) = Container::from_bytes(data) else { return };
    if let Ok(fm) = FeatureMatrix::from_container(&c) {
        let back = FeatureMatrix::from_container(&fm.to_container()).expect("roundtrip");
        assert_eq!(back.to_container().to_bytes(), fm.to_container().to_bytes());
    }
});
