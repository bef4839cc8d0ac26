#![no_main]

use libfuzzer_sys::fuzz_target;
use rbff::fusion::parse_block_set;
use rbff::graph::feature_dim;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(set) = parse_block_set(text) {
        assert!(feature_dim(&set).is_ok(), "{set:?}");
    }
});
