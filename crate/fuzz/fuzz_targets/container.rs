#![no_main]

use libfuzzer_sys::fuzz_target;
use rbff::container::Container;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Container::from_bytes(data) {
        let bytes = c.to_bytes();
        let again = Container::from_bytes(&bytes).expect("re-encoded container parses");
        assert_eq!(again.to_bytes(), bytes);
        assert_eq!(c.serialized_len(), bytes.len());
    }
});
