#![no_main]

use libfuzzer_sys::fuzz_target;
use rbff::container::Container;
use rbff::pipeline::PipelineBundle;

fuzz_target!(|data: &[u8]| {
    let Ok(c) = Container::from_bytes(data) else { return };
    if let Ok(b) = PipelineBundle::from_container(&c) {
        let bytes = b.to_container().to_bytes();
        let back = PipelineBundle::from_container(&Container::from_bytes(&bytes).unwrap()).expect("roundtrip");
        assert_eq!(back.to_container().to_bytes(), bytes);
    }
});
