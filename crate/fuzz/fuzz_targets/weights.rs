#![no_main]

use libfuzzer_sys::fuzz_target;
use rbff::container::Container;
use rbff::graph::{Network, WeightContainer};

fuzz_target!(|data: &[u8]| {
    let Ok(c) = Container::from_bytes(data) else { return };
    let Ok(w) = WeightContainer::from_container(c) else { return };
    let _ = Network::new(&w);
    let _ = w.truncate(1);
});
