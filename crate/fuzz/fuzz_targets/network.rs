#![no_main]

use grads_core::store::{network_to_json, parse_network};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(net) = parse_network(text) {
        let again = network_to_json(&net);
        let back = parse_network(&again).expect("serialized network reparses");
        assert_eq!(network_to_json(&back), again);
    }
});
