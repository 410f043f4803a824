#![no_main]

use grads_core::selector::DemoIndex;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(idx) = DemoIndex::parse(text) {
        let again = idx.to_jsonl();
        let back = DemoIndex::parse(&again).expect("serialized index reparses");
        assert_eq!(back.to_jsonl(), again);
    }
});
