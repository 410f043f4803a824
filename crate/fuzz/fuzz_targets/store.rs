#![no_main]

use grads_core::store::Store;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(store) = Store::parse(text) {
        let again = store.to_jsonl();
        let back = Store::parse(&again).expect("serialized store reparses");
        assert_eq!(back.to_jsonl(), again);
    }
});
