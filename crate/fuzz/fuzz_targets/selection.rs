#![no_main]

use grads_core::selector::SelectionResult;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(sel) = SelectionResult::parse(text) {
        let again = sel.to_json();
        let back = SelectionResult::parse(&again).expect("serialized selection reparses");
        assert_eq!(back.to_json(), again);
    }
});
