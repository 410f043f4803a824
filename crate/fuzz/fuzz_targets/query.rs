#![no_main]

use grads_core::selector::QueryEncoding;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(q) = QueryEncoding::parse(text) {
        let back = QueryEncoding::parse(&q.to_json()).expect("serialized query reparses");
        assert_eq!(back, q);
    }
});
