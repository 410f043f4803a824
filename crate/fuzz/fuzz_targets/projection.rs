#![no_main]

use grads_core::store::Projection;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(p) = Projection::parse(text) {
        let back = Projection::parse(&p.to_json()).expect("serialized projection reparses");
        assert_eq!(back.fingerprint(), p.fingerprint());
    }
});
