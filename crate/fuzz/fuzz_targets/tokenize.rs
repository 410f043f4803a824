#![no_main]

use grads_core::baselines::tokenize;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for tok in tokenize(text) {
        assert!(!tok.is_empty());
        assert!(!tok.chars().any(|c| c.is_ascii_punctuation() || c.is_whitespace()));
    }
});
