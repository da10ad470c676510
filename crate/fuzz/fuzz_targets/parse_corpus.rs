#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        let _ = drag_core::corpus::parse_corpus(s, None);
        let _ = drag_core::corpus::parse_corpus(s, Some(3));
    }
});
