#![no_main]
use drag_core::experiment::{parse_trace_csv, parse_trace_meta, TraceMeta};
use libfuzzer_sys::fuzz_target;
use std::sync::OnceLock;

// Six-source toy run header.
fn meta() -> &'static TraceMeta {
    static META: OnceLock<TraceMeta> = OnceLock::new();
    META.get_or_init(|| parse_trace_meta(include_str!("../trace.json")).unwrap())
}

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        let _ = parse_trace_csv(s, meta());
    }
});
