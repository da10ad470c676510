#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(events) = drag_core::ledger::parse_events_jsonl(s) {
            let _ = drag_core::ledger::fold_events(&events);
        }
    }
});
