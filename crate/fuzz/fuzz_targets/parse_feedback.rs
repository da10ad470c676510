#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(tx) = drag_core::ledger::parse_feedback(data) {
        let mut ledger = drag_core::ledger::Ledger::default();
        let _ = ledger.submit_feedback(&tx);
    }
});
