#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ledger) = drag_core::ledger::Ledger::restore(data) {
        let _ = ledger.check_consistency();
        let _ = ledger.snapshot();
    }
});
