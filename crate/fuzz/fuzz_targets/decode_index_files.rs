#![no_main]
use libfuzzer_sys::fuzz_target;

// First byte picks where the vector bytes end and the id list begins.
fuzz_target!(|data: &[u8]| {
    let Some((&cut, rest)) = data.split_first() else { return };
    let (bin, ids) = rest.split_at((cut as usize * 8).min(rest.len()));
    if let Ok(ids) = std::str::from_utf8(ids) {
        let _ = drag_core::retrieval::decode_index_files(bin, ids);
    }
});
