#![no_main]

use dae_core::eval::parse_dataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = parse_dataset(text, "fuzz") {
        for r in &records {
            // Accepted records must convert or fail cleanly, never panic.
            let _ = r.to_query();
        }
    }
});
