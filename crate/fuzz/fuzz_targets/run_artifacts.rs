#![no_main]

use dae_core::persist::{parse_jsonl, Failure};
use dae_core::policy::Decision;
use dae_core::uncertainty::UncertaintyReport;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_jsonl::<Decision>(text, "fuzz");
    let _ = parse_jsonl::<UncertaintyReport>(text, "fuzz");
    let _ = parse_jsonl::<Failure>(text, "fuzz");
});
