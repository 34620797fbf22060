#![no_main]

use dae_core::persist::{parse_question_records, to_jsonl};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = parse_question_records(text, "fuzz") {
        let again = to_jsonl(&records).unwrap();
        let back = parse_question_records(&again, "fuzz").expect("re-encoded records parse");
        assert_eq!(back, records);
    }
});
