#![no_main]

use dae_core::text::{normalize_answer, parse_label_lines, parse_question_lines, strip_list_prefix};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let questions = parse_question_lines(text);
    let labels = parse_label_lines(text);
    for item in questions.items.iter().chain(&labels.items) {
        assert!(!item.trim().is_empty());
    }
    for line in text.lines() {
        let _ = strip_list_prefix(line);
    }
    let _ = normalize_answer(text);
});
