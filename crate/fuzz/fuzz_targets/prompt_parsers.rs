#![no_main]

use dae_core::prompts::{parse_extract, parse_group, parse_interaction, parse_yes_no};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_yes_no(text);
    let _ = parse_interaction(text);
    let _ = parse_group(text);
    let _ = parse_extract(text);
});
