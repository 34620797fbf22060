#![no_main]

use dae_core::backend::sim::{SimBackend, SimScenario};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(scenario) = SimScenario::from_json_str(text) {
        // A scenario that validates must build a backend.
        let merged = SimScenario::merge(vec![scenario.clone()]).expect("merge of one valid scenario");
        assert_eq!(merged.responses.len(), scenario.responses.len());
        SimBackend::new(scenario).expect("validated scenario");
    }
});
