#![no_main]
use hebm::refsim::{log_from_csv, log_to_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(rows) = log_from_csv(text) {
        let csv = log_to_csv(&rows);
        assert_eq!(log_to_csv(&log_from_csv(&csv).expect("own output parses")), csv);
    }
});
