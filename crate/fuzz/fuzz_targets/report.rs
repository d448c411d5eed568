#![no_main]
use hebm::bench::{compare_report, parse_report};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(rows) = parse_report(text) {
        let csv = compare_report(&rows);
        assert_eq!(compare_report(&parse_report(&csv).expect("own output parses")), csv);
    }
});
