#![no_main]
use hebm::bench::RunRecord;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(record) = RunRecord::from_text(text) {
        let dumped = record.to_text();
        assert_eq!(RunRecord::from_text(&dumped).expect("own output parses").to_text(), dumped);
    }
});
