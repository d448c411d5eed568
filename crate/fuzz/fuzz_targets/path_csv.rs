#![no_main]
use hebm::PathRef;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(path) = PathRef::from_csv(text, 10.0) {
        let csv = path.to_csv();
        let again = PathRef::from_csv(&csv, 10.0).expect("own output parses");
        assert_eq!(csv, again.to_csv());
    }
});
