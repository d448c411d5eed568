#![no_main]
use hebm::datagen::Dataset;
use hebm::slipnet::Normalizer;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(ds) = Dataset::from_csv(text, Normalizer::default(), 0) {
        let csv = ds.to_csv();
        let again = Dataset::from_csv(&csv, Normalizer::default(), 0).expect("own output parses");
        assert_eq!(csv, again.to_csv());
        let _ = ds.windows();
    }
});
