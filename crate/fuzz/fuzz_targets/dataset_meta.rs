#![no_main]
use hebm::datagen::parse_metadata;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = parse_metadata(text);
});
