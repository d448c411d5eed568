#![no_main]
use hebm::config::Config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(config) = Config::parse(text) {
        let dumped = config.to_text();
        let again = Config::parse(&dumped).expect("own output parses");
        assert_eq!(dumped, again.to_text());
    }
});
