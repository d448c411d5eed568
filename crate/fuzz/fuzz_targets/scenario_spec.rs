#![no_main]
use hebm::config::ScenarioSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(spec) = ScenarioSpec::parse(text) {
        let shown = spec.to_string();
        assert_eq!(ScenarioSpec::parse(&shown).expect("own output parses").to_string(), shown);
        let _ = spec.build(30.0);
    }
});
