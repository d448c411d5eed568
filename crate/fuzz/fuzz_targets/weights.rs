#![no_main]
use hebm::slipnet::NetworkWeights;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(w) = NetworkWeights::from_bytes(data) {
        let bytes = w.to_bytes();
        assert_eq!(NetworkWeights::from_bytes(&bytes).expect("own output decodes"), w);
    }
});
