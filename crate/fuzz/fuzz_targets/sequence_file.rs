#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(seq) = twin_htp::data::decode_sequence(data) {
        // anything accepted must survive a round trip
        let again = twin_htp::data::decode_sequence(&twin_htp::data::encode_sequence(&seq)).unwrap();
        assert_eq!(again, seq);
    }
});
