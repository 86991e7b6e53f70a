#![no_main]
use libfuzzer_sys::fuzz_target;
use twin_htp::encoders::{decode_vision_features, encode_vision_features};

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = decode_vision_features(data) {
        assert_eq!(decode_vision_features(&encode_vision_features(&p)).unwrap(), p);
    }
});
