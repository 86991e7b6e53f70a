#![no_main]
use libfuzzer_sys::fuzz_target;
use twin_htp::numerics::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = decode_checkpoint(data) {
        assert_eq!(decode_checkpoint(&encode_checkpoint(&c)).unwrap(), c);
    }
});
