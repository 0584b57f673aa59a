#![no_main]
use c3gnn::encoder::{decode_checkpoint, encode_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(params) = decode_checkpoint(data) {
        assert_eq!(encode_checkpoint(&params), data);
    }
});
