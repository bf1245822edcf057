#![no_main]

use drivestyle::rnn::{decode_checkpoint, encode_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = decode_checkpoint(data) {
        let bytes = encode_checkpoint(&ckpt).expect("decoded checkpoint encodes");
        assert_eq!(decode_checkpoint(&bytes).expect("re-decode"), ckpt);
    }
});
