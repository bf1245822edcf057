#![no_main]

use drivestyle::features::{decode_windows, encode_windows};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(windows) = decode_windows(data) {
        let bytes = encode_windows(&windows).expect("decoded windows encode");
        assert_eq!(decode_windows(&bytes).expect("re-decode"), windows);
    }
});
