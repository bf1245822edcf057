#![no_main]

use drivestyle::ingest::{format_gps_line, parse_gps_line};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else { return };
    if let Ok(rec) = parse_gps_line(line) {
        let again = parse_gps_line(&format_gps_line(&rec)).expect("formatted record parses");
        assert_eq!(rec, again);
    }
});
