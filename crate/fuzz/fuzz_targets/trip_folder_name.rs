#![no_main]

use drivestyle::ingest::parse_trip_folder_name;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(name) = std::str::from_utf8(data) {
        let _ = parse_trip_folder_name(name);
    }
});
