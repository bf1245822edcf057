#![no_main]

use drivestyle::ingest::{parse_gps_text, ColumnLayout};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    let layout = ColumnLayout::default();
    if let Ok((records, stats)) = parse_gps_text(&text, &layout, false) {
        assert!(records.len() <= stats.lines);
        assert!(records.windows(2).all(|p| p[0].timestamp_s < p[1].timestamp_s));
    }
    let _ = parse_gps_text(&text, &layout, true);
});
