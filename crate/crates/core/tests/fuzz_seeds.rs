//! Replays the checked-in fuzz corpus through each decoder.

use std::path::PathBuf;

use drivestyle::bench::parse_grid_spec;
use drivestyle::features::{decode_windows, encode_windows};
use drivestyle::ingest::{parse_gps_line, parse_gps_text, parse_trip_folder_name, ColumnLayout};
use drivestyle::rnn::{decode_checkpoint, encode_checkpoint};

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut paths: Vec<_> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    assert!(!paths.is_empty(), "no seeds in {}", dir.display());
    paths.iter().map(|p| std::fs::read(p).unwrap()).collect()
}

#[test]
fn text_seeds() {
    let lines = seeds("gps_line");
    assert!(parse_gps_line(std::str::from_utf8(&lines[0]).unwrap().trim()).is_ok());
    for s in &lines {
        let _ = parse_gps_line(&String::from_utf8_lossy(s));
    }
    for s in seeds("gps_text") {
        assert!(parse_gps_text(&String::from_utf8_lossy(&s), &ColumnLayout::default(), false).is_ok());
    }
    let names = seeds("trip_folder_name");
    assert!(parse_trip_folder_name(std::str::from_utf8(&names[0]).unwrap()).is_ok());
    assert!(parse_trip_folder_name(std::str::from_utf8(names.last().unwrap()).unwrap()).is_err());
    for s in seeds("config") {
        assert!(!parse_grid_spec(std::str::from_utf8(&s).unwrap()).unwrap().experiments().is_empty());
    }
}

#[test]
fn binary_seeds_round_trip() {
    for s in seeds("windows_file") {
        let w = decode_windows(&s).unwrap();
        assert_eq!(encode_windows(&w).unwrap(), s);
    }
    for s in seeds("checkpoint") {
        let c = decode_checkpoint(&s).unwrap();
        assert_eq!(encode_checkpoint(&c).unwrap(), s);
    }
}
