use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};

use super::parse::{format_gps_line, parse_gps_text, ColumnLayout, LineStats};
use super::{Behaviour, DriverId, Road, Trajectory, DEFAULT_RAW_FILE};

/// Metadata carried by a trip folder name.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripTag {
    pub driver: DriverId,
    pub behaviour: Behaviour,
    pub road: Road,
    pub road_length_km: f64,
}

fn set_once<T: PartialEq + Copy>(slot: &mut Option<T>, value: T, name: &str) -> Result<()> {
    match slot {
        Some(prev) if *prev != value => Err(Error::UnrecognizedFolder(name.to_string())),
        _ => {
            *slot = Some(value);
            Ok(())
        }
    }
}

/// Extracts driver, behaviour, road and length tokens from a hyphen-separated
/// folder name, in any order. Unknown tokens are ignored; a required token
/// that is missing or repeated with a conflicting value is an error.
pub fn parse_trip_folder_name(name: &str) -> Result<TripTag> {
    let mut driver = None;
    let mut behaviour = None;
    let mut road = None;
    let mut length = None;
    for tok in name.split('-') {
        let upper = tok.trim().to_ascii_uppercase();
        match upper.as_str() {
            "NORMAL" => set_once(&mut behaviour, Behaviour::Normal, name)?,
            "DROWSY" => set_once(&mut behaviour, Behaviour::Drowsy, name)?,
            "AGGRESSIVE" => set_once(&mut behaviour, Behaviour::Aggressive, name)?,
            "MOTORWAY" => set_once(&mut road, Road::Motorway, name)?,
            "SECONDARY" => set_once(&mut road, Road::Secondary, name)?,
            _ => {
                if let Some(km) = upper.strip_suffix("KM") {
                    if !km.is_empty() && km.bytes().all(|b| b.is_ascii_digit()) {
                        let km: u32 = km.parse().map_err(|_| Error::UnrecognizedFolder(name.to_string()))?;
                        if km == 0 {
                            return Err(Error::UnrecognizedFolder(name.to_string()));
                        }
                        set_once(&mut length, km, name)?;
                    }
                } else if let Some(d) = upper.strip_prefix('D') {
                    if d.len() == 1 {
                        if let Ok(id) = d.parse::<u8>().map_err(|_| ()).and_then(|n| DriverId::new(n).map_err(|_| ())) {
                            set_once(&mut driver, id, name)?;
                        }
                    }
                }
            }
        }
    }
    match (driver, behaviour, road, length) {
        (Some(driver), Some(behaviour), Some(road), Some(km)) => {
            Ok(TripTag { driver, behaviour, road, road_length_km: f64::from(km) })
        }
        _ => Err(Error::UnrecognizedFolder(name.to_string())),
    }
}

#[derive(Debug, Clone)]
pub struct ScanOptions {
    /// Raw GPS file name looked up inside each trip folder.
    pub raw_file: String,
    /// Fail on the first bad line instead of skipping it.
    pub strict: bool,
    pub layout: ColumnLayout,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions { raw_file: DEFAULT_RAW_FILE.to_string(), strict: false, layout: ColumnLayout::default() }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScanReport {
    /// Sorted by `(driver, behaviour, road, name)`.
    pub trajectories: Vec<Trajectory>,
    pub lines: LineStats,
    /// Folders holding a raw file that were skipped, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

/// Collects every directory under `root` (inclusive of nested ones) that
/// contains the raw file.
fn candidate_dirs(root: &Path, raw_file: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if entry.file_type().map_err(|e| Error::io(&path, e))?.is_dir() {
            if path.join(raw_file).is_file() {
                out.push(path.clone());
            }
            candidate_dirs(&path, raw_file, out)?;
        }
    }
    Ok(())
}

/// Walks `root`, parsing every trip folder that holds the raw GPS file.
pub fn scan_dataset(root: &Path, opts: &ScanOptions) -> Result<ScanReport> {
    let mut dirs = Vec::new();
    candidate_dirs(root, &opts.raw_file, &mut dirs)?;
    dirs.sort();

    let parsed: Vec<(PathBuf, Result<(Trajectory, LineStats)>)> = dirs
        .into_par_iter()
        .map(|dir| {
            let res = load_trip(&dir, opts);
            (dir, res)
        })
        .collect();

    let mut report = ScanReport::default();
    for (dir, res) in parsed {
        match res {
            Ok((traj, stats)) => {
                report.lines.merge(&stats);
                report.trajectories.push(traj);
            }
            Err(e @ (Error::MalformedLine(_) | Error::RangeViolation(_))) if opts.strict => return Err(e),
            Err(e @ Error::IoFailure { .. }) => return Err(e),
            Err(e) => {
                warn!("skipping {}: {e}", dir.display());
                report.skipped.push((dir, e.to_string()));
            }
        }
    }
    if report.trajectories.is_empty() {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }
    report.trajectories.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    Ok(report)
}

fn load_trip(dir: &Path, opts: &ScanOptions) -> Result<(Trajectory, LineStats)> {
    let name =
        dir.file_name().and_then(|n| n.to_str()).ok_or_else(|| Error::UnrecognizedFolder(dir.display().to_string()))?;
    let tag = parse_trip_folder_name(name)?;
    let path = dir.join(&opts.raw_file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let text = String::from_utf8_lossy(&bytes);
    let (records, stats) = parse_gps_text(&text, &opts.layout, opts.strict)?;
    let traj = Trajectory::new(name, tag.driver, tag.behaviour, tag.road, tag.road_length_km, records)?;
    Ok((traj, stats))
}

/// Writes trajectories in the layout `scan_dataset` reads: one folder per
/// trajectory (named after it) holding the raw file.
pub fn write_dataset(root: &Path, trajectories: &[Trajectory], raw_file: &str) -> Result<()> {
    for traj in trajectories {
        let dir = root.join(&traj.name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut body = String::with_capacity(traj.records.len() * 64);
        for r in &traj.records {
            body.push_str(&format_gps_line(r));
            body.push('\n');
        }
        let path = dir.join(raw_file);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folder_with_timestamp_prefix() {
        let tag = parse_trip_folder_name("20151110175712-16km-D1-NORMAL-SECONDARY").unwrap();
        assert_eq!(tag.driver, DriverId::new(1).unwrap());
        assert_eq!(tag.behaviour, Behaviour::Normal);
        assert_eq!(tag.road, Road::Secondary);
        assert_eq!(tag.road_length_km, 16.0);
    }

    #[test]
    fn folder_tokens_in_any_order() {
        let tag = parse_trip_folder_name("25km-D5-AGGRESSIVE-MOTORWAY").unwrap();
        assert_eq!(tag.driver, DriverId::new(5).unwrap());
        assert_eq!(tag.behaviour, Behaviour::Aggressive);
        assert_eq!(tag.road, Road::Motorway);
        assert_eq!(tag.road_length_km, 25.0);
        let shuffled = parse_trip_folder_name("motorway-aggressive-d5-25km").unwrap();
        assert_eq!(tag, shuffled);
    }

    #[test]
    fn folder_missing_tokens() {
        assert!(matches!(parse_trip_folder_name("20151110175712-16km-NORMAL"), Err(Error::UnrecognizedFolder(_))));
    }

    #[test]
    fn folder_conflicting_tokens() {
        assert!(parse_trip_folder_name("16km-D1-D2-NORMAL-SECONDARY").is_err());
        assert!(parse_trip_folder_name("16km-D1-NORMAL-AGGRESSIVE-SECONDARY").is_err());
        assert!(parse_trip_folder_name("16km-25km-D1-NORMAL-SECONDARY").is_err());
        // a repeated token with the same value is not ambiguous
        assert!(parse_trip_folder_name("16km-D1-D1-NORMAL-SECONDARY").is_ok());
    }
}
