//! Raw GPS trip ingestion.
//!
//! A dataset is a directory tree of trip folders. Each folder name carries
//! the driver, behaviour, road and road length as hyphen-separated tokens,
//! and the folder holds a whitespace-delimited text file with one 1 Hz GPS
//! sample per line.

mod parse;
mod scan;
mod synth;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use parse::{format_gps_line, parse_gps_line, parse_gps_line_with, parse_gps_text, ColumnLayout, LineStats};
pub use scan::{parse_trip_folder_name, scan_dataset, write_dataset, ScanOptions, ScanReport, TripTag};
pub use synth::{generate_synthetic_dataset, SynthSpec};

/// Default name of the raw GPS file inside each trip folder.
pub const DEFAULT_RAW_FILE: &str = "RAW_GPS.txt";

/// Driver identifier, `D1` through `D6`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DriverId(u8);

impl DriverId {
    pub const MAX: u8 = 6;

    pub fn new(n: u8) -> Result<Self> {
        if (1..=Self::MAX).contains(&n) {
            Ok(DriverId(n))
        } else {
            Err(Error::RangeViolation(format!("driver number {n} not in 1..=6")))
        }
    }

    pub fn number(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = DriverId> {
        (1..=Self::MAX).map(DriverId)
    }
}

impl fmt::Display for DriverId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "D{}", self.0)
    }
}

impl FromStr for DriverId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s
            .strip_prefix('D')
            .or_else(|| s.strip_prefix('d'))
            .ok_or_else(|| Error::InvalidConfig(format!("driver id `{s}` must look like D1..D6")))?;
        let n: u8 =
            digits.parse().map_err(|_| Error::InvalidConfig(format!("driver id `{s}` must look like D1..D6")))?;
        DriverId::new(n).map_err(|_| Error::InvalidConfig(format!("driver id `{s}` must look like D1..D6")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Behaviour {
    Normal,
    Drowsy,
    Aggressive,
}

impl Behaviour {
    pub const ALL: [Behaviour; 3] = [Behaviour::Normal, Behaviour::Drowsy, Behaviour::Aggressive];

    pub fn token(self) -> &'static str {
        match self {
            Behaviour::Normal => "NORMAL",
            Behaviour::Drowsy => "DROWSY",
            Behaviour::Aggressive => "AGGRESSIVE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Road {
    Motorway,
    Secondary,
}

impl Road {
    pub fn speed_limit_kmh(self) -> f64 {
        match self {
            Road::Motorway => 120.0,
            Road::Secondary => 90.0,
        }
    }

    /// Nominal length of the recorded route.
    pub fn nominal_length_km(self) -> f64 {
        match self {
            Road::Motorway => 25.0,
            Road::Secondary => 16.0,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Road::Motorway => "MOTORWAY",
            Road::Secondary => "SECONDARY",
        }
    }
}

/// One 1 Hz GPS sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpsRecord {
    pub timestamp_s: f64,
    pub speed_kmh: f64,
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub alt_m: f64,
    pub vacc_m: f64,
    pub hacc_m: f64,
}

impl GpsRecord {
    pub fn validate(&self) -> Result<()> {
        let all = [self.timestamp_s, self.speed_kmh, self.lat_deg, self.lon_deg, self.alt_m, self.vacc_m, self.hacc_m];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::RangeViolation("non-finite field".into()));
        }
        if self.timestamp_s < 0.0 {
            return Err(Error::RangeViolation(format!("timestamp {} < 0", self.timestamp_s)));
        }
        if self.speed_kmh < 0.0 {
            return Err(Error::RangeViolation(format!("speed {} < 0", self.speed_kmh)));
        }
        if !(-90.0..=90.0).contains(&self.lat_deg) {
            return Err(Error::RangeViolation(format!("latitude {} outside [-90, 90]", self.lat_deg)));
        }
        if !(-180.0..=180.0).contains(&self.lon_deg) {
            return Err(Error::RangeViolation(format!("longitude {} outside [-180, 180]", self.lon_deg)));
        }
        if self.vacc_m < 0.0 || self.hacc_m < 0.0 {
            return Err(Error::RangeViolation("negative accuracy".into()));
        }
        Ok(())
    }
}

/// One recorded trip.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Trip folder name; unique within a dataset.
    pub name: String,
    pub driver: DriverId,
    pub behaviour: Behaviour,
    pub road: Road,
    pub road_length_km: f64,
    pub records: Vec<GpsRecord>,
}

impl Trajectory {
    /// Builds a trajectory, checking record ordering and road metadata.
    pub fn new(
        name: impl Into<String>,
        driver: DriverId,
        behaviour: Behaviour,
        road: Road,
        road_length_km: f64,
        records: Vec<GpsRecord>,
    ) -> Result<Self> {
        let traj = Trajectory { name: name.into(), driver, behaviour, road, road_length_km, records };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::RangeViolation(format!("trajectory {} has no records", self.name)));
        }
        if !(self.road_length_km.is_finite() && self.road_length_km > 0.0) {
            return Err(Error::RangeViolation(format!("road length {} must be positive", self.road_length_km)));
        }
        for r in &self.records {
            r.validate()?;
        }
        if let Some(w) = self.records.windows(2).find(|w| w[1].timestamp_s <= w[0].timestamp_s) {
            return Err(Error::RangeViolation(format!(
                "timestamps not strictly increasing in {} ({} then {})",
                self.name, w[0].timestamp_s, w[1].timestamp_s
            )));
        }
        Ok(())
    }

    pub fn speed_limit_kmh(&self) -> f64 {
        self.road.speed_limit_kmh()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub(crate) fn sort_key(&self) -> (DriverId, Behaviour, Road, &str) {
        (self.driver, self.behaviour, self.road, &self.name)
    }
}
