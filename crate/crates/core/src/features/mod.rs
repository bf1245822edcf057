//! Feature assembly, windowing, normalization and split protocols.

mod normalize;
mod split;
mod tensor_file;
mod window;

use crate::error::Result;
use crate::ingest::{Behaviour, DriverId, Trajectory};
use crate::matrix::Matrix;

pub use normalize::{apply_normalizer, fit_normalizer, NormMethod, NormStats};
pub use split::{
    class_weights, oversample_minority, split_seen, split_seen_by_trajectory, split_unseen, Protocol, SplitBundle,
};
pub use tensor_file::{decode_windows, encode_windows, read_windows_file, write_windows_file};
pub use window::make_windows;

/// Number of features per timestep without the speed-limit feature.
pub const BASE_FEATURES: usize = 8;

pub const FEATURE_NAMES: [&str; 9] =
    ["speed", "lat", "lon", "alt", "d_speed", "d_lat", "d_lon", "d_alt", "limit_minus_speed"];

/// A labelled `W × F` slice of a trajectory's feature series.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindow {
    pub values: Matrix,
    /// 1 = aggressive, 0 = non-aggressive.
    pub label: u8,
    pub driver: DriverId,
    /// Index of the source trajectory in its (sorted) dataset.
    pub trajectory: u32,
    pub start: u32,
}

impl FeatureWindow {
    pub fn key(&self) -> (u32, u32) {
        (self.trajectory, self.start)
    }
}

/// Aggressive maps to 1; normal and drowsy driving map to 0.
pub fn binary_label(behaviour: Behaviour) -> u8 {
    match behaviour {
        Behaviour::Aggressive => 1,
        Behaviour::Normal | Behaviour::Drowsy => 0,
    }
}

/// Per-timestep `(Δspeed, Δlat, Δlon, Δalt)`; the first timestep is all zero.
pub fn compute_deltas(traj: &Trajectory) -> Vec<[f64; 4]> {
    let mut out = Vec::with_capacity(traj.records.len());
    let mut prev = None;
    for r in &traj.records {
        let cur = [r.speed_kmh, r.lat_deg, r.lon_deg, r.alt_m];
        let d = match prev {
            None => [0.0; 4],
            Some(p) => {
                let p: [f64; 4] = p;
                [cur[0] - p[0], cur[1] - p[1], cur[2] - p[2], cur[3] - p[3]]
            }
        };
        out.push(d);
        prev = Some(cur);
    }
    out
}

/// Builds the `T × F` series with columns
/// `[speed, lat, lon, alt, Δspeed, Δlat, Δlon, Δalt]`, plus
/// `limit − speed` when `include_speed_limit` is set.
pub fn assemble_feature_series(traj: &Trajectory, include_speed_limit: bool) -> Matrix {
    let f = feature_count(include_speed_limit);
    let limit = traj.speed_limit_kmh();
    let deltas = compute_deltas(traj);
    let mut m = Matrix::zeros(traj.records.len(), f);
    for (t, (r, d)) in traj.records.iter().zip(&deltas).enumerate() {
        let row = m.row_mut(t);
        row[..4].copy_from_slice(&[r.speed_kmh, r.lat_deg, r.lon_deg, r.alt_m]);
        row[4..8].copy_from_slice(d);
        if include_speed_limit {
            row[8] = limit - r.speed_kmh;
        }
    }
    m
}

pub fn feature_count(include_speed_limit: bool) -> usize {
    BASE_FEATURES + usize::from(include_speed_limit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureConfig {
    pub window_length: usize,
    pub stride: usize,
    pub include_speed_limit: bool,
    /// Drop drowsy trips instead of labelling them 0.
    pub exclude_drowsy: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { window_length: 120, stride: 1, include_speed_limit: false, exclude_drowsy: false }
    }
}

#[derive(Debug, Clone, Default)]
pub struct WindowSet {
    pub windows: Vec<FeatureWindow>,
    /// Trajectories shorter than the window length (no windows emitted).
    pub short_trajectories: usize,
    pub excluded_trajectories: usize,
}

/// Runs feature assembly and windowing over every trajectory, in order.
pub fn build_windows(trajectories: &[Trajectory], cfg: &FeatureConfig) -> Result<WindowSet> {
    let mut set = WindowSet::default();
    for (idx, traj) in trajectories.iter().enumerate() {
        if cfg.exclude_drowsy && traj.behaviour == Behaviour::Drowsy {
            set.excluded_trajectories += 1;
            continue;
        }
        let series = assemble_feature_series(traj, cfg.include_speed_limit);
        let trajectory = u32::try_from(idx).expect("fewer than 2^32 trajectories");
        let windows = make_windows(
            &series,
            binary_label(traj.behaviour),
            traj.driver,
            trajectory,
            cfg.window_length,
            cfg.stride,
        )?;
        if windows.is_empty() {
            set.short_trajectories += 1;
        }
        set.windows.extend(windows);
    }
    Ok(set)
}
