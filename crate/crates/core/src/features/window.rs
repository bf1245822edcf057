use crate::error::{Error, Result};
use crate::ingest::DriverId;
use crate::matrix::Matrix;

use super::FeatureWindow;

/// Slides a `length`-row window over `series` with step `stride`.
///
/// Windows start at `0, stride, 2·stride, …` while they fit, giving
/// `⌊(T − length) / stride⌋ + 1` windows when `T ≥ length` and none otherwise.
pub fn make_windows(
    series: &Matrix,
    label: u8,
    driver: DriverId,
    trajectory: u32,
    length: usize,
    stride: usize,
) -> Result<Vec<FeatureWindow>> {
    if length == 0 || stride == 0 {
        return Err(Error::InvalidConfig(format!("window length {length} and stride {stride} must be ≥ 1")));
    }
    let t = series.rows();
    if t < length {
        return Ok(Vec::new());
    }
    let windows = (0..=t - length)
        .step_by(stride)
        .map(|start| FeatureWindow {
            values: series.slice_rows(start, length),
            label,
            driver,
            trajectory,
            start: u32::try_from(start).expect("trajectory shorter than 2^32 samples"),
        })
        .collect();
    Ok(windows)
}
