//! Binary windows file.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! offset  size        field
//! 0       8           magic "DSWINDOW"
//! 8       4   u32     version (1)
//! 12      4   u32     W, timesteps per window
//! 16      4   u32     F, features per timestep
//! 20      8   u64     N, window count
//! 28      N   u8      labels (0 or 1)
//! ..      N   u8      driver numbers (1..=6)
//! ..      4N  u32     source trajectory ids
//! ..      4N  u32     start offsets
//! ..      8NWF f64    values, window-major then timestep then feature
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::DriverId;
use crate::matrix::Matrix;

use super::FeatureWindow;

const MAGIC: &[u8; 8] = b"DSWINDOW";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 28;

fn corrupt(reason: impl Into<String>) -> Error {
    Error::Format { kind: "windows", reason: reason.into() }
}

pub fn encode_windows(windows: &[FeatureWindow]) -> Result<Vec<u8>> {
    let (w, f) = windows.first().map_or((0, 0), |x| x.values.shape());
    if windows.iter().any(|x| x.values.shape() != (w, f)) {
        return Err(Error::ShapeMismatch("windows have differing shapes".into()));
    }
    let n = windows.len();
    let mut out = Vec::with_capacity(HEADER_LEN + n * (10 + 8 * w * f));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(w).map_err(|_| corrupt("W too large"))?.to_le_bytes());
    out.extend_from_slice(&u32::try_from(f).map_err(|_| corrupt("F too large"))?.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend(windows.iter().map(|x| x.label));
    out.extend(windows.iter().map(|x| x.driver.number()));
    for x in windows {
        out.extend_from_slice(&x.trajectory.to_le_bytes());
    }
    for x in windows {
        out.extend_from_slice(&x.start.to_le_bytes());
    }
    for x in windows {
        for v in x.values.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

/// Decodes a windows file, rejecting truncated, oversized or invalid input
/// before allocating.
pub fn decode_windows(bytes: &[u8]) -> Result<Vec<FeatureWindow>> {
    if bytes.len() < HEADER_LEN {
        return Err(corrupt("truncated header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32_at(bytes, 8);
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let w = u32_at(bytes, 12) as usize;
    let f = u32_at(bytes, 16) as usize;
    let n = u64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes"));
    let n = usize::try_from(n).map_err(|_| corrupt("window count overflows"))?;
    let cells = w.checked_mul(f).ok_or_else(|| corrupt("W × F overflows"))?;
    let per_window = cells.checked_mul(8).and_then(|v| v.checked_add(10)).ok_or_else(|| corrupt("size overflows"))?;
    let expected =
        n.checked_mul(per_window).and_then(|v| v.checked_add(HEADER_LEN)).ok_or_else(|| corrupt("size overflows"))?;
    if bytes.len() != expected {
        return Err(corrupt(format!("expected {expected} bytes, found {}", bytes.len())));
    }

    let labels = &bytes[HEADER_LEN..HEADER_LEN + n];
    let drivers = &bytes[HEADER_LEN + n..HEADER_LEN + 2 * n];
    let traj_at = HEADER_LEN + 2 * n;
    let start_at = traj_at + 4 * n;
    let values_at = start_at + 4 * n;

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let label = labels[i];
        if label > 1 {
            return Err(corrupt(format!("label {label} at window {i}")));
        }
        let driver = DriverId::new(drivers[i]).map_err(|_| corrupt(format!("driver {} at window {i}", drivers[i])))?;
        let base = values_at + i * cells * 8;
        let values: Vec<f64> = bytes[base..base + cells * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(corrupt(format!("non-finite value in window {i}")));
        }
        out.push(FeatureWindow {
            values: Matrix::from_vec(w, f, values)?,
            label,
            driver,
            trajectory: u32_at(bytes, traj_at + 4 * i),
            start: u32_at(bytes, start_at + 4 * i),
        });
    }
    Ok(out)
}

pub fn write_windows_file(path: &Path, windows: &[FeatureWindow]) -> Result<()> {
    let bytes = encode_windows(windows)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_windows_file(path: &Path) -> Result<Vec<FeatureWindow>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_windows(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(n: usize, w: usize, f: usize) -> Vec<FeatureWindow> {
        (0..n)
            .map(|i| FeatureWindow {
                values: Matrix::from_vec(w, f, (0..w * f).map(|k| (i * 31 + k) as f64 * 0.25 - 1.0).collect()).unwrap(),
                label: (i % 2) as u8,
                driver: DriverId::new(1 + (i % 6) as u8).unwrap(),
                trajectory: i as u32 / 3,
                start: i as u32,
            })
            .collect()
    }

    #[test]
    fn header_layout() {
        let bytes = encode_windows(&sample(2, 3, 4)).unwrap();
        assert_eq!(&bytes[..8], b"DSWINDOW");
        assert_eq!(u32_at(&bytes, 12), 3);
        assert_eq!(u32_at(&bytes, 16), 4);
        assert_eq!(bytes.len(), 28 + 2 * (10 + 8 * 12));
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_windows(&sample(2, 3, 4)).unwrap();
        assert!(decode_windows(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_windows(&bad).is_err());
        let mut bad = bytes.clone();
        bad[28] = 7; // label
        assert!(decode_windows(&bad).is_err());
        let mut bad = bytes;
        bad[20..28].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_windows(&bad).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(n in 0usize..6, w in 1usize..5, f in 1usize..4) {
            let ws = sample(n, w, f);
            prop_assert_eq!(decode_windows(&encode_windows(&ws).unwrap()).unwrap(), ws);
        }
    }
}
