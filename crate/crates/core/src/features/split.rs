use std::collections::BTreeSet;
use std::fmt;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::DriverId;

use super::FeatureWindow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Protocol {
    /// Shuffle every window, then split 70 / 15 / 15.
    Seen,
    /// Hold out one driver entirely as the test set; split the rest 80 / 20.
    UnseenDriver(DriverId),
}

impl Protocol {
    pub fn label(self) -> &'static str {
        match self {
            Protocol::Seen => "Seen",
            Protocol::UnseenDriver(_) => "Unseen",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::Seen => f.write_str("seen"),
            Protocol::UnseenDriver(d) => write!(f, "unseen({d})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitBundle {
    pub train: Vec<FeatureWindow>,
    pub validation: Vec<FeatureWindow>,
    pub test: Vec<FeatureWindow>,
    pub protocol: Protocol,
    pub seed: u64,
}

impl SplitBundle {
    /// Checks pairwise disjointness and, for the unseen-driver protocol,
    /// that the held-out driver never reaches train or validation.
    pub fn verify(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for w in self.train.iter().chain(&self.validation).chain(&self.test) {
            if !seen.insert(w.key()) {
                return Err(Error::ShapeMismatch(format!(
                    "window (trajectory {}, start {}) appears in more than one split",
                    w.trajectory, w.start
                )));
            }
        }
        if let Protocol::UnseenDriver(held) = self.protocol {
            if self.train.iter().chain(&self.validation).any(|w| w.driver == held) {
                return Err(Error::ShapeMismatch(format!("held-out driver {held} leaked into training data")));
            }
            if self.test.iter().any(|w| w.driver != held) {
                return Err(Error::ShapeMismatch(format!("test set holds drivers other than {held}")));
            }
        }
        Ok(())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shuffles by `seed` and splits `⌊0.70·N⌋ / ⌊0.15·N⌋ / remainder`.
pub fn split_seen(mut windows: Vec<FeatureWindow>, seed: u64) -> Result<SplitBundle> {
    let n = windows.len();
    if n < 3 {
        return Err(Error::TooFewWindows(n));
    }
    windows.shuffle(&mut rng(seed));
    let n_train = n * 70 / 100;
    let n_val = n * 15 / 100;
    let test = windows.split_off(n_train + n_val);
    let validation = windows.split_off(n_train);
    Ok(SplitBundle { train: windows, validation, test, protocol: Protocol::Seen, seed })
}

/// Like [`split_seen`] but assigns whole trajectories to a split, so
/// overlapping windows of one trip never straddle train and test.
/// Proportions are approximate because trajectories have unequal lengths.
pub fn split_seen_by_trajectory(windows: Vec<FeatureWindow>, seed: u64) -> Result<SplitBundle> {
    let ids: BTreeSet<u32> = windows.iter().map(|w| w.trajectory).collect();
    let mut ids: Vec<u32> = ids.into_iter().collect();
    if ids.len() < 3 {
        return Err(Error::TooFewWindows(ids.len()));
    }
    ids.shuffle(&mut rng(seed));
    let n_train = (ids.len() * 70 / 100).max(1);
    let n_val = (ids.len() * 15 / 100).max(1);
    let train_ids: BTreeSet<u32> = ids[..n_train].iter().copied().collect();
    let val_ids: BTreeSet<u32> = ids[n_train..n_train + n_val].iter().copied().collect();
    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for w in windows {
        if train_ids.contains(&w.trajectory) {
            train.push(w);
        } else if val_ids.contains(&w.trajectory) {
            validation.push(w);
        } else {
            test.push(w);
        }
    }
    let mut r = rng(seed.wrapping_add(1));
    train.shuffle(&mut r);
    validation.shuffle(&mut r);
    test.shuffle(&mut r);
    Ok(SplitBundle { train, validation, test, protocol: Protocol::Seen, seed })
}

/// All windows of `held_out` become the test set; the rest are shuffled and
/// split `⌊0.80·M⌋ / remainder` into train and validation.
pub fn split_unseen(windows: Vec<FeatureWindow>, held_out: DriverId, seed: u64) -> Result<SplitBundle> {
    let (test, mut rest): (Vec<_>, Vec<_>) = windows.into_iter().partition(|w| w.driver == held_out);
    if test.is_empty() {
        return Err(Error::MissingDriver(held_out.to_string()));
    }
    if rest.len() < 2 {
        return Err(Error::EmptySplit("training drivers"));
    }
    rest.shuffle(&mut rng(seed));
    let n_train = rest.len() * 80 / 100;
    let validation = rest.split_off(n_train);
    Ok(SplitBundle { train: rest, validation, test, protocol: Protocol::UnseenDriver(held_out), seed })
}

fn count_positive(windows: &[FeatureWindow]) -> usize {
    windows.iter().filter(|w| w.label == 1).count()
}

/// Duplicates minority-class windows (sampling with replacement) until both
/// classes have equal counts, then reshuffles.
pub fn oversample_minority(mut windows: Vec<FeatureWindow>, seed: u64) -> Result<Vec<FeatureWindow>> {
    let pos = count_positive(&windows);
    let neg = windows.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass(windows.len()));
    }
    if pos == neg {
        return Ok(windows);
    }
    let minority_label = u8::from(pos < neg);
    let deficit = pos.abs_diff(neg);
    let minority: Vec<FeatureWindow> = windows.iter().filter(|w| w.label == minority_label).cloned().collect();
    let mut r = rng(seed);
    windows.reserve(deficit);
    for _ in 0..deficit {
        windows.push(minority.choose(&mut r).expect("minority is non-empty").clone());
    }
    windows.shuffle(&mut r);
    Ok(windows)
}

/// Inverse-frequency weights `N / (2·N_c)` for classes 0 and 1.
pub fn class_weights(labels: &[u8]) -> Result<(f64, f64)> {
    let n = labels.len();
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = n - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass(n));
    }
    let n = n as f64;
    Ok((n / (2.0 * neg as f64), n / (2.0 * pos as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use proptest::prelude::*;

    fn windows(spec: &[(u8, u8, usize)]) -> Vec<FeatureWindow> {
        // (driver, label, count)
        let mut out = Vec::new();
        for (traj, &(driver, label, count)) in spec.iter().enumerate() {
            for start in 0..count {
                out.push(FeatureWindow {
                    values: Matrix::zeros(1, 1),
                    label,
                    driver: DriverId::new(driver).unwrap(),
                    trajectory: traj as u32,
                    start: start as u32,
                });
            }
        }
        out
    }

    fn d(n: u8) -> DriverId {
        DriverId::new(n).unwrap()
    }

    #[test]
    fn seen_sizes() {
        let b = split_seen(windows(&[(1, 0, 100)]), 3).unwrap();
        assert_eq!((b.train.len(), b.validation.len(), b.test.len()), (70, 15, 15));
        let b = split_seen(windows(&[(1, 0, 10)]), 3).unwrap();
        assert_eq!((b.train.len(), b.validation.len(), b.test.len()), (7, 1, 2));
        assert!(matches!(split_seen(windows(&[(1, 0, 2)]), 3), Err(Error::TooFewWindows(2))));
    }

    #[test]
    fn seen_is_deterministic() {
        let a = split_seen(windows(&[(1, 0, 50), (2, 1, 50)]), 9).unwrap();
        let b = split_seen(windows(&[(1, 0, 50), (2, 1, 50)]), 9).unwrap();
        assert_eq!(a, b);
        let c = split_seen(windows(&[(1, 0, 50), (2, 1, 50)]), 10).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn unseen_sizes_and_exclusion() {
        let b = split_unseen(windows(&[(1, 0, 250), (2, 1, 250), (5, 0, 60), (5, 1, 40)]), d(5), 1).unwrap();
        assert_eq!((b.train.len(), b.validation.len(), b.test.len()), (400, 100, 100));
        assert!(b.train.iter().chain(&b.validation).all(|w| w.driver != d(5)));
        assert!(b.test.iter().all(|w| w.driver == d(5)));
        b.verify().unwrap();
    }

    #[test]
    fn unseen_missing_driver() {
        assert!(matches!(split_unseen(windows(&[(1, 0, 10)]), d(5), 1), Err(Error::MissingDriver(_))));
        assert!(split_unseen(windows(&[(5, 0, 10)]), d(5), 1).is_err());
    }

    #[test]
    fn trajectory_guard_keeps_trips_whole() {
        let spec: Vec<(u8, u8, usize)> = (0..20).map(|i| (1 + (i % 6) as u8, (i % 2) as u8, 10)).collect();
        let b = split_seen_by_trajectory(windows(&spec), 4).unwrap();
        b.verify().unwrap();
        let ids = |v: &[FeatureWindow]| v.iter().map(|w| w.trajectory).collect::<BTreeSet<_>>();
        assert!(ids(&b.train).is_disjoint(&ids(&b.test)));
        assert!(ids(&b.train).is_disjoint(&ids(&b.validation)));
        assert_eq!(b.train.len() + b.validation.len() + b.test.len(), 200);
    }

    #[test]
    fn oversampling_balances() {
        let out = oversample_minority(windows(&[(1, 0, 90), (1, 1, 10)]), 5).unwrap();
        assert_eq!(count_positive(&out), 90);
        assert_eq!(out.len(), 180);
        let again = oversample_minority(windows(&[(1, 0, 90), (1, 1, 10)]), 5).unwrap();
        assert_eq!(out, again);
        let balanced = oversample_minority(windows(&[(1, 0, 10), (1, 1, 10)]), 5).unwrap();
        assert_eq!(balanced.len(), 20);
        assert!(matches!(oversample_minority(windows(&[(1, 0, 10)]), 5), Err(Error::SingleClass(10))));
    }

    #[test]
    fn weights() {
        let balanced: Vec<u8> = [0u8, 1].repeat(500);
        assert_eq!(class_weights(&balanced).unwrap(), (1.0, 1.0));
        let mut skewed = vec![0u8; 900];
        skewed.extend(vec![1u8; 100]);
        let (w0, w1) = class_weights(&skewed).unwrap();
        // 1000 / 1800 and 1000 / 200
        assert!((w0 - 0.555_555_555_6).abs() < 1e-9);
        assert!((w1 - 5.0).abs() < 1e-12);
        assert!(class_weights(&[1, 1]).is_err());
    }

    proptest! {
        #[test]
        fn seen_split_partitions_input(n in 3usize..300, seed in any::<u64>()) {
            let b = split_seen(windows(&[(1, 0, n)]), seed).unwrap();
            prop_assert_eq!(b.train.len() + b.validation.len() + b.test.len(), n);
            prop_assert!(b.verify().is_ok());
        }

        #[test]
        fn weights_reconstruct_total(neg in 1usize..500, pos in 1usize..500) {
            let mut labels = vec![0u8; neg];
            labels.extend(vec![1u8; pos]);
            let (w0, w1) = class_weights(&labels).unwrap();
            prop_assert!((w0 * neg as f64 + w1 * pos as f64 - (neg + pos) as f64).abs() < 1e-9);
        }
    }
}
