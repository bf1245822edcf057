use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::FeatureWindow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NormMethod {
    /// `x' = (x − min) / (max − min)`
    MinMax,
    /// `x' = (x − μ) / σ`
    Standardization,
}

impl NormMethod {
    /// Label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            NormMethod::MinMax => "Min-Max",
            NormMethod::Standardization => "Standardization",
        }
    }
}

impl fmt::Display for NormMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for NormMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "minmax" => Ok(NormMethod::MinMax),
            "standardization" | "standardisation" | "zscore" | "standard" => Ok(NormMethod::Standardization),
            _ => Err(Error::InvalidConfig(format!("unknown normalization `{s}`"))),
        }
    }
}

/// Per-feature normalization parameters.
///
/// For `MinMax` each pair is `(min, max)`; for `Standardization` it is
/// `(mean, std)` where `std` uses the `n − 1` denominator.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub method: NormMethod,
    pub params: Vec<(f64, f64)>,
}

impl NormStats {
    pub fn new(method: NormMethod, params: Vec<(f64, f64)>) -> Result<Self> {
        for (i, &(a, b)) in params.iter().enumerate() {
            let ok = a.is_finite()
                && b.is_finite()
                && match method {
                    NormMethod::MinMax => b >= a,
                    NormMethod::Standardization => b >= 0.0,
                };
            if !ok {
                return Err(Error::RangeViolation(format!("invalid {method} parameters ({a}, {b}) for feature {i}")));
            }
        }
        Ok(NormStats { method, params })
    }

    pub fn features(&self) -> usize {
        self.params.len()
    }

    /// Fits per-column statistics over every row yielded by `rows`.
    pub fn fit<'a, I>(method: NormMethod, features: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]> + Clone,
    {
        let mut n = 0usize;
        let mut first = vec![(f64::INFINITY, f64::NEG_INFINITY); features];
        let mut sum = vec![0.0; features];
        for row in rows.clone() {
            check_width(features, row.len())?;
            n += 1;
            for (j, &v) in row.iter().enumerate() {
                first[j].0 = first[j].0.min(v);
                first[j].1 = first[j].1.max(v);
                sum[j] += v;
            }
        }
        if n == 0 {
            return Err(Error::EmptySplit("normalizer fit data"));
        }
        let params = match method {
            NormMethod::MinMax => first,
            NormMethod::Standardization => {
                let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
                let mut ss = vec![0.0; features];
                for row in rows {
                    for (j, &v) in row.iter().enumerate() {
                        let d = v - mean[j];
                        ss[j] += d * d;
                    }
                }
                let denom = n.saturating_sub(1).max(1) as f64;
                mean.into_iter().zip(ss).map(|(m, s)| (m, (s / denom).sqrt())).collect()
            }
        };
        NormStats::new(method, params)
    }

    pub fn apply_value(&self, feature: usize, x: f64) -> f64 {
        let (a, b) = self.params[feature];
        match self.method {
            NormMethod::MinMax => {
                let range = b - a;
                if range > 0.0 {
                    (x - a) / range
                } else {
                    0.0
                }
            }
            NormMethod::Standardization => {
                if b > 0.0 {
                    (x - a) / b
                } else {
                    0.0
                }
            }
        }
    }

    pub fn apply(&self, m: &mut Matrix) -> Result<()> {
        check_width(self.features(), m.cols())?;
        let cols = m.cols();
        for (i, v) in m.as_mut_slice().iter_mut().enumerate() {
            *v = self.apply_value(i % cols, *v);
        }
        Ok(())
    }
}

fn check_width(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::LayoutMismatch { expected, actual })
    }
}

/// Fits statistics over every timestep of the given (training) windows.
pub fn fit_normalizer(windows: &[FeatureWindow], method: NormMethod) -> Result<NormStats> {
    let features = windows.first().map(|w| w.values.cols()).ok_or(Error::EmptySplit("normalizer fit data"))?;
    NormStats::fit(method, features, windows.iter().flat_map(|w| w.values.iter_rows()))
}

/// Normalizes windows in place. Constant features map to 0; values outside
/// the fitted range are not clamped.
pub fn apply_normalizer(windows: &mut [FeatureWindow], stats: &NormStats) -> Result<()> {
    windows.iter_mut().try_for_each(|w| stats.apply(&mut w.values))
}

#[cfg(test)]
mod tests {
    use super::*;

    const COLUMN: [f64; 10] = [10.0, 16.0, 19.0, 25.0, 21.0, 17.0, 10.0, 5.0, 15.0, 30.0];

    fn column_rows() -> Vec<[f64; 1]> {
        COLUMN.iter().map(|&v| [v]).collect()
    }

    fn fit_column(method: NormMethod) -> NormStats {
        let rows = column_rows();
        NormStats::fit(method, 1, rows.iter().map(|r| r.as_slice())).unwrap()
    }

    #[test]
    fn minmax_fit_and_apply() {
        let s = fit_column(NormMethod::MinMax);
        assert_eq!(s.params, vec![(5.0, 30.0)]);
        assert!((s.apply_value(0, 10.0) - 0.20).abs() < 1e-12);
        assert!((s.apply_value(0, 16.0) - 0.44).abs() < 1e-12);
        assert!((s.apply_value(0, 30.0) - 1.00).abs() < 1e-12);
        // no clamping outside the fitted range
        assert!(s.apply_value(0, 35.0) > 1.0);
        assert!(s.apply_value(0, 0.0) < 0.0);
    }

    #[test]
    fn standardization_fit() {
        // mean is 168 / 10; std uses the n − 1 denominator: sqrt(499.6 / 9)
        let s = fit_column(NormMethod::Standardization);
        let (mu, sigma) = s.params[0];
        assert!((mu - 16.8).abs() < 1e-12);
        assert!((sigma - (499.6f64 / 9.0).sqrt()).abs() < 1e-12);
        assert!((sigma - 7.45).abs() < 0.005);
    }

    #[test]
    fn standardization_apply_with_tabulated_stats() {
        let s = NormStats::new(NormMethod::Standardization, vec![(16.50, 7.45)]).unwrap();
        assert!((s.apply_value(0, 10.0) + 0.87).abs() < 0.005);
        assert!((s.apply_value(0, 30.0) - 1.81).abs() < 0.005);
    }

    #[test]
    fn constant_feature_maps_to_zero() {
        let rows = [[3.0], [3.0], [3.0]];
        for method in [NormMethod::MinMax, NormMethod::Standardization] {
            let s = NormStats::fit(method, 1, rows.iter().map(|r| r.as_slice())).unwrap();
            if method == NormMethod::MinMax {
                assert_eq!(s.params, vec![(3.0, 3.0)]);
            }
            let mut m = Matrix::from_rows(&[vec![3.0], vec![3.0]]).unwrap();
            s.apply(&mut m).unwrap();
            assert_eq!(m.as_slice(), &[0.0, 0.0]);
        }
    }

    #[test]
    fn layout_mismatch() {
        let s = fit_column(NormMethod::MinMax);
        let mut m = Matrix::zeros(2, 3);
        assert!(matches!(s.apply(&mut m), Err(Error::LayoutMismatch { expected: 1, actual: 3 })));
    }

    #[test]
    fn invalid_stats_rejected() {
        assert!(NormStats::new(NormMethod::MinMax, vec![(2.0, 1.0)]).is_err());
        assert!(NormStats::new(NormMethod::Standardization, vec![(0.0, -1.0)]).is_err());
    }

    #[test]
    fn method_parsing() {
        assert_eq!("min-max".parse::<NormMethod>().unwrap(), NormMethod::MinMax);
        assert_eq!("Standardization".parse::<NormMethod>().unwrap(), NormMethod::Standardization);
        assert!("l2".parse::<NormMethod>().is_err());
    }
}
