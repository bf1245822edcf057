//! Binary model checkpoint.
//!
//! Little-endian throughout.
//!
//! ```text
//! magic "DSRNNCKP", u32 version (1)
//! config   u8 cell (0 GRU, 1 LSTM), u32 layers, u32 hidden, f64 dropout,
//!          u8 batchnorm, u32 input features, u32 window length,
//!          u8 has-bias, f64 bias, u8 pooling (0 last, 1 mean)
//! u32 block count, then per block: u32 rows, u32 cols, rows·cols f64
//!          (weight blocks in `Weights::blocks` order, then per layer the
//!          running mean and variance as 1×H blocks)
//! u8 has-preprocessing, then optionally:
//!          u8 method (0 min-max, 1 standardization), u32 F, F × (f64, f64),
//!          u8 speed-limit feature, u8 drowsy excluded, u32 stride,
//!          u64 split seed, u8 split by trajectory, f64 w0, f64 w1
//! ```
//!
//! Anything after the last field is rejected.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{NormMethod, NormStats};

use super::{CellKind, ModelConfig, ModelParams, Pooling, RunningStats, Weights};

const MAGIC: &[u8; 8] = b"DSRNNCKP";
const VERSION: u32 = 1;

/// Feature pipeline settings that must match at inference time.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessing {
    pub norm: NormStats,
    pub include_speed_limit: bool,
    pub exclude_drowsy: bool,
    pub stride: usize,
    pub split_seed: u64,
    pub split_by_trajectory: bool,
    /// Loss weights `(w0, w1)` used in training.
    pub class_weights: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub preprocessing: Option<Preprocessing>,
}

fn corrupt(reason: impl Into<String>) -> Error {
    Error::Format { kind: "checkpoint", reason: reason.into() }
}

fn u32_of(v: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(v).map(u32::to_le_bytes).map_err(|_| corrupt(format!("{what} too large")))
}

fn block_shapes(config: &ModelConfig) -> Vec<(usize, usize)> {
    let w = Weights::zeros(config);
    let mut shapes = Vec::new();
    for l in &w.layers {
        shapes.extend([l.w.shape(), l.u.shape(), (1, l.b.len())]);
    }
    for _ in &w.norms {
        shapes.extend([(1, config.hidden), (1, config.hidden)]);
    }
    shapes.extend([(1, config.hidden), (1, 1)]);
    if config.batchnorm {
        for _ in 0..config.layers {
            shapes.extend([(1, config.hidden), (1, config.hidden)]);
        }
    }
    shapes
}

/// Number of stored values implied by `config`, or `None` on overflow.
fn stored_values(config: &ModelConfig) -> Option<usize> {
    let h = config.hidden;
    let g = config.cell.gates().checked_mul(h)?;
    let mut total = 0usize;
    for l in 0..config.layers {
        let per = g.checked_mul(config.layer_input(l).checked_add(h)?.checked_add(1)?)?;
        total = total.checked_add(per)?;
        if config.batchnorm {
            total = total.checked_add(h.checked_mul(4)?)?;
        }
    }
    total.checked_add(h + 1)
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let c = &ckpt.config;
    c.validate()?;
    ckpt.params.check(c)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match c.cell {
        CellKind::Gru => 0,
        CellKind::Lstm => 1,
    });
    out.extend_from_slice(&u32_of(c.layers, "layers")?);
    out.extend_from_slice(&u32_of(c.hidden, "hidden")?);
    out.extend_from_slice(&c.dropout.to_le_bytes());
    out.push(c.batchnorm as u8);
    out.extend_from_slice(&u32_of(c.input_features, "input features")?);
    out.extend_from_slice(&u32_of(c.window_length, "window length")?);
    out.push(c.output_bias_init.is_some() as u8);
    out.extend_from_slice(&c.output_bias_init.unwrap_or(0.0).to_le_bytes());
    out.push(match c.pooling {
        Pooling::LastStep => 0,
        Pooling::Mean => 1,
    });

    let shapes = block_shapes(c);
    let mut blocks: Vec<&[f64]> = ckpt.params.weights.blocks();
    for r in &ckpt.params.running {
        blocks.push(&r.mean);
        blocks.push(&r.var);
    }
    out.extend_from_slice(&u32_of(blocks.len(), "block count")?);
    for (block, (rows, cols)) in blocks.iter().zip(&shapes) {
        out.extend_from_slice(&u32_of(*rows, "rows")?);
        out.extend_from_slice(&u32_of(*cols, "cols")?);
        for v in *block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    match &ckpt.preprocessing {
        None => out.push(0),
        Some(p) => {
            out.push(1);
            out.push(match p.norm.method {
                NormMethod::MinMax => 0,
                NormMethod::Standardization => 1,
            });
            out.extend_from_slice(&u32_of(p.norm.params.len(), "feature count")?);
            for (a, b) in &p.norm.params {
                out.extend_from_slice(&a.to_le_bytes());
                out.extend_from_slice(&b.to_le_bytes());
            }
            out.push(p.include_speed_limit as u8);
            out.push(p.exclude_drowsy as u8);
            out.extend_from_slice(&u32_of(p.stride, "stride")?);
            out.extend_from_slice(&p.split_seed.to_le_bytes());
            out.push(p.split_by_trajectory as u8);
            out.extend_from_slice(&p.class_weights.0.to_le_bytes());
            out.extend_from_slice(&p.class_weights.1.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(corrupt(format!("truncated at byte {}", self.at)));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.at
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(corrupt(format!("flag byte {v}"))),
        }
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let v = f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        if v.is_finite() {
            Ok(v)
        } else {
            Err(corrupt("non-finite value"))
        }
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(8)? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let cell = match r.u8()? {
        0 => CellKind::Gru,
        1 => CellKind::Lstm,
        v => return Err(corrupt(format!("cell kind {v}"))),
    };
    let layers = r.u32()?;
    let hidden = r.u32()?;
    let dropout = r.f64()?;
    let batchnorm = r.flag()?;
    let input_features = r.u32()?;
    let window_length = r.u32()?;
    let has_bias = r.flag()?;
    let bias = r.f64()?;
    let pooling = match r.u8()? {
        0 => Pooling::LastStep,
        1 => Pooling::Mean,
        v => return Err(corrupt(format!("pooling {v}"))),
    };
    let config = ModelConfig {
        cell,
        layers,
        hidden,
        dropout,
        batchnorm,
        input_features,
        window_length,
        output_bias_init: has_bias.then_some(bias),
        pooling,
    };
    config.validate().map_err(|e| corrupt(e.to_string()))?;

    // Refuse to allocate for a config the remaining bytes cannot hold.
    let values = stored_values(&config).ok_or_else(|| corrupt("model too large"))?;
    if values.checked_mul(8).is_none_or(|n| n > r.remaining()) {
        return Err(corrupt("model larger than file"));
    }

    let shapes = block_shapes(&config);
    let count = r.u32()?;
    if count != shapes.len() {
        return Err(Error::ShapeMismatch(format!("{count} blocks, configuration needs {}", shapes.len())));
    }
    let mut flat = Vec::with_capacity(values);
    for (i, &(rows, cols)) in shapes.iter().enumerate() {
        let (fr, fc) = (r.u32()?, r.u32()?);
        if (fr, fc) != (rows, cols) {
            return Err(Error::ShapeMismatch(format!("block {i} is {fr}×{fc}, expected {rows}×{cols}")));
        }
        for _ in 0..rows * cols {
            flat.push(r.f64()?);
        }
    }
    let mut weights = Weights::zeros(&config);
    let n = weights.len();
    weights.set_flat(&flat[..n])?;
    let running = flat[n..]
        .chunks_exact(2 * hidden)
        .map(|c| RunningStats { mean: c[..hidden].to_vec(), var: c[hidden..].to_vec() })
        .collect();
    let params = ModelParams { weights, running };
    params.check(&config).map_err(|e| corrupt(e.to_string()))?;

    let preprocessing = if r.flag()? {
        let method = match r.u8()? {
            0 => NormMethod::MinMax,
            1 => NormMethod::Standardization,
            v => return Err(corrupt(format!("normalization method {v}"))),
        };
        let features = r.u32()?;
        if features.checked_mul(16).is_none_or(|b| b > r.remaining()) {
            return Err(corrupt("normalizer larger than file"));
        }
        let mut p = Vec::with_capacity(features);
        for _ in 0..features {
            p.push((r.f64()?, r.f64()?));
        }
        let norm = NormStats::new(method, p).map_err(|e| corrupt(e.to_string()))?;
        if norm.features() != config.input_features {
            return Err(Error::ShapeMismatch(format!(
                "normalizer covers {} features, model takes {}",
                norm.features(),
                config.input_features
            )));
        }
        let include_speed_limit = r.flag()?;
        let exclude_drowsy = r.flag()?;
        let stride = r.u32()?;
        if stride == 0 {
            return Err(corrupt("zero stride"));
        }
        let split_seed = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let split_by_trajectory = r.flag()?;
        let class_weights = (r.f64()?, r.f64()?);
        if !(class_weights.0 > 0.0 && class_weights.1 > 0.0) {
            return Err(corrupt("class weights must be positive"));
        }
        Some(Preprocessing {
            norm,
            include_speed_limit,
            exclude_drowsy,
            stride,
            split_seed,
            split_by_trajectory,
            class_weights,
        })
    } else {
        None
    };
    if r.remaining() != 0 {
        return Err(corrupt(format!("{} trailing bytes", r.remaining())));
    }
    Ok(Checkpoint { config, params, preprocessing })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rnn::init_params;

    fn sample(cell: CellKind, batchnorm: bool) -> Checkpoint {
        let config = ModelConfig { hidden: 3, batchnorm, ..ModelConfig::desk(cell, 9, 5) };
        let mut params = init_params(&config, 11, 2, 3).unwrap();
        for r in &mut params.running {
            r.mean[1] = 0.25;
            r.var[2] = 2.5;
        }
        let norm =
            NormStats::new(NormMethod::Standardization, (0..9).map(|i| (i as f64, 1.0 + i as f64)).collect()).unwrap();
        Checkpoint {
            config,
            params,
            preprocessing: Some(Preprocessing {
                norm,
                include_speed_limit: true,
                exclude_drowsy: false,
                stride: 3,
                split_seed: 42,
                split_by_trajectory: true,
                class_weights: (0.75, 1.5),
            }),
        }
    }

    #[test]
    fn round_trip() {
        for cell in [CellKind::Gru, CellKind::Lstm] {
            for bn in [false, true] {
                let c = sample(cell, bn);
                assert_eq!(decode_checkpoint(&encode_checkpoint(&c).unwrap()).unwrap(), c);
            }
        }
        let mut c = sample(CellKind::Gru, true);
        c.preprocessing = None;
        c.config.output_bias_init = Some(-0.5);
        assert_eq!(decode_checkpoint(&encode_checkpoint(&c).unwrap()).unwrap(), c);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_checkpoint(&sample(CellKind::Lstm, true)).unwrap();
        let mut v = bytes.clone();
        v[8] = 2;
        assert!(matches!(decode_checkpoint(&v), Err(Error::Format { .. })));
        let mut v = bytes.clone();
        v.push(0);
        assert!(decode_checkpoint(&v).is_err());
        for cut in [0, 7, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(decode_checkpoint(&bytes[..cut]).is_err(), "cut {cut}");
        }
        // hidden field claims a different width
        let mut v = bytes.clone();
        v[17] = 4;
        assert!(decode_checkpoint(&v).is_err());
    }

    #[test]
    fn rejects_huge_claims_without_allocating() {
        let mut v = encode_checkpoint(&sample(CellKind::Gru, false)).unwrap();
        v[13..17].copy_from_slice(&u32::MAX.to_le_bytes());
        v[17..21].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode_checkpoint(&v).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let c = sample(CellKind::Gru, true);
        save_checkpoint(&path, &c).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), c);
        assert!(load_checkpoint(&dir.path().join("missing")).is_err());
    }
}
