//! Flat `key = value` experiment configuration.
//!
//! One setting per line, `#` starts a comment. `include = <name>` splices
//! in a built-in preset (`desk`, `large`) or another file, resolved
//! relative to the including file. Later lines override earlier ones.
//! List-valued keys (`cell`, `window`, `normalization`, `protocol`, `seeds`) take
//! comma-separated values and span a grid.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::features::{NormMethod, Protocol};
use crate::ingest::{DriverId, SynthSpec, DEFAULT_RAW_FILE};
use crate::rnn::{CellKind, Pooling};
use crate::train::{ClassWeighting, Optimizer, TrainConfig};

use super::{DataSpec, ExperimentConfig, GridSpec, SplitMode};

const MAX_INCLUDE_DEPTH: usize = 8;

pub const DESK_PRESET: &str = "layers = 2\nhidden = 32\ndropout = 0.2\nbatchnorm = true\n";
pub const LARGE_PRESET: &str = "layers = 7\nhidden = 360\ndropout = 0.7\nbatchnorm = true\n";

fn preset(name: &str) -> Option<&'static str> {
    match name {
        "desk" => Some(DESK_PRESET),
        "large" => Some(LARGE_PRESET),
        _ => None,
    }
}

/// One `key = value` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::InvalidConfig(format!("line {line}: {msg}"))
}

/// Splits text into entries without interpreting keys. Includes are kept
/// as ordinary entries.
pub fn parse_config_text(text: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body.split_once('=').ok_or_else(|| bad(line, format!("expected `key = value`, got `{body}`")))?;
        let key = k.trim();
        let value = v.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(bad(line, format!("bad key `{key}`")));
        }
        if value.is_empty() {
            return Err(bad(line, format!("`{key}` has no value")));
        }
        out.push(Entry { key: key.to_string(), value: value.to_string(), line });
    }
    Ok(out)
}

/// Parses text and expands includes. File includes are resolved against
/// `base`; without a base only presets can be included.
pub fn expand_includes(text: &str, base: Option<&Path>) -> Result<Vec<Entry>> {
    expand(text, base, 0)
}

fn expand(text: &str, base: Option<&Path>, depth: usize) -> Result<Vec<Entry>> {
    if depth > MAX_INCLUDE_DEPTH {
        return Err(Error::InvalidConfig("includes nested too deeply".into()));
    }
    let mut out = Vec::new();
    for e in parse_config_text(text)? {
        if e.key != "include" {
            out.push(e);
            continue;
        }
        if let Some(p) = preset(&e.value) {
            out.extend(expand(p, None, depth + 1)?);
            continue;
        }
        let dir = base.ok_or_else(|| bad(e.line, format!("unknown preset `{}`", e.value)))?;
        let path = dir.join(&e.value);
        let inner = fs::read_to_string(&path).map_err(|err| Error::io(&path, err))?;
        out.extend(expand(&inner, path.parent(), depth + 1)?);
    }
    Ok(out)
}

/// Reads a config file with its includes.
pub fn load_config_file(path: &Path) -> Result<GridSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let entries = expand_includes(&text, path.parent())?;
    grid_from_entries(&entries, path.parent())
}

/// Parses config text that may include presets but not other files.
pub fn parse_grid_spec(text: &str) -> Result<GridSpec> {
    grid_from_entries(&expand_includes(text, None)?, None)
}

fn value<T: FromStr>(e: &Entry) -> Result<T> {
    e.value.parse().map_err(|_| bad(e.line, format!("bad value `{}` for `{}`", e.value, e.key)))
}

fn flag(e: &Entry) -> Result<bool> {
    match e.value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(bad(e.line, format!("`{}` expects true or false", e.key))),
    }
}

fn list<T>(e: &Entry, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    let items: Vec<T> = e.value.split(',').map(|s| f(s.trim())).collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(bad(e.line, format!("`{}` is empty", e.key)));
    }
    Ok(items)
}

/// `seen` → false, `unseen` → true.
pub fn parse_protocol_name(s: &str) -> Result<bool> {
    match s.to_ascii_lowercase().as_str() {
        "seen" => Ok(false),
        "unseen" => Ok(true),
        _ => Err(Error::InvalidConfig(format!("unknown protocol `{s}`"))),
    }
}

fn grid_from_entries(entries: &[Entry], base: Option<&Path>) -> Result<GridSpec> {
    let mut base_cfg = ExperimentConfig::default();
    let mut cells = vec![base_cfg.cell];
    let mut windows = vec![base_cfg.window_length];
    let mut norms = vec![base_cfg.normalization];
    let mut unseen = vec![false];
    let mut seeds = Vec::new();
    let mut holdout = DriverId::new(5)?;
    let mut data_root: Option<PathBuf> = None;
    let mut raw_file = DEFAULT_RAW_FILE.to_string();
    let mut strict = false;
    let mut synth: Option<SynthSpec> = None;
    let mut synth_fields = (6usize, 2usize, 300usize);
    let mut adam = (0.9, 0.999, 1e-8);
    let mut momentum = 0.9;
    let mut optimizer = "adam".to_string();

    let m = &mut base_cfg.preset;
    let t = &mut base_cfg.train;
    for e in entries {
        match e.key.as_str() {
            "cell" => cells = list(e, CellKind::from_str)?,
            "window" => {
                windows = list(e, |s| s.parse::<usize>().map_err(|_| bad(e.line, format!("bad window `{s}`"))))?;
                if windows.contains(&0) {
                    return Err(bad(e.line, "window must be ≥ 1"));
                }
            }
            "normalization" => norms = list(e, NormMethod::from_str)?,
            "protocol" => unseen = list(e, parse_protocol_name)?,
            "holdout" => holdout = value(e)?,
            "split" => {
                base_cfg.split = match e.value.as_str() {
                    "windows" => SplitMode::Windows,
                    "trajectories" => SplitMode::Trajectories,
                    _ => return Err(bad(e.line, "split expects windows or trajectories")),
                }
            }
            "stride" => base_cfg.stride = value(e)?,
            "speed_limit_feature" => base_cfg.include_speed_limit = flag(e)?,
            "exclude_drowsy" => base_cfg.exclude_drowsy = flag(e)?,
            "layers" => m.layers = value(e)?,
            "hidden" => m.hidden = value(e)?,
            "dropout" => m.dropout = value(e)?,
            "batchnorm" => m.batchnorm = flag(e)?,
            "pooling" => {
                m.pooling = match e.value.as_str() {
                    "last" => Pooling::LastStep,
                    "mean" => Pooling::Mean,
                    _ => return Err(bad(e.line, "pooling expects last or mean")),
                }
            }
            "output_bias" => m.output_bias_init = if e.value == "auto" { None } else { Some(value(e)?) },
            "epochs" => t.epochs = value(e)?,
            "batch_size" => t.batch_size = value(e)?,
            "learning_rate" => t.learning_rate = value(e)?,
            "optimizer" => optimizer = e.value.to_ascii_lowercase(),
            "adam_beta1" => adam.0 = value(e)?,
            "adam_beta2" => adam.1 = value(e)?,
            "adam_eps" => adam.2 = value(e)?,
            "momentum" => momentum = value(e)?,
            "class_weights" => {
                t.class_weights = if e.value == "balanced" {
                    ClassWeighting::Balanced
                } else {
                    let w = list(e, |s| s.parse::<f64>().map_err(|_| bad(e.line, format!("bad weight `{s}`"))))?;
                    match w[..] {
                        [a, b] => ClassWeighting::Fixed(a, b),
                        _ => return Err(bad(e.line, "class_weights expects `w0, w1` or balanced")),
                    }
                }
            }
            "oversample" => t.use_oversampling = flag(e)?,
            "oversample_validation" => t.oversample_validation = flag(e)?,
            "patience" => t.early_stop_patience = value(e)?,
            "seed" => base_cfg.seed = value(e)?,
            "seeds" => seeds = list(e, |v| v.parse().map_err(|_| bad(e.line, format!("bad seed `{v}`"))))?,
            "data" => {
                let p = PathBuf::from(&e.value);
                data_root = Some(match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p,
                });
            }
            "raw_file" => raw_file = e.value.clone(),
            "strict" => strict = flag(e)?,
            "synth_seed" => synth = Some(SynthSpec::new(value(e)?, 0, 0, 0)),
            "synth_drivers" => synth_fields.0 = value(e)?,
            "synth_trips" => synth_fields.1 = value(e)?,
            "synth_len" => synth_fields.2 = value(e)?,
            other => return Err(bad(e.line, format!("unknown key `{other}`"))),
        }
    }
    base_cfg.train.optimizer = match optimizer.as_str() {
        "adam" => Optimizer::Adam { beta1: adam.0, beta2: adam.1, eps: adam.2 },
        "sgd" => Optimizer::Sgd { momentum },
        other => return Err(Error::InvalidConfig(format!("unknown optimizer `{other}`"))),
    };
    base_cfg.holdout = holdout;
    let data = match (data_root, synth) {
        (Some(_), Some(_)) => return Err(Error::InvalidConfig("set either `data` or `synth_seed`, not both".into())),
        (Some(root), None) => Some(DataSpec::Directory { root, raw_file, strict }),
        (None, Some(s)) => {
            Some(DataSpec::Synthetic(SynthSpec::new(s.seed, synth_fields.0, synth_fields.1, synth_fields.2)))
        }
        (None, None) => None,
    };
    let protocols =
        unseen.into_iter().map(|u| if u { Protocol::UnseenDriver(holdout) } else { Protocol::Seen }).collect();
    let spec = GridSpec { base: base_cfg, cells, windows, normalizations: norms, protocols, seeds, data };
    spec.validate()?;
    Ok(spec)
}

/// Renders a single experiment as config text that parses back to it.
pub fn experiment_to_text(cfg: &ExperimentConfig) -> String {
    let p = &cfg.preset;
    let t: &TrainConfig = &cfg.train;
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(&v);
        s.push('\n');
    };
    kv("cell", cfg.cell.label().to_ascii_lowercase());
    kv("window", cfg.window_length.to_string());
    kv("normalization", cfg.normalization.label().to_ascii_lowercase());
    kv("protocol", if matches!(cfg.protocol, Protocol::Seen) { "seen".into() } else { "unseen".into() });
    kv("holdout", cfg.holdout.to_string());
    kv("split", if cfg.split == SplitMode::Windows { "windows".into() } else { "trajectories".into() });
    kv("stride", cfg.stride.to_string());
    kv("speed_limit_feature", cfg.include_speed_limit.to_string());
    kv("exclude_drowsy", cfg.exclude_drowsy.to_string());
    kv("layers", p.layers.to_string());
    kv("hidden", p.hidden.to_string());
    kv("dropout", format!("{:?}", p.dropout));
    kv("batchnorm", p.batchnorm.to_string());
    kv("pooling", if p.pooling == Pooling::LastStep { "last".into() } else { "mean".into() });
    kv("output_bias", p.output_bias_init.map_or("auto".into(), |b| format!("{b:?}")));
    kv("epochs", t.epochs.to_string());
    kv("batch_size", t.batch_size.to_string());
    kv("learning_rate", format!("{:?}", t.learning_rate));
    match t.optimizer {
        Optimizer::Adam { beta1, beta2, eps } => {
            kv("optimizer", "adam".into());
            kv("adam_beta1", format!("{beta1:?}"));
            kv("adam_beta2", format!("{beta2:?}"));
            kv("adam_eps", format!("{eps:?}"));
        }
        Optimizer::Sgd { momentum } => {
            kv("optimizer", "sgd".into());
            kv("momentum", format!("{momentum:?}"));
        }
    }
    kv(
        "class_weights",
        match t.class_weights {
            ClassWeighting::Balanced => "balanced".into(),
            ClassWeighting::Fixed(a, b) => format!("{a:?}, {b:?}"),
        },
    );
    kv("oversample", t.use_oversampling.to_string());
    kv("oversample_validation", t.oversample_validation.to_string());
    kv("patience", t.early_stop_patience.to_string());
    kv("seed", cfg.seed.to_string());
    s
}
