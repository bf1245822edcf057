//! Experiment runner and the results grid.

pub mod config;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{
    apply_normalizer, build_windows, fit_normalizer, split_seen, split_seen_by_trajectory, split_unseen, FeatureConfig,
    FeatureWindow, NormMethod, NormStats, Protocol, SplitBundle,
};
use crate::ingest::{generate_synthetic_dataset, scan_dataset, DriverId, ScanOptions, SynthSpec, Trajectory};
use crate::metrics::MetricsReport;
use crate::rnn::{CellKind, Checkpoint, ModelConfig, Pooling, Preprocessing};
use crate::train::{evaluate, train_model, TrainConfig, TrainHistory};

pub use config::{
    expand_includes, experiment_to_text, load_config_file, parse_config_text, parse_grid_spec, parse_protocol_name,
    Entry,
};

/// Exact header of the results CSV.
pub const GRID_CSV_HEADER: &str = "NN,timestep,normalization,Evaluation,loss,accuracy,precision,recall,F1 Score";

/// Network size and regularization, independent of input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPreset {
    pub layers: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub batchnorm: bool,
    pub pooling: Pooling,
    pub output_bias_init: Option<f64>,
}

impl ModelPreset {
    pub fn desk() -> Self {
        ModelPreset {
            layers: 2,
            hidden: 32,
            dropout: 0.2,
            batchnorm: true,
            pooling: Pooling::LastStep,
            output_bias_init: None,
        }
    }

    pub fn large() -> Self {
        ModelPreset { layers: 7, hidden: 360, dropout: 0.7, ..Self::desk() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Shuffle individual windows.
    Windows,
    /// Keep all windows of a trajectory in one split.
    Trajectories,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub cell: CellKind,
    pub window_length: usize,
    pub normalization: NormMethod,
    pub protocol: Protocol,
    /// Driver held out when the protocol is unseen-driver.
    pub holdout: DriverId,
    pub split: SplitMode,
    pub stride: usize,
    pub include_speed_limit: bool,
    pub exclude_drowsy: bool,
    pub preset: ModelPreset,
    /// `train.seed` is ignored; [`ExperimentConfig::seed`] drives everything.
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            cell: CellKind::Lstm,
            window_length: 120,
            normalization: NormMethod::Standardization,
            protocol: Protocol::Seen,
            holdout: DriverId::new(5).expect("valid driver"),
            split: SplitMode::Windows,
            stride: 1,
            include_speed_limit: false,
            exclude_drowsy: false,
            preset: ModelPreset::desk(),
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            window_length: self.window_length,
            stride: self.stride,
            include_speed_limit: self.include_speed_limit,
            exclude_drowsy: self.exclude_drowsy,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let p = &self.preset;
        ModelConfig {
            cell: self.cell,
            layers: p.layers,
            hidden: p.hidden,
            dropout: p.dropout,
            batchnorm: p.batchnorm,
            input_features: crate::features::feature_count(self.include_speed_limit),
            window_length: self.window_length,
            output_bias_init: p.output_bias_init,
            pooling: p.pooling,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.window_length == 0 {
            return Err(Error::InvalidConfig("window and stride must be ≥ 1".into()));
        }
        self.model_config().validate()?;
        self.train_config().validate()
    }

    /// Key that orders grid rows: NN, Evaluation, timestep, normalization.
    fn sort_key(&self) -> (&'static str, &'static str, usize, &'static str, u64) {
        (self.cell.label(), self.protocol.label(), self.window_length, self.normalization.label(), self.seed)
    }

    fn row_prefix(&self) -> String {
        format!("{},{},{},{}", self.cell.label(), self.window_length, self.normalization.label(), self.protocol.label())
    }
}

/// Where trajectories come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSpec {
    Directory { root: PathBuf, raw_file: String, strict: bool },
    Synthetic(SynthSpec),
}

impl DataSpec {
    pub fn load(&self) -> Result<Vec<Trajectory>> {
        match self {
            DataSpec::Directory { root, raw_file, strict } => {
                let opts = ScanOptions { raw_file: raw_file.clone(), strict: *strict, ..ScanOptions::default() };
                Ok(scan_dataset(root, &opts).map_err(|e| e.at("ingest"))?.trajectories)
            }
            DataSpec::Synthetic(spec) => generate_synthetic_dataset(*spec).map_err(|e| e.at("synthesize")),
        }
    }
}

/// Cartesian product of the list-valued settings over a base config.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub base: ExperimentConfig,
    pub cells: Vec<CellKind>,
    pub windows: Vec<usize>,
    pub normalizations: Vec<NormMethod>,
    pub protocols: Vec<Protocol>,
    /// Repetition seeds; empty runs once with `base.seed`.
    pub seeds: Vec<u64>,
    pub data: Option<DataSpec>,
}

impl GridSpec {
    pub fn experiments(&self) -> Vec<ExperimentConfig> {
        let seeds = if self.seeds.is_empty() { vec![self.base.seed] } else { self.seeds.clone() };
        let mut out = Vec::new();
        for &cell in &self.cells {
            for &window_length in &self.windows {
                for &normalization in &self.normalizations {
                    for &protocol in &self.protocols {
                        for &seed in &seeds {
                            out.push(ExperimentConfig {
                                cell,
                                window_length,
                                normalization,
                                protocol,
                                seed,
                                ..self.base.clone()
                            });
                        }
                    }
                }
            }
        }
        out
    }

    /// The single experiment of a one-cell grid.
    pub fn single(&self) -> Result<ExperimentConfig> {
        let mut e = self.experiments();
        if e.len() != 1 {
            return Err(Error::InvalidConfig(format!("config spans {} experiments, expected one", e.len())));
        }
        Ok(e.remove(0))
    }

    pub fn validate(&self) -> Result<()> {
        let mut keys: Vec<_> = self.experiments().iter().map(|e| (e.row_prefix(), e.seed)).collect();
        let n = keys.len();
        keys.sort();
        keys.dedup();
        if keys.len() != n {
            return Err(Error::InvalidConfig("grid lists a value twice".into()));
        }
        self.experiments().iter().try_for_each(ExperimentConfig::validate)
    }
}

/// Per-split class counts and protocol integrity facts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetFingerprint {
    /// `(negatives, positives)` before any oversampling.
    pub train: (usize, usize),
    pub validation: (usize, usize),
    pub test: (usize, usize),
    pub held_out: Option<DriverId>,
    /// Held-out driver windows found in train ∪ validation.
    pub held_out_in_training: usize,
    /// Test windows from drivers other than the held-out one.
    pub foreign_in_test: usize,
    /// No window key occurs in two splits.
    pub disjoint: bool,
}

impl DatasetFingerprint {
    pub fn of(bundle: &SplitBundle) -> Self {
        let counts = |w: &[FeatureWindow]| {
            let pos = w.iter().filter(|x| x.label == 1).count();
            (w.len() - pos, pos)
        };
        let held_out = match bundle.protocol {
            Protocol::UnseenDriver(d) => Some(d),
            Protocol::Seen => None,
        };
        let (held_out_in_training, foreign_in_test) = match held_out {
            Some(d) => (
                bundle.train.iter().chain(&bundle.validation).filter(|w| w.driver == d).count(),
                bundle.test.iter().filter(|w| w.driver != d).count(),
            ),
            None => (0, 0),
        };
        DatasetFingerprint {
            train: counts(&bundle.train),
            validation: counts(&bundle.validation),
            test: counts(&bundle.test),
            held_out,
            held_out_in_training,
            foreign_in_test,
            disjoint: bundle.verify().is_ok(),
        }
    }

    pub fn test_len(&self) -> usize {
        self.test.0 + self.test.1
    }

    /// For unseen-driver runs: no held-out windows were trained on and the
    /// test set is non-empty and entirely the held-out driver.
    pub fn proves_unseen_integrity(&self) -> bool {
        self.held_out.is_some()
            && self.disjoint
            && self.held_out_in_training == 0
            && self.foreign_in_test == 0
            && self.test_len() > 0
    }
}

impl std::fmt::Display for DatasetFingerprint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "train {}/{} validation {}/{} test {}/{} (negative/positive)",
            self.train.0, self.train.1, self.validation.0, self.validation.1, self.test.0, self.test.1
        )?;
        if let Some(d) = self.held_out {
            write!(
                f,
                "; held out {d}: {} in train+validation, {} foreign in test",
                self.held_out_in_training, self.foreign_in_test
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub metrics: MetricsReport,
    pub seconds: f64,
    pub fingerprint: DatasetFingerprint,
    pub history: TrainHistory,
}

impl ExperimentResult {
    pub fn csv_row(&self) -> String {
        format!("{},{}", self.config.row_prefix(), self.metrics.csv_fields())
    }
}

/// A result plus the trained model.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub result: ExperimentResult,
    pub checkpoint: Checkpoint,
}

pub fn split_for(windows: Vec<FeatureWindow>, protocol: Protocol, split: SplitMode, seed: u64) -> Result<SplitBundle> {
    match (protocol, split) {
        (Protocol::UnseenDriver(d), _) => split_unseen(windows, d, seed),
        (Protocol::Seen, SplitMode::Windows) => split_seen(windows, seed),
        (Protocol::Seen, SplitMode::Trajectories) => split_seen_by_trajectory(windows, seed),
    }
}

/// Fits the normalizer on the training windows and applies it to every split.
pub fn normalize_bundle(bundle: &mut SplitBundle, method: NormMethod) -> Result<NormStats> {
    let stats = fit_normalizer(&bundle.train, method)?;
    for part in [&mut bundle.train, &mut bundle.validation, &mut bundle.test] {
        apply_normalizer(part, &stats)?;
    }
    Ok(stats)
}

/// Loads the data, then runs [`run_experiment_on`].
pub fn run_experiment(cfg: &ExperimentConfig, data: &DataSpec) -> Result<ExperimentOutcome> {
    run_experiment_on(cfg, &data.load()?)
}

/// Windows → split → normalize → train → evaluate on the test split.
pub fn run_experiment_on(cfg: &ExperimentConfig, trajectories: &[Trajectory]) -> Result<ExperimentOutcome> {
    let started = Instant::now();
    cfg.validate()?;
    let windows = build_windows(trajectories, &cfg.feature_config()).map_err(|e| e.at("features"))?.windows;
    let mut bundle = split_for(windows, cfg.protocol, cfg.split, cfg.seed).map_err(|e| e.at("split"))?;
    let fingerprint = DatasetFingerprint::of(&bundle);
    let norm = normalize_bundle(&mut bundle, cfg.normalization).map_err(|e| e.at("normalize"))?;
    let model = cfg.model_config();
    let train = cfg.train_config();
    let (params, history) = train_model(&bundle, &model, &train).map_err(|e| e.at("train"))?;
    let metrics = evaluate(&params, &model, &bundle.test, history.class_weights, train.batch_size.max(64))
        .map_err(|e| e.at("evaluate"))?;
    let checkpoint = Checkpoint {
        config: model,
        params,
        preprocessing: Some(Preprocessing {
            norm,
            include_speed_limit: cfg.include_speed_limit,
            exclude_drowsy: cfg.exclude_drowsy,
            stride: cfg.stride,
            split_seed: cfg.seed,
            split_by_trajectory: cfg.split == SplitMode::Trajectories,
            class_weights: history.class_weights,
        }),
    };
    let result = ExperimentResult {
        config: cfg.clone(),
        metrics,
        seconds: started.elapsed().as_secs_f64(),
        fingerprint,
        history,
    };
    Ok(ExperimentOutcome { result, checkpoint })
}

/// One grid cell: its config and either a result or the error message.
#[derive(Debug, Clone)]
pub struct GridRow {
    pub config: ExperimentConfig,
    pub outcome: std::result::Result<ExperimentResult, String>,
}

impl GridRow {
    pub fn csv_row(&self) -> String {
        match &self.outcome {
            Ok(r) => r.csv_row(),
            Err(_) => format!("{},error,error,error,error,error", self.config.row_prefix()),
        }
    }
}

/// Runs every cell on up to `jobs` threads. A failing cell becomes an
/// error row; rows come back sorted by NN, Evaluation, timestep and
/// normalization whatever the completion order.
pub fn run_grid(spec: &GridSpec, trajectories: &[Trajectory], jobs: usize) -> Result<Vec<GridRow>> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let mut rows: Vec<GridRow> = pool.install(|| {
        spec.experiments()
            .into_par_iter()
            .map(|config| {
                let outcome = run_experiment_on(&config, trajectories).map(|o| o.result).map_err(|e| {
                    log::warn!("{} failed: {e}", config.row_prefix());
                    e.to_string()
                });
                GridRow { config, outcome }
            })
            .collect()
    });
    rows.sort_by(|a, b| a.config.sort_key().cmp(&b.config.sort_key()));
    Ok(rows)
}

/// Rows under `GRID_CSV_HEADER`. A trailing `seed` column is added when
/// the rows span more than one seed.
pub fn grid_csv(rows: &[GridRow]) -> String {
    let repeated = rows.iter().any(|r| r.config.seed != rows[0].config.seed);
    let mut s = String::from(GRID_CSV_HEADER);
    if repeated {
        s.push_str(",seed");
    }
    s.push('\n');
    for r in rows {
        if repeated {
            let _ = writeln!(s, "{},{}", r.csv_row(), r.config.seed);
        } else {
            let _ = writeln!(s, "{}", r.csv_row());
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::generate_synthetic_dataset;

    fn tiny(protocol: Protocol) -> ExperimentConfig {
        let mut c = ExperimentConfig {
            window_length: 20,
            stride: 10,
            protocol,
            preset: ModelPreset { hidden: 6, ..ModelPreset::desk() },
            ..ExperimentConfig::default()
        };
        c.train.epochs = 2;
        c.train.batch_size = 16;
        c
    }

    fn trajs() -> Vec<Trajectory> {
        generate_synthetic_dataset(SynthSpec::new(5, 6, 1, 120)).unwrap()
    }

    #[test]
    fn unseen_run_isolates_driver() {
        let d5 = DriverId::new(5).unwrap();
        let out = run_experiment_on(&tiny(Protocol::UnseenDriver(d5)), &trajs()).unwrap();
        let f = out.result.fingerprint;
        assert!(f.proves_unseen_integrity(), "{f}");
        assert_eq!(f.held_out, Some(d5));
        let seen = run_experiment_on(&tiny(Protocol::Seen), &trajs()).unwrap();
        assert!(!seen.result.fingerprint.proves_unseen_integrity());
        assert!(seen.result.fingerprint.disjoint);
    }

    #[test]
    fn same_seed_same_row() {
        let t = trajs();
        let a = run_experiment_on(&tiny(Protocol::Seen), &t).unwrap();
        let b = run_experiment_on(&tiny(Protocol::Seen), &t).unwrap();
        assert_eq!(a.result.csv_row(), b.result.csv_row());
        assert_eq!(a.result.history, b.result.history);
    }

    #[test]
    fn errors_carry_stage() {
        let mut c = tiny(Protocol::UnseenDriver(DriverId::new(6).unwrap()));
        c.window_length = 20;
        let few = generate_synthetic_dataset(SynthSpec::new(5, 3, 1, 120)).unwrap();
        let e = run_experiment_on(&c, &few).unwrap_err();
        assert!(matches!(e, Error::Stage { stage: "split", .. }), "{e}");
        assert!(matches!(e.root(), Error::MissingDriver(_)));
    }

    #[test]
    fn grid_rows_sorted_and_parallel_invariant() {
        let spec = GridSpec {
            base: tiny(Protocol::Seen),
            cells: vec![CellKind::Lstm, CellKind::Gru],
            windows: vec![20, 10],
            normalizations: vec![NormMethod::Standardization],
            protocols: vec![Protocol::UnseenDriver(DriverId::new(5).unwrap()), Protocol::Seen],
            seeds: vec![],
            data: None,
        };
        let t = trajs();
        let one = grid_csv(&run_grid(&spec, &t, 1).unwrap());
        let four = grid_csv(&run_grid(&spec, &t, 4).unwrap());
        assert_eq!(one, four);
        let lines: Vec<&str> = one.lines().collect();
        assert_eq!(lines.len(), 9);
        assert_eq!(lines[0], GRID_CSV_HEADER);
        assert!(lines[1].starts_with("GRU,10,Standardization,Seen,"));
        assert!(lines[3].starts_with("GRU,10,Standardization,Unseen,"));
        assert!(lines[8].starts_with("LSTM,20,Standardization,Unseen,"));
    }

    #[test]
    fn failing_cell_becomes_error_row() {
        let mut spec = GridSpec {
            base: tiny(Protocol::Seen),
            cells: vec![CellKind::Gru],
            windows: vec![20, 500],
            normalizations: vec![NormMethod::MinMax],
            protocols: vec![Protocol::Seen],
            seeds: vec![],
            data: None,
        };
        spec.base.train.epochs = 1;
        let rows = run_grid(&spec, &trajs(), 2).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].outcome.is_ok());
        assert_eq!(rows[1].csv_row(), "GRU,500,Min-Max,Seen,error,error,error,error,error");
    }

    #[test]
    fn repeated_seeds_add_a_seed_column() {
        let mut spec = GridSpec {
            base: tiny(Protocol::Seen),
            cells: vec![CellKind::Gru],
            windows: vec![10],
            normalizations: vec![NormMethod::MinMax],
            protocols: vec![Protocol::Seen],
            seeds: vec![7, 3],
            data: None,
        };
        spec.base.train.epochs = 1;
        let csv = grid_csv(&run_grid(&spec, &trajs(), 2).unwrap());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], format!("{GRID_CSV_HEADER},seed"));
        assert!(lines[1].starts_with("GRU,10,Min-Max,Seen,") && lines[1].ends_with(",3"));
        assert!(lines[2].ends_with(",7"));
        spec.seeds = vec![3, 3];
        assert!(spec.validate().is_err());
    }
}
