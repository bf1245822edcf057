//! `drivestyle` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use drivestyle::bench::{
    grid_csv, load_config_file, run_experiment_on, run_grid, split_for, DataSpec, GridSpec, SplitMode, GRID_CSV_HEADER,
};
use drivestyle::features::{apply_normalizer, build_windows, write_windows_file, FeatureConfig, Protocol};
use drivestyle::ingest::{generate_synthetic_dataset, scan_dataset, write_dataset, DriverId, ScanOptions, SynthSpec};
use drivestyle::rnn::{load_checkpoint, save_checkpoint, CellKind, ModelConfig};
use drivestyle::train::{evaluate, gradient_check};
use drivestyle::{Error, ErrorClass};

#[derive(Parser)]
#[command(name = "drivestyle", version, about = "Aggressive-driving detection from GPS trips with GRU/LSTM networks")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan a dataset directory and report statistics.
    Ingest(IngestArgs),
    /// Write a synthetic dataset in the trip-folder layout.
    Synth(SynthArgs),
    /// Train one experiment and save its checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a protocol's test split.
    Eval(EvalArgs),
    /// Run every experiment of a config grid and write the results CSV.
    Grid(GridArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct IngestArgs {
    root: PathBuf,
    /// Fail on the first malformed line.
    #[arg(long)]
    strict: bool,
    /// Write all windows to this binary windows file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 120)]
    window: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Append the `limit − speed` feature.
    #[arg(long)]
    speed_limit_feature: bool,
    #[arg(long)]
    exclude_drowsy: bool,
    #[arg(long, default_value = drivestyle::ingest::DEFAULT_RAW_FILE)]
    raw_file: String,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 6)]
    drivers: usize,
    /// Trips per driver and behaviour.
    #[arg(long, default_value_t = 2)]
    trips: usize,
    /// Trip length in seconds.
    #[arg(long, default_value_t = 300)]
    len: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[group(multiple = false)]
struct DataArgs {
    /// Dataset root (overrides the config).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Use a synthetic dataset with this seed (overrides the config).
    #[arg(long)]
    synth_seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Write the per-epoch history CSV here instead of stdout.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// seen or unseen
    #[arg(long)]
    protocol: String,
    #[arg(long, default_value = "D5")]
    holdout: String,
    /// Also write the result row as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value = "gru")]
    cell: String,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    hidden: usize,
    #[arg(long, default_value_t = 6)]
    window: usize,
    #[arg(long, default_value_t = 3)]
    features: usize,
    #[arg(long)]
    batchnorm: bool,
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Failure threshold; defaults to 1e-4, or 1e-3 with batch-norm.
    #[arg(long)]
    threshold: Option<f64>,
}

/// Failure that maps to the numeric exit code without a library error.
#[derive(Debug)]
struct NumericFailure(String);

impl std::fmt::Display for NumericFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericFailure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numeric => 3,
            };
        }
        if cause.downcast_ref::<NumericFailure>().is_some() {
            return 3;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Grid(a) => grid(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn ingest(a: IngestArgs) -> anyhow::Result<()> {
    let opts = ScanOptions { raw_file: a.raw_file, strict: a.strict, ..ScanOptions::default() };
    let report = scan_dataset(&a.root, &opts)?;
    let t = &report.trajectories;
    println!("trajectories  {}", t.len());
    println!("samples       {}", t.iter().map(|x| x.records.len()).sum::<usize>());
    let l = &report.lines;
    println!(
        "lines         {} (blank {}, malformed {}, out of range {}, out of order {})",
        l.lines, l.blank, l.malformed, l.out_of_range, l.out_of_order
    );
    let mut per: BTreeMap<(DriverId, &str), usize> = BTreeMap::new();
    for x in t {
        *per.entry((x.driver, x.behaviour.token())).or_default() += 1;
    }
    for ((d, b), n) in per {
        println!("  {d} {b:<10} {n}");
    }
    for (path, why) in &report.skipped {
        println!("skipped       {}: {why}", path.display());
    }
    if let Some(out) = a.out {
        let cfg = FeatureConfig {
            window_length: a.window,
            stride: a.stride,
            include_speed_limit: a.speed_limit_feature,
            exclude_drowsy: a.exclude_drowsy,
        };
        let set = build_windows(t, &cfg)?;
        write_windows_file(&out, &set.windows)?;
        println!("windows       {} written to {}", set.windows.len(), out.display());
    }
    Ok(())
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let trajs = generate_synthetic_dataset(SynthSpec::new(a.seed, a.drivers, a.trips, a.len))?;
    write_dataset(&a.out, &trajs, drivestyle::ingest::DEFAULT_RAW_FILE)?;
    println!("{} trips written to {}", trajs.len(), a.out.display());
    Ok(())
}

fn resolve_data(spec: &GridSpec, args: &DataArgs) -> anyhow::Result<DataSpec> {
    if let Some(root) = &args.data {
        let (raw_file, strict) = match &spec.data {
            Some(DataSpec::Directory { raw_file, strict, .. }) => (raw_file.clone(), *strict),
            _ => (drivestyle::ingest::DEFAULT_RAW_FILE.to_string(), false),
        };
        return Ok(DataSpec::Directory { root: root.clone(), raw_file, strict });
    }
    if let Some(seed) = args.synth_seed {
        let s = match &spec.data {
            Some(DataSpec::Synthetic(s)) => SynthSpec { seed, ..*s },
            _ => SynthSpec::new(seed, 6, 2, 300),
        };
        return Ok(DataSpec::Synthetic(s));
    }
    spec.data.clone().ok_or_else(|| {
        Error::InvalidConfig("no dataset: set `data` or `synth_seed`, or pass --data/--synth-seed".into()).into()
    })
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let spec = load_config_file(&a.config)?;
    let cfg = spec.single()?;
    let trajs = resolve_data(&spec, &a.data)?.load()?;
    let out = run_experiment_on(&cfg, &trajs)?;
    save_checkpoint(&a.checkpoint, &out.checkpoint)?;
    let r = &out.result;
    let csv = r.history.to_csv();
    match &a.history {
        Some(p) => write_file(p, &csv)?,
        None => print!("{csv}"),
    }
    eprintln!("{}", r.fingerprint);
    eprintln!("best epoch {} of {}", r.history.best_epoch, r.history.records.len());
    eprintln!("test set:\n{}", r.metrics);
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let pre = ckpt
        .preprocessing
        .as_ref()
        .ok_or_else(|| anyhow!(Error::InvalidConfig("checkpoint carries no preprocessing settings".into())))?;
    let protocol = if drivestyle::bench::parse_protocol_name(&a.protocol)? {
        Protocol::UnseenDriver(a.holdout.parse()?)
    } else {
        Protocol::Seen
    };
    let trajs = scan_dataset(&a.data, &ScanOptions::default())?.trajectories;
    let model: &ModelConfig = &ckpt.config;
    let fcfg = FeatureConfig {
        window_length: model.window_length,
        stride: pre.stride,
        include_speed_limit: pre.include_speed_limit,
        exclude_drowsy: pre.exclude_drowsy,
    };
    let windows = build_windows(&trajs, &fcfg).map_err(|e| e.at("features"))?.windows;
    let split = if pre.split_by_trajectory { SplitMode::Trajectories } else { SplitMode::Windows };
    let mut bundle = split_for(windows, protocol, split, pre.split_seed).map_err(|e| e.at("split"))?;
    apply_normalizer(&mut bundle.test, &pre.norm)?;
    let report = evaluate(&ckpt.params, model, &bundle.test, pre.class_weights, 64)?;
    let row = format!(
        "{},{},{},{},{}",
        model.cell.label(),
        model.window_length,
        pre.norm.method.label(),
        protocol.label(),
        report.csv_fields()
    );
    println!("{report}");
    println!("{GRID_CSV_HEADER}\n{row}");
    if let Some(out) = a.out {
        write_file(&out, &format!("{GRID_CSV_HEADER}\n{row}\n"))?;
    }
    Ok(())
}

fn grid(a: GridArgs) -> anyhow::Result<()> {
    let spec = load_config_file(&a.config)?;
    let trajs = resolve_data(&spec, &a.data)?.load()?;
    let rows = run_grid(&spec, &trajs, a.jobs)?;
    write_file(&a.out, &grid_csv(&rows))?;
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    for r in &rows {
        if let Ok(res) = &r.outcome {
            if matches!(res.config.protocol, Protocol::UnseenDriver(_)) && !res.fingerprint.proves_unseen_integrity() {
                return Err(anyhow!("held-out driver leaked into training for {}", r.csv_row()));
            }
        }
    }
    println!("{} rows written to {} ({failed} failed)", rows.len(), a.out.display());
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> anyhow::Result<()> {
    let cell: CellKind = a.cell.parse()?;
    if a.layers > 3 || a.hidden > 8 || a.window > 10 || a.features > 16 {
        return Err(Error::InvalidConfig("gradcheck is limited to ≤ 3 layers, ≤ 8 units, W ≤ 10, F ≤ 16".into()).into());
    }
    let config = ModelConfig {
        layers: a.layers,
        hidden: a.hidden,
        dropout: a.dropout,
        batchnorm: a.batchnorm,
        ..ModelConfig::desk(cell, a.features, a.window)
    };
    let threshold = a.threshold.unwrap_or(if a.batchnorm { 1e-3 } else { 1e-4 });
    let err = gradient_check(&config, a.seed)?;
    println!("{cell} {}x{} W={} batchnorm={} max relative error {err:.3e}", a.layers, a.hidden, a.window, a.batchnorm);
    if err < threshold {
        Ok(())
    } else {
        Err(NumericFailure(format!("max relative error {err:.3e} ≥ {threshold:.0e}")).into())
    }
}
