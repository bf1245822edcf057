use drivestyle::bench::{run_experiment_on, ExperimentConfig, ModelPreset};
use drivestyle::features::{build_windows, read_windows_file, write_windows_file, FeatureConfig, NormMethod, Protocol};
use drivestyle::ingest::{
    generate_synthetic_dataset, scan_dataset, write_dataset, ScanOptions, SynthSpec, DEFAULT_RAW_FILE,
};
use drivestyle::metrics::f1_score;
use drivestyle::rnn::{load_checkpoint, save_checkpoint, CellKind};
use drivestyle::train::predict;

const REFERENCE_RESULTS: &str = include_str!("data/reference_results.tsv");

#[test]
fn written_dataset_scans_back_identically() {
    let mut trajs = generate_synthetic_dataset(SynthSpec::new(11, 6, 1, 90)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &trajs, DEFAULT_RAW_FILE).unwrap();
    let report = scan_dataset(dir.path(), &ScanOptions::default()).unwrap();
    assert!(report.skipped.is_empty());
    assert_eq!(report.lines.skipped(), 0);
    let mut scanned = report.trajectories;
    trajs.sort_by(|a, b| a.name.cmp(&b.name));
    scanned.sort_by(|a, b| a.name.cmp(&b.name));
    assert_eq!(trajs, scanned);
}

#[test]
fn stray_folders_are_skipped() {
    let trajs = generate_synthetic_dataset(SynthSpec::new(12, 2, 1, 60)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &trajs, DEFAULT_RAW_FILE).unwrap();
    let stray = dir.path().join("notes");
    std::fs::create_dir(&stray).unwrap();
    std::fs::write(stray.join(DEFAULT_RAW_FILE), "1 2 3\n").unwrap();
    let report = scan_dataset(dir.path(), &ScanOptions::default()).unwrap();
    assert_eq!(report.trajectories.len(), trajs.len());
    assert_eq!(report.skipped.len(), 1);
}

#[test]
fn windows_file_round_trip_from_dataset() {
    let trajs = generate_synthetic_dataset(SynthSpec::new(13, 3, 1, 80)).unwrap();
    let cfg = FeatureConfig { window_length: 20, stride: 7, include_speed_limit: true, exclude_drowsy: false };
    let set = build_windows(&trajs, &cfg).unwrap();
    assert!(!set.windows.is_empty());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    write_windows_file(&path, &set.windows).unwrap();
    assert_eq!(read_windows_file(&path).unwrap(), set.windows);
}

#[test]
fn checkpoint_reproduces_predictions() {
    let trajs = generate_synthetic_dataset(SynthSpec::new(14, 6, 1, 120)).unwrap();
    let mut cfg = ExperimentConfig {
        cell: CellKind::Gru,
        window_length: 30,
        normalization: NormMethod::MinMax,
        protocol: Protocol::Seen,
        stride: 10,
        preset: ModelPreset { hidden: 6, batchnorm: true, ..ModelPreset::desk() },
        ..ExperimentConfig::default()
    };
    cfg.train.epochs = 2;
    let out = run_experiment_on(&cfg, &trajs).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &out.checkpoint).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, out.checkpoint);

    let windows = build_windows(&trajs, &cfg.feature_config()).unwrap().windows;
    let a = predict(&out.checkpoint.params, &out.checkpoint.config, &windows, 16).unwrap();
    let b = predict(&loaded.params, &loaded.config, &windows, 7).unwrap();
    assert_eq!(a, b);
}

#[test]
fn reference_results_are_internally_consistent() {
    let rows: Vec<Vec<&str>> = REFERENCE_RESULTS.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 24);
    for r in &rows {
        let n = |i: usize| r[i].parse::<f64>().unwrap();
        assert!((f1_score(n(6), n(7)) - n(8)).abs() < 1e-6, "{r:?}");
        for i in 5..=8 {
            assert!((0.0..=1.0).contains(&n(i)));
        }
    }
}
