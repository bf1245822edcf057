use std::process::Command;

fn code(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_drivestyle")).args(args).output().unwrap().status.code().unwrap()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["gradcheck", "--cell", "tcn"]), 1);
    assert_eq!(code(&["gradcheck", "--layers", "9"]), 1);
}

#[test]
fn missing_data_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    assert_eq!(code(&["ingest", missing.to_str().unwrap()]), 2);
    assert_eq!(code(&["ingest", dir.path().to_str().unwrap()]), 2);
}

#[test]
fn gradcheck_threshold_failure_exits_3() {
    assert_eq!(code(&["gradcheck", "--threshold", "0"]), 3);
    assert_eq!(code(&["gradcheck", "--cell", "lstm"]), 0);
}
