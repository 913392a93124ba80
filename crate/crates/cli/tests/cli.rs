use std::process::Command;

fn otfs_sim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_otfs-sim"))
}

#[test]
fn estimate_writes_the_csv_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("est.csv");
    let status = otfs_sim()
        .args(["estimate", "--trials", "2", "--seed", "3", "--estimator", "vbl", "--estimator", "somp", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# otfs-sim sweep axis=snr"));
    assert!(lines.next().unwrap().starts_with("kind,axis,axis_value,seed,snr_db,estimator,predictor,nmse_ce_db"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2 * (2 + 1));
    assert!(rows.iter().any(|r| r.contains(",somp,none,")));
}

#[test]
fn config_file_overrides_the_profile() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "n_f = 1\nsnr_db = [0.0, 20.0]\n").unwrap();
    let output = otfs_sim()
        .args(["predict", "--trials", "1", "--predictor", "prony", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let text = String::from_utf8(output.stdout).unwrap();
    let agg: Vec<&str> = text.lines().filter(|l| l.starts_with("agg,")).collect();
    assert_eq!(agg.len(), 2);
    assert!(agg[1].starts_with("agg,snr,20,"));
    let cells: Vec<&str> = agg[0].split(',').collect();
    assert!(!cells[8].is_empty() && cells[9].is_empty());
}

#[test]
fn sweep_over_velocity() {
    let output = otfs_sim()
        .args(["sweep", "--axis", "velocity", "--values", "30,120", "--trials", "1", "--estimator", "perfect"])
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let text = String::from_utf8(output.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("raw,velocity,")).count(), 2);
}

#[test]
fn bad_input_is_reported() {
    for args in [
        vec!["estimate", "--profile", "huge"],
        vec!["sweep", "--axis", "colour", "--values", "1"],
        vec!["sweep", "--axis", "n_f"],
        vec!["predict", "--predictor", "oracle"],
    ] {
        let output = otfs_sim().args(&args).output().unwrap();
        assert_eq!(output.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&output.stderr).starts_with("error: "));
    }
}

#[test]
fn selftest_runs_a_filtered_subset() {
    let output = otfs_sim().args(["selftest", "shift", "orthonormality"]).output().unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS ")).count(), 2);
}
