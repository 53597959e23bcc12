use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use memdisc_cli::metrics::METRICS_HEADER;
use memdisc_cli::sweep::sweep_header;

const SMALL: &str = "\
dataset.n = 300
dataset.dim = 4
dataset.classes = 3
dataset.clusters_per_class = 1
model.hidden = 8
stream.batch_size = 30
stream.burn_in_epochs = 6
stream.aux_epoch = 3
stream.victim_batches = 3
attack.steps = 3
defense.kinds = ST,DSC
defense.at_steps = 3
defense.dsc_steps = 3
run.seeds = 0..2
analysis.k_list = 1..4
analysis.k_window = 1..=4
analysis.ood_n = 20
sweep.axis = beta
sweep.values = 0,0.1
";

fn memdisc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memdisc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, extra: &str) -> String {
    let p = dir.join("small.cfg");
    fs::write(&p, format!("{SMALL}{extra}")).unwrap();
    p.to_str().unwrap().to_string()
}

fn csv(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .map(str::to_string)
        .collect()
}

#[test]
fn every_subcommand_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();

    let r = memdisc(&["run", "--config", &cfg, "--out", out_s]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let metrics = csv(&out.join("metrics.csv"));
    assert_eq!(metrics[0], METRICS_HEADER);
    // 2 seeds x 2 defenses x 2 modes, then mean and std per group.
    assert_eq!(metrics.len(), 1 + 8 + 8);

    let r = memdisc(&["analyze", "--config", &cfg, "--out", out_s]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    for seed in 0..2 {
        let d = out.join("analysis").join(format!("seed_{seed}"));
        assert_eq!(csv(&d.join("interval_sweep.csv")).len(), 1 + 3);
        assert_eq!(csv(&d.join("ood_compare.csv")).len(), 1 + 3);
        assert!(csv(&d.join("correlation.csv")).len() > 1);
    }
    assert_eq!(csv(&out.join("analysis/correlation_summary.csv")).len(), 1 + 4);

    let r = memdisc(&["sweep", "--config", &cfg, "--out", out_s, "--seeds", "0..1"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let table = csv(&out.join("sweep_beta/sweep.csv"));
    assert_eq!(table[0], sweep_header());
    // Per value: 4 data rows, then mean and std for 4 groups.
    assert_eq!(table.len(), 1 + 2 * (4 + 8));

    let r = memdisc(&["gradcheck", "--seeds", "0..3"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let r = memdisc(&["keys"]);
    assert!(String::from_utf8_lossy(&r.stdout).contains("defense.threshold_level"));
}

#[test]
fn configuration_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "defense.bogus = 3\n");
    let r = memdisc(&["run", "--config", &cfg]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("defense.bogus"));

    let cfg = write_config(dir.path(), "stream.aux_epoch = 9\n");
    assert_eq!(memdisc(&["run", "--config", &cfg]).status.code(), Some(1));
    assert_eq!(memdisc(&["run"]).status.code(), Some(1));
    assert_eq!(memdisc(&["gradcheck", "--seeds", "x..y"]).status.code(), Some(1));
}

#[test]
fn analyze_needs_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    let cfg = write_config(dir.path(), "stream.burn_in_epochs = 0\nstream.aux_epoch = 0\nrun.seeds = 0\ndefense.kinds = ST\n");
    let r = memdisc(&["run", "--config", &cfg, "--out", out_s]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let r = memdisc(&["analyze", "--config", &cfg, "--out", out_s]);
    assert_eq!(r.status.code(), Some(2));
    let missing = dir.path().join("nothing");
    let r = memdisc(&["analyze", "--config", &cfg, "--out", missing.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn gradcheck_edge_cases() {
    let r = memdisc(&["gradcheck", "--seeds", "5..5"]);
    assert!(r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("warning"));
    let r = memdisc(&["gradcheck", "--seeds", "0..2", "--inject-fault"]);
    assert_eq!(r.status.code(), Some(3));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("seed 0"), "{err}");
}

#[test]
fn single_value_sweep_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sweep.values = 0.1\nattack.beta = 0.1\nrun.seeds = 0\n");
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    assert!(memdisc(&["run", "--config", &cfg, "--out", out_s]).status.success());
    assert!(memdisc(&["sweep", "--config", &cfg, "--out", out_s]).status.success());
    let run = csv(&out.join("metrics.csv"));
    let sweep = csv(&out.join("sweep_beta/sweep.csv"));
    assert_eq!(run.len(), sweep.len());
    for (a, b) in run.iter().zip(&sweep).skip(1) {
        assert_eq!(format!("beta,0.1,{a}"), *b);
    }
}
