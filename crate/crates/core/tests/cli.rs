//! The `comet` binary end to end on tiny datasets.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn comet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_comet"))
        .args(["--output-dir", dir.to_str().unwrap()])
        .args(["--n-per-class", "5", "--epochs-pretrain", "1", "--epochs-joint", "1"])
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn read(dir: &Path, rel: &str) -> Vec<u8> {
    fs::read(dir.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

#[test]
fn gen_data_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let stdout = ok(&comet(a.path(), &["gen-data"]));
    assert!(stdout.contains("K         12"), "{stdout}");
    ok(&comet(b.path(), &["gen-data"]));
    assert_eq!(read(a.path(), "dataset/data.cmds"), read(b.path(), "dataset/data.cmds"));
    let echo = |d: &Path| -> Vec<String> {
        let text = String::from_utf8(read(d, "config.txt")).unwrap();
        text.lines()
            .filter(|l| !l.starts_with("output_dir"))
            .map(String::from)
            .collect()
    };
    assert_eq!(echo(a.path()), echo(b.path()));
    assert!(echo(a.path()).contains(&"n_per_class = 5".to_string()));
}

#[test]
fn fgbg_class_count_follows_flag() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&comet(
        dir.path(),
        &["--generator", "fgbg", "--n", "36", "--classes", "9", "gen-data"],
    ));
    assert!(stdout.contains("K         9"), "{stdout}");
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("exp.txt");
    fs::write(&file, "generator = fgbg\nclasses = 5\nn = 40\n").unwrap();
    let stdout = ok(&comet(
        dir.path(),
        &["--config", file.to_str().unwrap(), "--classes", "4", "gen-data"],
    ));
    assert!(stdout.contains("K         4"), "{stdout}");
    // the echoed configuration reproduces the run on its own
    let echo = dir.path().join("config.txt");
    let again = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_comet"))
        .args([
            "--config",
            echo.to_str().unwrap(),
            "--output-dir",
            again.path().to_str().unwrap(),
            "gen-data",
        ])
        .output()
        .unwrap();
    ok(&out);
    assert_eq!(
        read(dir.path(), "dataset/data.cmds"),
        read(again.path(), "dataset/data.cmds")
    );
}

#[test]
fn train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&comet(d, &["gen-data"]));
    let stdout = ok(&comet(d, &["pretrain"]));
    assert!(stdout.contains("val acc"));
    assert!(d.join("checkpoints/detector.cmtp").exists());
    assert!(d.join("logs/pretrain.csv").exists());

    ok(&comet(d, &["train"]));
    for name in ["selector", "predictor", "detector"] {
        assert!(d.join(format!("checkpoints/{name}.cmtp")).exists(), "{name}");
    }
    let log = String::from_utf8(read(d, "logs/train.csv")).unwrap();
    assert!(
        log.starts_with("epoch,l_p,l_d_out,reg,total,train_acc,val_acc,mean_mask\n"),
        "{log}"
    );
    let first_log = read(d, "logs/train.csv");
    ok(&comet(d, &["train"]));
    assert_eq!(first_log, read(d, "logs/train.csv"), "rerun must reproduce the log");

    ok(&comet(d, &["--n-maps", "3", "eval"]));
    let report = String::from_utf8(read(d, "reports/report.csv")).unwrap();
    assert!(report.starts_with("metric,variant,dataset,value,seed\n"), "{report}");
    for metric in ["accuracy", "pxap", "iou_auc"] {
        assert!(
            report.lines().any(|l| l.starts_with(&format!("{metric},COMET,"))),
            "{metric}"
        );
    }
    for i in 0..3 {
        let pgm = read(d, &format!("maps/map_{i:03}.pgm"));
        assert!(pgm.starts_with(b"P5\n32 32\n255\n") && pgm.len() == 13 + 32 * 32);
        assert!(d.join(format!("maps/gt_{i:03}.pgm")).exists());
    }
    assert!(!d.join("maps/map_003.pgm").exists());
    let first_report = read(d, "reports/report.csv");
    ok(&comet(d, &["--n-maps", "3", "eval"]));
    assert_eq!(first_report, read(d, "reports/report.csv"));

    let table = ok(&comet(d, &["report"]));
    assert!(table.contains("pxap"));
    assert!(d.join("reports/summary.csv").exists());
}

#[test]
fn variant_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&comet(d, &["gen-data"]));
    ok(&comet(d, &["--variant", "FP", "train"]));
    assert!(d.join("checkpoints/selector.cmtp").exists());
    assert!(!d.join("checkpoints/detector.cmtp").exists(), "FP keeps no detector");
    ok(&comet(d, &["--variant", "TD", "train"]));
    assert!(d.join("checkpoints/detector.cmtp").exists());
    assert!(d.join("checkpoints/detector_tuned.cmtp").exists());
    ok(&comet(d, &["--variant", "DR", "train"]));
    assert!(d.join("checkpoints/detector_dr.cmtp").exists());
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = comet(d, &["train"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("gen-data"));
    assert!(d.join("reports").is_dir(), "layout exists even after a failure");
    assert_eq!(comet(d, &["eval"]).status.code(), Some(1));
    assert_eq!(comet(d, &["--t", "2", "gen-data"]).status.code(), Some(1));
    assert_eq!(comet(d, &["--lr", "nan", "gen-data"]).status.code(), Some(1));
    assert_eq!(comet(d, &["bogus"]).status.code(), Some(1));
    let help = Command::new(env!("CARGO_BIN_EXE_comet"))
        .arg("--help")
        .output()
        .unwrap();
    assert_eq!(help.status.code(), Some(0));
}

#[test]
fn tiny_ablation_on_fgbg() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = comet(
        d,
        &[
            "--generator",
            "fgbg",
            "--n",
            "32",
            "--classes",
            "4",
            "--n-seeds",
            "2",
            "ablate",
            "--workers",
            "2",
        ],
    );
    let code = out.status.code();
    assert!(
        code == Some(0) || code == Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(
        stdout
            .lines()
            .filter(|l| l.starts_with("PASS") || l.starts_with("FAIL"))
            .count()
            >= 8
    );
    assert_eq!(code == Some(0), !stdout.contains("FAIL"));

    let csv = String::from_utf8(read(d, "reports/ablation.csv")).unwrap();
    let pxap_rows: Vec<&str> = csv.lines().filter(|l| l.starts_with("pxap,")).collect();
    for v in ["COMET", "TD", "NO_DETECTOR", "FP", "DR"] {
        assert_eq!(
            pxap_rows.iter().filter(|l| l.split(',').nth(1) == Some(v)).count(),
            2,
            "{v}"
        );
    }
    let inter = String::from_utf8(read(d, "reports/interlocking.csv")).unwrap();
    assert!(inter.starts_with("seed,fit,input,ce,accuracy\n"));
    assert_eq!(inter.lines().count(), 1 + 2 * 4);
}
