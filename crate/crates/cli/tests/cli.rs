use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hebm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hebm")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = hebm(args);
    assert!(
        out.status.success(),
        "hebm {args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("hebm-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn training_rows(dir: &Path) -> Vec<(f64, f64)> {
    fs::read_to_string(dir.join("training.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (f[1], f[2])
        })
        .collect()
}

#[test]
fn datagen_is_deterministic_and_creates_dirs() {
    let a = tmp("dg-a").join("nested/deeper");
    let b = tmp("dg-b");
    ok(&["datagen", "--n-traj", "10", "--seed", "1", "--out", s(&a)]);
    ok(&["datagen", "--n-traj", "10", "--seed", "1", "--out", s(&b)]);
    let da = fs::read(a.join("dataset.csv")).unwrap();
    assert_eq!(da, fs::read(b.join("dataset.csv")).unwrap());
    assert_eq!(fs::read(a.join("dataset.meta")).unwrap(), fs::read(b.join("dataset.meta")).unwrap());
    let c = tmp("dg-c");
    ok(&["datagen", "--n-traj", "10", "--seed", "2", "--out", s(&c)]);
    assert_ne!(da, fs::read(c.join("dataset.csv")).unwrap());
}

#[test]
fn training_smoke_and_zero_rate() {
    let dir = tmp("train");
    ok(&["datagen", "--n-traj", "100", "--seed", "3", "--out", s(&dir)]);
    let out = ok(&["train", "--epochs", "5", "--seed", "3", "--out", s(&dir)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("epoch   5"));
    let rows = training_rows(&dir);
    assert_eq!(rows.len(), 6);
    assert!(rows[5].1 < rows[0].1, "validation loss did not drop: {rows:?}");

    let frozen = tmp("train-frozen");
    fs::create_dir_all(&frozen).unwrap();
    let out = ok(&["train", "--epochs", "1", "--lr", "0", "--seed", "3", "--data", s(&dir), "--out", s(&frozen)]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning rate is 0"));
    let rows = training_rows(&frozen);
    assert_eq!(rows[0].1, rows[1].1);
}

#[test]
fn resume_matches_uninterrupted_training() {
    let data = tmp("resume-data");
    ok(&["datagen", "--n-traj", "6", "--seed", "4", "--out", s(&data)]);
    let straight = tmp("resume-straight");
    ok(&["train", "--epochs", "3", "--seed", "4", "--data", s(&data), "--out", s(&straight)]);
    let first = tmp("resume-first");
    ok(&["train", "--epochs", "1", "--seed", "4", "--data", s(&data), "--out", s(&first)]);
    let second = tmp("resume-second");
    let ckpt = first.join("checkpoint.bin");
    ok(&["train", "--epochs", "3", "--seed", "4", "--data", s(&data), "--resume", s(&ckpt), "--out", s(&second)]);
    assert_eq!(fs::read(straight.join("weights.bin")).unwrap(), fs::read(second.join("weights.bin")).unwrap());
    assert_eq!(fs::read(straight.join("training.csv")).unwrap(), fs::read(second.join("training.csv")).unwrap());
}

#[test]
fn usage_and_data_errors() {
    let dir = tmp("errors");
    assert_eq!(hebm(&["run", "--scenario", "slalom", "--speed", "5", "--model", "kbm", "--out", s(&dir)]).status.code(), Some(2));
    assert_eq!(hebm(&["frobnicate"]).status.code(), Some(2));
    for speed in ["--speed=1e6", "--speed=NaN", "--speed=-3"] {
        let out = hebm(&["run", "--scenario", "lane_change", speed, "--model", "kbm", "--out", s(&dir)]);
        assert_eq!(out.status.code(), Some(2), "speed {speed}");
    }
    assert_eq!(hebm(&["--set", "mppi.lambda=0", "datagen"]).status.code(), Some(2));
    assert_eq!(hebm(&["--set", "nope=1", "datagen"]).status.code(), Some(2));
    assert_eq!(hebm(&["train", "--out", s(&dir)]).status.code(), Some(3));
    let tiny = tmp("errors-tiny");
    ok(&["datagen", "--n-traj", "2", "--out", s(&tiny)]);
    let out = hebm(&["train", "--out", s(&tiny), "--set", "train.batch_size=100000"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("datagen --n-traj"));
}

#[test]
fn config_dump_round_trips() {
    let dir = tmp("config");
    fs::create_dir_all(&dir).unwrap();
    let first = ok(&["--seed", "11", "--set", "mppi.samples=99", "--dump-config", "datagen"]).stdout;
    let file = dir.join("effective.txt");
    fs::write(&file, &first).unwrap();
    let second = ok(&["--config", s(&file), "--dump-config", "datagen"]).stdout;
    assert_eq!(first, second);
    assert!(String::from_utf8_lossy(&first).contains("mppi.samples = 99"));
}

#[test]
fn runs_and_report() {
    let dir = tmp("runs");
    let set = ["--set", "mppi.samples=16", "--set", "run.oval_distance=30"];
    let kbm: Vec<&str> = set.iter().copied().chain(["run", "--scenario", "oval_ccw", "--speed", "6", "--model", "kbm", "--out", s(&dir)]).collect();
    ok(&kbm);

    ok(&["datagen", "--n-traj", "4", "--out", s(&dir)]);
    ok(&["train", "--epochs", "1", "--out", s(&dir)]);
    let hebm_run: Vec<&str> =
        set.iter().copied().chain(["run", "--scenario", "lane_change", "--speed", "10", "--model", "hebm", "--out", s(&dir)]).collect();
    let out = ok(&hebm_run);
    assert!(String::from_utf8_lossy(&out.stdout).contains("lane_change_10 HEBM mae"));

    let runs = dir.join("runs");
    let a = runs.join("oval_ccw_6_kbm");
    let b = runs.join("lane_change_10_hebm");
    let out = ok(&["report", s(&a), s(&b), "--out", s(&dir)]);
    let csv = fs::read_to_string(dir.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(String::from_utf8_lossy(&out.stdout).contains("| lane_change_10 | 10 | HEBM |"));
    for run in [&a, &b] {
        for f in ["trajectory.svg", "curvature.svg", "lateral_error.svg", "log.csv", "plan.csv", "config.txt"] {
            assert!(run.join(f).is_file(), "{} missing", f);
        }
    }

    // a summary that disagrees with its log is a data error
    let record = fs::read_to_string(a.join("run.txt")).unwrap();
    let tampered: String =
        record.lines().map(|l| if l.starts_with("mae") { "mae = 123".to_string() } else { l.to_string() }).collect::<Vec<_>>().join("\n");
    fs::write(a.join("run.txt"), tampered).unwrap();
    assert_eq!(hebm(&["report", s(&a), "--out", s(&dir)]).status.code(), Some(3));
}
