//! End-to-end runs of the `gpvd` binary on toy data.

use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "\
[model]
base_width = 4
stem_width = 4
head_hidden = 4
global_dim = 4
cue_channels = 8

[train]
epochs = 1
warmup_epochs = 0
steps_per_epoch = 2
batch = 1
patch = 32

[eval]
warmup_runs = 0
timed_runs = 1
";

fn gpvd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpvd"))
        .args(args)
        .env_remove("GPVD_DEVICE")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    std::fs::write(&p, SMALL).unwrap();
    p
}

fn manifest(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

fn ok(o: &Output) {
    assert_eq!(code(o), 0, "stderr: {}", stderr(o));
}

/// Trains a tiny checkpoint once per test that needs it.
fn checkpoint(dir: &Path) -> PathBuf {
    let cfg = small_config(dir);
    let out = dir.join("train");
    ok(&gpvd(&["train", "--synthetic", "2", "--size", "32", "--frames", "5", "--config", s(&cfg), "--out", s(&out)]));
    out.join("best.ckpt")
}

#[test]
fn help_exits_zero() {
    let o = gpvd(&["--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["degrade", "train", "denoise", "eval", "ablate", "bench", "diagnose"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn print_defaults_is_valid_toml() {
    let o = gpvd(&["--print-defaults"]);
    ok(&o);
    let t: toml::Table = String::from_utf8_lossy(&o.stdout).parse().unwrap();
    assert!(t.contains_key("train") && t.contains_key("tiling"));
}

#[test]
fn unknown_flag_is_usage_error() {
    let o = gpvd(&["train", "--bogus"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--bogus"));
    assert_eq!(code(&gpvd(&[])), 1);
}

#[test]
fn unknown_key_suggests_nearest() {
    let dir = tempfile::tempdir().unwrap();
    let o = gpvd(&["degrade", "--synthetic", "1", "--set", "tiling.overlapp=4", "--out", s(dir.path())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("did you mean `tiling.overlap`"), "{}", stderr(&o));
    let o = gpvd(&["degrade", "--synthetic", "1", "--set", "train.lr=\"fast\"", "--out", s(dir.path())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("train.lr"));
}

#[test]
fn missing_checkpoint_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ckpt");
    let o = gpvd(&["denoise", "--checkpoint", s(&missing), "--synthetic", "1", "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains(s(&missing)), "{}", stderr(&o));
}

#[test]
fn unsupported_device_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_gpvd"))
        .args(["degrade", "--synthetic", "1", "--size", "32", "--out", s(dir.path())])
        .env("GPVD_DEVICE", "cuda:0")
        .output()
        .unwrap();
    assert_ne!(code(&o), 0);
    assert!(stderr(&o).contains("GPVD_DEVICE"));
}

#[test]
fn flags_beat_config_and_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[tiling]\ntile = 50\noverlap = 10\n[train]\nlr = 5e-4\n").unwrap();
    let out = dir.path().join("out");
    let o = gpvd(&[
        "degrade", "--synthetic", "1", "--size", "32", "--frames", "3", "--config", s(&cfg), "--tile", "96",
        "--set", "train.lr=1e-3", "--out", s(&out),
    ]);
    ok(&o);
    let m = manifest(&out);
    assert_eq!(m["config"]["tiling"]["tile"], 96);
    assert_eq!(m["config"]["tiling"]["overlap"], 10);
    assert_eq!(m["config"]["train"]["lr"], 1e-3);
    let ov = m["overrides"].as_array().unwrap();
    let tile = ov.iter().find(|o| o["key"] == "tiling.tile").unwrap();
    assert_eq!(tile["value"], 96);
    assert_eq!(tile["replaced"], 50);
    let lr = ov.iter().find(|o| o["key"] == "train.lr").unwrap();
    assert_eq!(lr["replaced"], 5e-4);
    assert!(out.join("config.toml").is_file());
    assert!(out.join("clip_000/degradation.json").is_file());
}

#[test]
fn deterministic_runs_match() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&gpvd(&[
            "train", "--synthetic", "2", "--size", "32", "--frames", "5", "--config", s(&cfg), "--deterministic",
            "--seed", "3", "--out", s(&out),
        ]));
        (std::fs::read(out.join("last.ckpt")).unwrap(), manifest(&out)["outputs"]["final_loss"].clone())
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(a, b);
}

#[test]
fn every_subcommand_runs_on_toy_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let ckpt = checkpoint(dir.path());
    assert!(ckpt.is_file());
    let train_out = ckpt.parent().unwrap();
    assert!(train_out.join("metrics.csv").is_file());
    assert_eq!(manifest(train_out)["command"], "train");

    let deg = dir.path().join("deg");
    ok(&gpvd(&["degrade", "--synthetic", "2", "--size", "64", "--frames", "5", "--out", s(&deg)]));
    assert!(deg.join("clip_001").is_dir());

    let den = dir.path().join("den");
    ok(&gpvd(&[
        "denoise", "--checkpoint", s(&ckpt), "--data", s(&deg), "--tile", "32", "--overlap", "8", "--out", s(&den),
    ]));
    assert!(den.join("clip_000").is_dir());

    let ev = dir.path().join("eval");
    ok(&gpvd(&["eval", "--checkpoint", s(&ckpt), "--synthetic", "1", "--config", s(&cfg), "--out", s(&ev)]));
    for f in ["metrics.csv", "metrics.json", "sweep.csv"] {
        assert!(ev.join(f).is_file(), "{f}");
    }

    let ab = dir.path().join("ablate");
    ok(&gpvd(&[
        "ablate", "--synthetic", "1", "--size", "32", "--frames", "5", "--variants", "full,backbone", "--config",
        s(&cfg), "--out", s(&ab),
    ]));
    let table = std::fs::read_to_string(ab.join("ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);

    let be = dir.path().join("bench");
    ok(&gpvd(&["bench", "--checkpoint", s(&ckpt), "--height", "64", "--width", "64", "--config", s(&cfg), "--out", s(&be)]));
    assert!(be.join("bench.json").is_file());

    let di = dir.path().join("diag");
    ok(&gpvd(&["diagnose", "--checkpoint", s(&ckpt), "--synthetic", "1", "--out", s(&di)]));
    assert!(manifest(&di)["outputs"]["files"].as_u64().unwrap() > 0);
}
