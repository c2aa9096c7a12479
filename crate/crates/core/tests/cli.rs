use std::fs;
use std::path::Path;

use clap::Parser;
use dipred::cli::{self, Cli};
use dipred::config::RunConfig;
use dipred::evaluation::read_report;

const TINY: [&str; 13] = [
    "data.train_videos=1",
    "data.val_videos=0",
    "data.test_videos=1",
    "data.classes=2",
    "data.actions_per_video=3",
    "data.duration=20,25",
    "data.gap=0,4",
    "prednet.channels=3,4",
    "prednet.layer_weights=1,0",
    "prednet.epochs=1",
    "prednet.seq_len=4",
    "prednet.context=3",
    "eval.horizon=2",
];

fn tiny() -> RunConfig {
    let mut cfg = RunConfig::default();
    for s in TINY {
        cfg.set_pair(s).unwrap();
    }
    cfg.validate().unwrap();
    cfg
}

fn run(out: &Path, stage: &str, extra: &[&str]) -> dipred::Result<()> {
    let out = out.display().to_string();
    let mut args = vec!["dipred", stage, "--out", out.as_str()];
    for s in TINY {
        args.extend(["--set", s]);
    }
    args.extend(extra);
    cli::run(&Cli::try_parse_from(&args).unwrap())
}

fn frame_count(dir: &Path) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("frame_"))
        .count()
}

#[test]
fn gen_refuses_to_overwrite_without_force() {
    let dir = tempfile::tempdir().unwrap();
    run(dir.path(), "gen", &[]).unwrap();
    let err = run(dir.path(), "gen", &[]).unwrap_err();
    assert!(err.to_string().contains("--force"), "{err}");
    run(dir.path(), "gen", &["--force"]).unwrap();
}

#[test]
fn gen_with_zero_videos_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.set("data.test_videos", "0").unwrap();
    assert!(cli::cmd_gen(&cfg, dir.path(), false).is_err());
    cfg.set("data.test_videos", "1").unwrap();
    cfg.set("data.train_videos", "0").unwrap();
    assert!(cli::cmd_gen(&cfg, dir.path(), false).is_err());
}

#[test]
fn unknown_override_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(dir.path(), "gen", &["--set", "prednet.no_such_key=1"]).is_err());
}

#[test]
fn di_count_matches_window_arithmetic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    cli::cmd_gen(&cfg, dir.path(), false).unwrap();
    let totals = cli::cmd_di(&cfg, dir.path()).unwrap();
    let (w, s) = (cfg.window.window, cfg.window.stride);
    for (k, split) in cli::SPLITS.iter().enumerate() {
        let data = dir.path().join("data").join(split);
        let mut expected = 0;
        if data.is_dir() {
            for v in fs::read_dir(&data).unwrap() {
                let t = frame_count(&v.unwrap().path());
                if t >= w {
                    expected += (t - w) / s + 1;
                }
            }
        }
        assert_eq!(totals[k], expected, "{split}");
        let manifest = fs::read_to_string(dir.path().join("di").join(split).join("manifest.csv")).unwrap();
        assert_eq!(manifest.lines().count(), expected + 1, "{split}");
    }
}

#[test]
fn eval_without_classifier_reports_mse_only() {
    let dir = tempfile::tempdir().unwrap();
    for stage in ["gen", "di", "train", "eval"] {
        run(dir.path(), stage, &[]).unwrap();
    }
    let rows = read_report(&dir.path().join("report.csv")).unwrap();
    assert!(rows.iter().any(|r| r.metric == "classifier" && r.name == "absent"));
    assert!(rows.iter().all(|r| r.metric != "accuracy" && r.metric != "avg_of_td"));
    let model = rows.iter().find(|r| r.metric == "mse" && r.name == "model").unwrap();
    assert!(model.value.is_finite() && model.count > 0);
    assert!(!dir.path().join("horizon.csv").exists());
    assert!(dir.path().join("config.resolved.txt").is_file());
}

#[test]
fn eval_before_train_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    run(dir.path(), "gen", &[]).unwrap();
    run(dir.path(), "di", &[]).unwrap();
    assert!(run(dir.path(), "eval", &[]).is_err());
}
