//! Runs every command-line stage on a small configuration: generate videos,
//! build dynamic images, train and finetune the predictor, train the
//! classifier and evaluate. Equivalent to calling the `dipred` binary six times.
//!
//! cargo run --release --example pipeline -- [out_dir]

use clap::Parser;
use dipred::cli::{self, Cli};
use dipred::evaluation::read_report;

const SETTINGS: [&str; 10] = [
    "data.train_videos=4",
    "data.val_videos=1",
    "data.test_videos=2",
    "data.actions_per_video=4",
    "prednet.channels=3,8,16",
    "prednet.layer_weights=1,0,0",
    "prednet.epochs=2",
    "prednet.finetune_epochs=1",
    "classifier.epochs=4",
    "eval.horizon=3",
];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| std::env::temp_dir().join("dipred_pipeline").display().to_string());

    for stage in ["gen", "di", "train", "finetune", "train-classifier", "eval"] {
        let mut args = vec!["dipred", stage, "--seed", "5", "--force", "--out", out.as_str()];
        for s in SETTINGS {
            args.extend(["--set", s]);
        }
        if stage != "gen" && stage != "train" {
            args.retain(|a| *a != "--force");
        }
        cli::run(&Cli::try_parse_from(&args)?)?;
    }

    let report = read_report(&std::path::Path::new(&out).join("report.csv"))?;
    for row in report.iter().filter(|r| r.metric != "video_mse_model" && r.metric != "video_mse_prev") {
        println!("{:<14} {:<18} {:>10.6} {:>5}", row.metric, row.name, row.value, row.count);
    }
    println!("artifacts in {out}");
    Ok(())
}
