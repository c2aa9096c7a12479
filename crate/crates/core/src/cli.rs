//! The file-based pipeline behind the `dipred` binary. Every stage reads and
//! writes under one output directory:
//!
//! ```text
//! config.resolved.txt
//! data/{train,val,test}/video_NNN/{frame_NNNNN.ppm, labels.csv, script.txt}
//! di/{train,val,test}/manifest.csv, di/<split>/video_NNN/di_NNNNN.{ditf,ppm}
//! prednet.ckpt, prednet.trainer.ckpt, prednet_loss.csv
//! prednet_ft.ckpt, finetune_loss.csv
//! classifier.ckpt, classifier_loss.csv, classifier_eval.csv
//! report.csv, horizon.csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::checkpoint::{write_atomic, Checkpoint};
use crate::classifier::{accuracy, next_action_labels, train_classifier, ClassifierModel, LabelTimeline};
use crate::config::{LabelTarget, RunConfig};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, write_horizon_csv, write_report, EvalVideo, MetricsReport};
use crate::numerics::{ditf, Tensor};
use crate::prednet::{finetune_rollout, subsequences, EpochStats, PredNet, Trainer, TrainingMode};
use crate::rankpool::{di_sequence, DiSource, DynamicImage};
use crate::seed;
use crate::video::synthetic::class_names;
use crate::video::{gen_synthetic, load_frames, save_frames, write_ppm, ActionScript, ClassId};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Parser)]
#[command(name = "dipred", version, about = "Dynamic-image prediction and action anticipation pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub opts: Options,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    /// `key = value` config file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Config override, applied after the file. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Root seed; overrides `seed` from the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Replace existing outputs and discard saved training state.
    #[arg(long, global = true)]
    pub force: bool,
    /// Output directory shared by all stages.
    #[arg(long, global = true, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Render synthetic train/val/test videos with label timelines.
    Gen,
    /// Rank-pool every video into dynamic images.
    Di,
    /// Train the predictor on single-step DI sequences.
    Train,
    /// Finetune the predictor with fed-back rollout steps.
    Finetune,
    /// Train the DI action classifier.
    TrainClassifier,
    /// Measure prediction and anticipation metrics on the test split.
    Eval,
}

/// File config, then `--set` overrides, then `--seed`.
pub fn resolve_config(opts: &Options) -> Result<RunConfig> {
    let mut cfg = match &opts.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for pair in &opts.set {
        cfg.set_pair(pair)?;
    }
    if let Some(s) = opts.seed {
        cfg.set("seed", &s.to_string())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Resolves the config, records it under `--out` and runs one stage.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(&cli.opts)?;
    let out = &cli.opts.out;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let dump = cfg.dump();
    for line in dump.lines() {
        log::info!("config {line}");
    }
    write_atomic(&out.join("config.resolved.txt"), dump.as_bytes())?;
    let force = cli.opts.force;
    match cli.command {
        Command::Gen => cmd_gen(&cfg, out, force).map(drop),
        Command::Di => cmd_di(&cfg, out).map(drop),
        Command::Train => cmd_train(&cfg, out, force).map(drop),
        Command::Finetune => cmd_finetune(&cfg, out).map(drop),
        Command::TrainClassifier => cmd_train_classifier(&cfg, out).map(drop),
        Command::Eval => cmd_eval(&cfg, out).map(drop),
    }
}

fn video_dir_name(i: usize) -> String {
    format!("video_{i:03}")
}

fn split_counts(cfg: &RunConfig) -> [usize; 3] {
    [cfg.data.train_videos, cfg.data.val_videos, cfg.data.test_videos]
}

fn is_nonempty_dir(p: &Path) -> bool {
    fs::read_dir(p).map(|mut d| d.next().is_some()).unwrap_or(false)
}

fn reset_dir(p: &Path) -> Result<()> {
    if p.exists() {
        fs::remove_dir_all(p).map_err(|e| Error::io(p, e))?;
    }
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Sorted subdirectories of `dir`.
fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    v.sort();
    Ok(v)
}

/// Renders every split. Returns the number of videos per split.
pub fn cmd_gen(cfg: &RunConfig, out: &Path, force: bool) -> Result<[usize; 3]> {
    let counts = split_counts(cfg);
    if counts[0] == 0 || counts[2] == 0 {
        return Err(Error::config("gen needs at least one train and one test video"));
    }
    let data = out.join("data");
    if is_nonempty_dir(&data) && !force {
        return Err(Error::invalid(format!(
            "{} is not empty; pass --force to regenerate",
            data.display()
        )));
    }
    reset_dir(&data)?;
    let d = &cfg.data;
    let gen_seed = seed::stage(cfg.seed, "gen");
    for (si, split) in SPLITS.iter().enumerate() {
        let split_dir = data.join(split);
        fs::create_dir_all(&split_dir).map_err(|e| Error::io(&split_dir, e))?;
        (0..counts[si])
            .into_par_iter()
            .map(|i| {
                let s = seed::fork(gen_seed, &[si as u64, i as u64]);
                let script = ActionScript::random(s, d.actions_per_video, d.classes, d.duration, d.gap)?;
                let video = gen_synthetic(&script, d.height, d.width)?;
                let dir = data.join(split).join(video_dir_name(i));
                save_frames(&video, &dir)?;
                LabelTimeline::new(video.labels().unwrap_or_default().to_vec()).write_csv(&dir.join("labels.csv"))?;
                write_atomic(&dir.join("script.txt"), script.to_text().as_bytes())
            })
            .collect::<Result<Vec<()>>>()?;
        log::info!("gen {split}: {} videos", counts[si]);
    }
    Ok(counts)
}

fn label_field(c: Option<ClassId>) -> String {
    c.map(|c| c.0.to_string()).unwrap_or_default()
}

fn parse_label(s: &str) -> Result<Option<ClassId>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(|v| Some(ClassId(v))).map_err(|_| Error::Format {
        what: "manifest",
        reason: format!("bad label `{s}`"),
    })
}

/// Rank-pools every video. Returns the number of DIs per split.
pub fn cmd_di(cfg: &RunConfig, out: &Path) -> Result<[usize; 3]> {
    let mut totals = [0; 3];
    for (si, split) in SPLITS.iter().enumerate() {
        let src = out.join("data").join(split);
        if !src.is_dir() {
            return Err(Error::invalid(format!("missing input frames under {}; run `gen` first", src.display())));
        }
        let dst = out.join("di").join(split);
        reset_dir(&dst)?;
        let mut w = csv::Writer::from_path(dst.join("manifest.csv"))?;
        w.write_record(["video", "start_frame", "di_path", "label", "next_label"])?;
        for vdir in subdirs(&src)? {
            let timeline = LabelTimeline::read_csv(&vdir.join("labels.csv"))?;
            let video = load_frames(&vdir, "frame_*.ppm")?.with_labels(timeline.labels().to_vec())?;
            let name = vdir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            if video.len() < cfg.window.window {
                log::warn!("{split}/{name}: {} frames < window {}, skipped", video.len(), cfg.window.window);
                continue;
            }
            let mut dis = di_sequence(&video, cfg.window, &cfg.rankpool)?;
            next_action_labels(&mut dis, &timeline)?;
            let vout = dst.join(&name);
            fs::create_dir_all(&vout).map_err(|e| Error::io(&vout, e))?;
            for (j, di) in dis.iter().enumerate() {
                let rel = format!("{name}/di_{j:05}");
                ditf::write(&dst.join(format!("{rel}.ditf")), &di.values)?;
                write_ppm(&dst.join(format!("{rel}.ppm")), &di.normalized())?;
                w.write_record([
                    name.clone(),
                    di.source.start_frame.to_string(),
                    format!("{rel}.ditf"),
                    label_field(di.label),
                    label_field(di.next_label),
                ])?;
            }
            totals[si] += dis.len();
        }
        w.flush().map_err(|e| Error::io(&dst, e))?;
        log::info!("di {split}: {} DIs", totals[si]);
    }
    Ok(totals)
}

/// DIs and timelines of one split, in manifest order.
pub fn load_split(cfg: &RunConfig, out: &Path, split: &str) -> Result<Vec<EvalVideo>> {
    let dir = out.join("di").join(split);
    let manifest = dir.join("manifest.csv");
    if !manifest.is_file() {
        return Err(Error::invalid(format!("missing DI manifest {}; run `di` first", manifest.display())));
    }
    let mut r = csv::Reader::from_path(&manifest)?;
    let mut videos: Vec<EvalVideo> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let name = field(0).to_string();
        let start: usize = field(1).parse().map_err(|_| Error::Format {
            what: "manifest",
            reason: format!("bad start_frame `{}`", field(1)),
        })?;
        let values = ditf::read::<f32>(&dir.join(field(2)))?;
        let mut di = DynamicImage::from_raw(
            values,
            DiSource {
                video: name.clone(),
                start_frame: start,
                window: cfg.window.window,
            },
        );
        di.label = parse_label(field(3))?;
        di.next_label = parse_label(field(4))?;
        if videos.last().map(|v| v.name != name).unwrap_or(true) {
            let timeline = LabelTimeline::read_csv(&out.join("data").join(split).join(&name).join("labels.csv"))?;
            videos.push(EvalVideo {
                name,
                dis: Vec::new(),
                timeline,
            });
        }
        videos.last_mut().expect("pushed above").dis.push(di);
    }
    Ok(videos)
}

fn normalized(v: &EvalVideo) -> Vec<Tensor<f32>> {
    v.dis.iter().map(DynamicImage::normalized).collect()
}

fn write_loss_csv(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut s = String::from("epoch,loss,lr\n");
    for h in history {
        s += &format!("{},{},{}\n", h.epoch, h.loss, h.lr);
    }
    write_atomic(path, s.as_bytes())
}

/// FNV-1a of the config lines that shape predictor training.
fn training_fingerprint(cfg: &RunConfig) -> String {
    let text: String = cfg
        .entries()
        .into_iter()
        .filter(|(k, _)| *k == "seed" || k.starts_with("data.") || k.starts_with("rankpool.") || k.starts_with("prednet."))
        .map(|(k, v)| format!("{k}={v};"))
        .collect();
    let h = text
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    format!("{h:016x}")
}

/// Single-step predictor training, resumable per epoch from
/// `prednet.trainer.ckpt`. Returns the full per-epoch history.
pub fn cmd_train(cfg: &RunConfig, out: &Path, force: bool) -> Result<Vec<EpochStats>> {
    let videos = load_split(cfg, out, "train")?;
    let p = &cfg.prednet;
    let data: Vec<Vec<Tensor<f32>>> = videos
        .iter()
        .flat_map(|v| subsequences(&normalized(v), p.seq_len, p.stride))
        .collect();
    if data.is_empty() {
        return Err(Error::invalid(format!("no training video has {} DIs", p.seq_len)));
    }
    let state_path = out.join("prednet.trainer.ckpt");
    let fingerprint = training_fingerprint(cfg);
    let (mut trainer, mut history) = if state_path.is_file() && !force {
        let ck = Checkpoint::load(&state_path)?;
        if ck.meta("run.fingerprint")? != fingerprint {
            return Err(Error::invalid(format!(
                "{} was written with a different config; pass --force to restart",
                state_path.display()
            )));
        }
        let trainer = Trainer::from_checkpoint(&ck, p)?;
        let history = (0..trainer.epoch())
            .map(|e| {
                let loss = ck.meta_parse(&format!("history.{e}.loss"))?;
                let lr = ck.meta_parse(&format!("history.{e}.lr"))?;
                Ok(EpochStats { epoch: e, loss, lr })
            })
            .collect::<Result<Vec<_>>>()?;
        log::info!("resuming predictor training at epoch {}", trainer.epoch());
        (trainer, history)
    } else {
        (Trainer::new(PredNet::init(p, p.seed)?, p)?, Vec::new())
    };
    log::info!("training on {} sequences", data.len());
    while trainer.epoch() < p.epochs {
        let stats = trainer.run_epoch(&data, TrainingMode::SingleStep, p.epochs, None)?;
        log::info!("prednet epoch {} loss {:.6} lr {}", stats.epoch, stats.loss, stats.lr);
        history.push(stats);
        let mut ck = trainer.to_checkpoint();
        ck.set_meta("run.fingerprint", &fingerprint);
        for h in &history {
            ck.set_meta(&format!("history.{}.loss", h.epoch), h.loss);
            ck.set_meta(&format!("history.{}.lr", h.epoch), h.lr);
        }
        ck.save(&state_path)?;
    }
    trainer.model.to_checkpoint().save(&out.join("prednet.ckpt"))?;
    write_loss_csv(&out.join("prednet_loss.csv"), &history)?;
    Ok(history)
}

fn load_prednet(cfg: &RunConfig, path: &Path) -> Result<PredNet<f32>> {
    if !path.is_file() {
        return Err(Error::invalid(format!("missing checkpoint {}", path.display())));
    }
    PredNet::from_checkpoint(&Checkpoint::load(path)?, &cfg.prednet)
}

/// Rollout finetuning of `prednet.ckpt` into `prednet_ft.ckpt`.
pub fn cmd_finetune(cfg: &RunConfig, out: &Path) -> Result<Vec<EpochStats>> {
    let model = load_prednet(cfg, &out.join("prednet.ckpt"))?;
    let videos = load_split(cfg, out, "train")?;
    let p = &cfg.prednet;
    let data: Vec<Vec<Tensor<f32>>> = videos
        .iter()
        .flat_map(|v| subsequences(&normalized(v), p.finetune_len(), p.stride))
        .collect();
    if data.is_empty() {
        return Err(Error::invalid(format!("no training video has {} DIs", p.finetune_len())));
    }
    let (model, history) = finetune_rollout(model, &data, p)?;
    model.to_checkpoint().save(&out.join("prednet_ft.ckpt"))?;
    write_loss_csv(&out.join("finetune_loss.csv"), &history)?;
    Ok(history)
}

/// `(normalized DI, class index)` pairs whose target label is an action.
pub fn classifier_samples(videos: &[EvalVideo], target: LabelTarget) -> Vec<(Tensor<f32>, usize)> {
    videos
        .iter()
        .flat_map(|v| &v.dis)
        .filter_map(|di| {
            let label = match target {
                LabelTarget::Current => di.label,
                LabelTarget::Next => di.next_label,
            }?;
            Some((di.normalized(), label.index()?))
        })
        .collect()
}

/// Accuracy per split, as written to `classifier_eval.csv`.
pub type SplitAccuracy = Vec<(String, f64, usize)>;

/// Trains the DI classifier on the train split and scores val and test.
pub fn cmd_train_classifier(cfg: &RunConfig, out: &Path) -> Result<SplitAccuracy> {
    let names: Vec<String> = class_names().into_iter().take(cfg.data.classes).collect();
    let train = classifier_samples(&load_split(cfg, out, "train")?, cfg.classifier_target);
    let (model, curve) = train_classifier(&train, names, &cfg.classifier)?;
    model.to_checkpoint().save(&out.join("classifier.ckpt"))?;
    let mut s = String::from("epoch,loss\n");
    for (e, l) in curve.iter().enumerate() {
        s += &format!("{e},{l}\n");
    }
    write_atomic(&out.join("classifier_loss.csv"), s.as_bytes())?;
    let mut scores = Vec::new();
    let mut csv_text = String::from("split,accuracy,count\n");
    for split in ["train", "val", "test"] {
        let samples = if split == "train" {
            train.clone()
        } else {
            classifier_samples(&load_split(cfg, out, split)?, cfg.classifier_target)
        };
        let acc = accuracy(&model, &samples)?;
        log::info!("classifier {split} accuracy {acc:.4} over {}", samples.len());
        csv_text += &format!("{split},{acc},{}\n", samples.len());
        scores.push((split.to_string(), acc, samples.len()));
    }
    write_atomic(&out.join("classifier_eval.csv"), csv_text.as_bytes())?;
    Ok(scores)
}

/// Scores the finetuned predictor (or the base one when no finetuned
/// checkpoint exists) on the test split. Without `classifier.ckpt` the
/// report holds MSE rows and a `classifier,absent` row.
pub fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<MetricsReport> {
    let ft = out.join("prednet_ft.ckpt");
    let path = if ft.is_file() { ft } else { out.join("prednet.ckpt") };
    log::info!("evaluating {}", path.display());
    let model = load_prednet(cfg, &path)?;
    let clf_path = out.join("classifier.ckpt");
    let classifier = if clf_path.is_file() {
        Some(ClassifierModel::from_checkpoint(&Checkpoint::load(&clf_path)?)?)
    } else {
        log::warn!("no classifier checkpoint; reporting MSE only");
        None
    };
    let videos = load_split(cfg, out, "test")?;
    let report = evaluate(&model, classifier.as_ref(), &videos, cfg.eval())?;
    write_report(&report, &out.join("report.csv"))?;
    let horizon = out.join("horizon.csv");
    if report.classifier_present() {
        write_horizon_csv(&report, &horizon)?;
    } else if horizon.exists() {
        fs::remove_file(&horizon).map_err(|e| Error::io(&horizon, e))?;
    }
    log::info!("model_mse {} prev_mse {}", report.model_mse, report.prev_mse);
    Ok(report)
}
