//! Acceptance suite: one PASS/FAIL line per criterion.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Parser;
use dipred::classifier::{next_action_labels, LabelTimeline};
use dipred::cli::{self, Cli};
use dipred::config::RunConfig;
use dipred::evaluation::{evaluate, temporal_distances, MetricsReport};
use dipred::numerics::{GradCheck, Tensor};
use dipred::prednet::{split_error, ErrorMode, PredNet, PredNetConfig};
use dipred::rankpool::{di_sequence, rank_pool, rank_pool_features, running_means, DiSource, DynamicImage, RankPoolConfig};
use dipred::video::{gen_synthetic, ActionEntry, ActionScript, ClassId, WindowSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn frames_1px(values: &[&[f32]]) -> Vec<Tensor<f32>> {
    values
        .iter()
        .map(|v| Tensor::new(vec![1, 1, v.len()], v.to_vec()).unwrap())
        .collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let pixels = rng.gen_range(1..=4);
        let frames = rng.gen_range(2..=5);
        let lambda = 10f64.powf(rng.gen_range(-2.0..0.0));
        let window: Vec<Tensor<f32>> = (0..frames)
            .map(|_| Tensor::from_fn(&[1, 1, pixels], |_| rng.gen_range(0.0..1.0)))
            .collect();
        let feats = running_means(&window);
        let cfg = RankPoolConfig {
            lambda,
            ..RankPoolConfig::default()
        };
        let sol = rank_pool_features(&feats, &cfg).map_err(|e| e.to_string())?;
        let (oracle, _) = common::rank_pool_brute_force(&feats, lambda);
        worst = worst.max((sol.objective - oracle).abs());
    }
    let closed = [
        (frames_1px(&[&[0.3], &[0.3], &[0.3]]), 1.0, 0.0),
        (frames_1px(&[&[0.0], &[1.0]]), 0.1, 2.0),
        (frames_1px(&[&[0.0], &[0.5], &[1.0]]), 0.01, 4.0),
    ];
    let mut closed_err: f64 = 0.0;
    for (w, lambda, want) in &closed {
        let d = rank_pool(w, &RankPoolConfig { lambda: *lambda, ..RankPoolConfig::default() })
            .map_err(|e| e.to_string())?;
        closed_err = closed_err.max((d[0] - want).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-4 && closed_err <= 1e-3 && secs < 30.0,
        format!("max |objective − oracle| = {worst:.2e} (≤ 1e-4), closed-form error {closed_err:.2e} (≤ 1e-3), {secs:.1} s (< 30 s)"),
    )
}

fn jittered(cfg: &PredNetConfig, seed: u64) -> PredNet<f64> {
    let mut m = PredNet::<f64>::init(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in m.params_mut() {
        p.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
    }
    m
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut model_err: f64 = 0.0;
    for mode in [ErrorMode::SplitL1, ErrorMode::SplitLog] {
        let cfg = PredNetConfig {
            channels: vec![3, 4],
            layer_weights: vec![1.0, 0.5],
            height: 8,
            width: 8,
            error_mode: mode,
            ..PredNetConfig::default()
        };
        let model = jittered(&cfg, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut seq = || -> Vec<Tensor<f64>> {
            (0..2).map(|_| Tensor::from_fn(&[3, 8, 8], |_| rng.gen_range(0.0..1.0))).collect()
        };
        let (inputs, targets) = (seq(), seq());
        let (_, grads) = model.sequence_loss_and_grad(&inputs, &targets, 2).map_err(|e| e.to_string())?;
        let loss = |ps: &[Tensor<f64>]| {
            PredNet::from_params(&cfg, ps.to_vec())
                .unwrap()
                .sequence_loss(&inputs, &targets, 2)
                .unwrap()
        };
        model_err = model_err.max(GradCheck::with_epsilon(1e-5).compare(&grads, loss, model.params()).max_rel_error);
    }
    let ops = common::op_gradient_errors(7);
    let (worst_op, op_err) = ops
        .iter()
        .copied()
        .fold(("", 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
    let secs = start.elapsed().as_secs_f64();
    check(
        model_err < 1e-4 && op_err < 1e-6 && secs < 60.0,
        format!(
            "PredNet rel err {model_err:.2e} (< 1e-4), worst op {worst_op} {op_err:.2e} of {} ops (< 1e-6), {secs:.1} s (< 60 s)",
            ops.len()
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut checked = 0usize;
    for trial in 0..12 {
        let layers = rng.gen_range(1..=4);
        let mut channels = vec![3];
        channels.extend((1..layers).map(|_| rng.gen_range(1..=5)));
        let div = 1usize << (layers - 1);
        let (h, w) = (div * rng.gen_range(1..=3), div * rng.gen_range(1..=3));
        for mode in [ErrorMode::SplitL1, ErrorMode::SplitLog] {
            let cfg = PredNetConfig {
                layer_weights: vec![1.0; layers],
                channels: channels.clone(),
                height: h,
                width: w,
                error_mode: mode,
                ..PredNetConfig::default()
            };
            let model = PredNet::<f32>::init(&cfg, trial).map_err(|e| e.to_string())?;
            let mut state = model.zero_state();
            for _ in 0..3 {
                let x = Tensor::from_fn(&[3, h, w], |_| rng.gen_range(-0.5..1.5));
                state = model.step(&state, &x).map_err(|e| e.to_string())?.0;
                for (l, e) in state.e.iter().enumerate() {
                    let want = [2 * channels[l], h >> l, w >> l];
                    if e.shape() != want {
                        return Err(format!("E_{l} shape {:?}, want {want:?}", e.shape()));
                    }
                    if e.data().iter().any(|&v| !(v >= 0.0)) {
                        return Err(format!("negative E_{l} in {mode}"));
                    }
                    checked += e.len();
                }
            }
        }
    }
    let full = PredNetConfig::full_scale();
    let model = PredNet::<f32>::init(&full, 0).map_err(|e| e.to_string())?;
    let x = Tensor::from_fn(&[3, 128, 160], |i| (i % 7) as f32 / 7.0);
    let (state, pred) = model.step(&model.zero_state(), &x).map_err(|e| e.to_string())?;
    let ladder: Vec<Vec<usize>> = state.r.iter().map(|r| r.shape().to_vec()).collect();
    let want = vec![vec![3, 128, 160], vec![48, 64, 80], vec![96, 32, 40], vec![192, 16, 20]];
    if ladder != want || pred.shape() != [3, 128, 160] || state.e[3].shape() != [384, 16, 20] {
        return Err(format!("full-scale ladder {ladder:?}"));
    }
    let mut split_pairs = 0usize;
    for _ in 0..200 {
        let a = Tensor::from_fn(&[2, 3, 3], |_| rng.gen_range(-2.0f64..2.0));
        let ahat = Tensor::from_fn(&[2, 3, 3], |_| rng.gen_range(-2.0f64..2.0));
        let l1 = split_error(&a, &ahat, ErrorMode::SplitL1).map_err(|e| e.to_string())?;
        let lg = split_error(&a, &ahat, ErrorMode::SplitLog).map_err(|e| e.to_string())?;
        if lg.data().iter().zip(l1.data()).any(|(g, l)| g > l) {
            return Err("SPLIT_LOG exceeds SPLIT_L1".into());
        }
        split_pairs += l1.len();
    }
    Ok(format!(
        "{checked} E entries ≥ 0 with 2× channels and halving ladder; 128×160 → R_3 16×20; SPLIT_LOG ≤ SPLIT_L1 on {split_pairs} entries"
    ))
}

/// Desk-scale pipeline shared by criteria 4 to 7.
struct Pipeline {
    dir: tempfile::TempDir,
    cfg: RunConfig,
    base: MetricsReport,
    finetuned: MetricsReport,
    classifier_test: (f64, usize),
    minutes: f64,
}

const PIPELINE: &[&str] = &[
    "seed=2024",
    "data.train_videos=20",
    "data.val_videos=2",
    "data.test_videos=6",
    "prednet.channels=3,8,16,32",
];

fn run_pipeline() -> Result<Pipeline, String> {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path();
    let mut cfg = RunConfig::default();
    for s in PIPELINE {
        cfg.set_pair(s).map_err(|e| e.to_string())?;
    }
    let err = |e: dipred::Error| e.to_string();
    cli::cmd_gen(&cfg, out, false).map_err(err)?;
    cli::cmd_di(&cfg, out).map_err(err)?;
    cli::cmd_train(&cfg, out, false).map_err(err)?;
    let base = cli::cmd_eval(&cfg, out).map_err(err)?;
    cli::cmd_finetune(&cfg, out).map_err(err)?;
    let scores = cli::cmd_train_classifier(&cfg, out).map_err(err)?;
    let finetuned = cli::cmd_eval(&cfg, out).map_err(err)?;
    let test = scores.iter().find(|s| s.0 == "test").ok_or("no test score")?;
    Ok(Pipeline {
        minutes: start.elapsed().as_secs_f64() / 60.0,
        dir,
        cfg,
        base,
        finetuned,
        classifier_test: (test.1, test.2),
    })
}

fn criterion_4(p: &Pipeline) -> Outcome {
    let r = &p.base;
    let ratio = r.model_mse / r.prev_mse;
    check(
        ratio <= 0.8 && p.cfg.data.train_videos >= 20,
        format!(
            "model_mse {:.5} / prev_mse {:.5} = {ratio:.3} (≤ 0.8) over {} held-out positions; {} train videos, pipeline {:.1} min",
            r.model_mse, r.prev_mse, r.positions, p.cfg.data.train_videos, p.minutes
        ),
    )
}

fn criterion_5(p: &Pipeline) -> Outcome {
    let r = &p.finetuned;
    let acc: Vec<f64> = (1..=5).map(|k| r.accuracy(k).unwrap_or(f64::NAN)).collect();
    let mse: Vec<f64> = r.rollout_mse.iter().map(|t| t.mean()).collect();
    let acc_ok = acc[0] >= acc[4];
    let mse_ok = mse.len() == 5 && mse.windows(2).all(|w| w[1] >= 0.95 * w[0]);
    let before = p.base.rollout_mse[4].mean();
    check(
        acc_ok && mse_ok,
        format!(
            "accuracy k=1..5 {:?}; rollout MSE k=1..5 {:?}; k=5 MSE before finetuning {before:.5}",
            acc.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>(),
            mse.iter().map(|m| format!("{m:.5}")).collect::<Vec<_>>()
        ),
    )
}

fn di_at(start: usize, window: usize) -> DynamicImage {
    DynamicImage::from_raw(
        Tensor::zeros(&[3, 1, 1]),
        DiSource {
            video: "hand".into(),
            start_frame: start,
            window,
        },
    )
}

fn criterion_6(p: &Pipeline) -> Outcome {
    let (a, b, c) = (ClassId(0), ClassId(1), ClassId(2));
    let (gap, end) = (ClassId::GAP, ClassId::END);
    let cases = [
        (vec![(a, 100), (gap, 30), (b, 70)], vec![(a, 100), (b, 100)]),
        (vec![(a, 10), (gap, 5)], vec![(a, 10), (end, 5)]),
        (vec![(gap, 4), (c, 3), (gap, 2), (gap, 1), (a, 2)], vec![(c, 7), (a, 5)]),
        (vec![(a, 3), (b, 3)], vec![(a, 3), (b, 3)]),
    ];
    for (input, want) in &cases {
        let got = LabelTimeline::from_runs(input).relabel_gaps();
        if got != LabelTimeline::from_runs(want) {
            return Err(format!("relabel of {input:?} gave {:?}", got.segments()));
        }
    }
    let t = LabelTimeline::from_runs(&[(a, 40), (gap, 10), (b, 50)]);
    let mut dis = vec![di_at(0, 30), di_at(10, 30), di_at(15, 30), di_at(70, 30)];
    next_action_labels(&mut dis, &t).map_err(|e| e.to_string())?;
    let got: Vec<Option<ClassId>> = dis.iter().map(|d| d.next_label).collect();
    if got != vec![Some(a), Some(b), Some(b), Some(end)] {
        return Err(format!("next-action labels {got:?}"));
    }
    let (acc, n) = p.classifier_test;
    check(
        acc >= 0.9,
        format!("held-out accuracy {acc:.3} on {n} ground-truth DIs (≥ 0.9); relabel and next-action cases exact"),
    )
}

fn criterion_7(p: &Pipeline) -> Outcome {
    let (a, b) = (ClassId(0), ClassId(1));
    let runs = |r: &[(Option<ClassId>, usize)]| -> Vec<Option<ClassId>> {
        r.iter().flat_map(|&(c, n)| std::iter::repeat(c).take(n)).collect()
    };
    let t1 = LabelTimeline::from_runs(&[(ClassId::GAP, 200), (a, 50)]);
    let ex1 = temporal_distances(&runs(&[(Some(b), 127), (Some(b), 1), (Some(a), 72), (None, 50)]), &t1);
    let ex2 = temporal_distances(&runs(&[(Some(b), 250)]), &t1);
    let t3 = LabelTimeline::from_runs(&[(b, 100), (a, 20)]);
    let ex3 = temporal_distances(
        &runs(&[(None, 40), (Some(a), 11), (Some(b), 9), (Some(a), 40), (None, 20)]),
        &t3,
    );
    if ex1 != vec![(a, 72)] || ex2 != vec![(a, 0)] || ex3[1] != (a, 40) {
        return Err(format!("examples gave {ex1:?} {ex2:?} {ex3:?}"));
    }
    let out = p.dir.path();
    let model = PredNet::from_checkpoint(
        &dipred::checkpoint::Checkpoint::load(&out.join("prednet_ft.ckpt")).map_err(|e| e.to_string())?,
        &p.cfg.prednet,
    )
    .map_err(|e| e.to_string())?;
    let clf = dipred::classifier::ClassifierModel::from_checkpoint(
        &dipred::checkpoint::Checkpoint::load(&out.join("classifier.ckpt")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let mut videos = cli::load_split(&p.cfg, out, "test").map_err(|e| e.to_string())?;
    let again = evaluate(&model, Some(&clf), &videos, p.cfg.eval()).map_err(|e| e.to_string())?;
    videos.reverse();
    let permuted = evaluate(&model, Some(&clf), &videos, p.cfg.eval()).map_err(|e| e.to_string())?;
    let td: BTreeMap<i32, String> = p
        .finetuned
        .avg_of_td
        .iter()
        .map(|(c, t)| (c.0, format!("{:.1} ({})", t.mean(), t.count)))
        .collect();
    check(
        again == p.finetuned && permuted.avg_of_td == p.finetuned.avg_of_td,
        format!("TD examples 72 / 0 / 40 exact; re-run identical, video order irrelevant; AvgOfTD per class {td:?}"),
    )
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn criterion_8() -> Outcome {
    let stages = ["gen", "di", "train", "finetune", "train-classifier", "eval"];
    let sets = [
        "data.train_videos=2",
        "data.val_videos=1",
        "data.test_videos=1",
        "data.classes=2",
        "data.actions_per_video=5",
        "data.duration=25,35",
        "prednet.epochs=2",
        "prednet.finetune_epochs=1",
        "prednet.channels=3,4",
        "prednet.layer_weights=1,0",
        "classifier.epochs=2",
    ];
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        for stage in stages {
            let mut args = vec!["dipred".to_string(), stage.to_string(), "--seed".into(), "77".into()];
            args.extend(["--out".to_string(), d.path().display().to_string()]);
            for s in sets {
                args.extend(["--set".to_string(), s.to_string()]);
            }
            let cli = Cli::try_parse_from(&args).map_err(|e| e.to_string())?;
            cli::run(&cli).map_err(|e| format!("{stage}: {e}"))?;
        }
    }
    // re-running `di` and `train` in place must not change anything either
    let cli = Cli::try_parse_from(
        ["dipred", "di", "--seed", "77", "--out"]
            .iter()
            .map(|s| s.to_string())
            .chain([dirs[0].path().display().to_string()])
            .chain(sets.iter().flat_map(|s| ["--set".to_string(), s.to_string()])),
    )
    .map_err(|e| e.to_string())?;
    cli::run(&cli).map_err(|e| e.to_string())?;
    let a = files_under(dirs[0].path());
    let b = files_under(dirs[1].path());
    if a != b {
        return Err("runs produced different file sets".into());
    }
    let mut compared = 0;
    for f in &a {
        let x = std::fs::read(dirs[0].path().join(f)).unwrap();
        let y = std::fs::read(dirs[1].path().join(f)).unwrap();
        if x != y {
            return Err(format!("{} differs", f.display()));
        }
        compared += 1;
    }
    let typed = a
        .iter()
        .filter(|f| matches!(f.extension().and_then(|e| e.to_str()), Some("ditf" | "csv")))
        .count();
    Ok(format!("{compared} files byte-identical across two runs of all 6 stages ({typed} DITF/CSV)"))
}

fn criterion_9() -> Outcome {
    let script = ActionScript::new(
        vec![ActionEntry {
            class: ClassId(0),
            duration: 75,
            gap_after: 0,
        }],
        9,
    );
    let video = gen_synthetic(&script, 32, 40).map_err(|e| e.to_string())?;
    let spec = WindowSpec::new(30, 5).map_err(|e| e.to_string())?;
    let dis = di_sequence(&video, spec, &RankPoolConfig::default()).map_err(|e| e.to_string())?;
    let starts: Vec<usize> = dis.iter().map(|d| d.source.start_frame).collect();
    check(
        video.len() == 75 && dis.len() == 10 && spec.count(75) == 10 && starts.last() == Some(&45),
        format!("75 frames, W=30, s=5 → {} DIs, last window starts at {:?}", dis.len(), starts.last()),
    )
}

fn main() {
    let mut results: Vec<(usize, Outcome)> = vec![(1, criterion_1()), (2, criterion_2()), (3, criterion_3())];
    match run_pipeline() {
        Ok(p) => {
            results.push((4, criterion_4(&p)));
            results.push((5, criterion_5(&p)));
            results.push((6, criterion_6(&p)));
            results.push((7, criterion_7(&p)));
        }
        Err(e) => {
            for n in 4..=7 {
                results.push((n, Err(format!("pipeline failed: {e}"))));
            }
        }
    }
    results.push((8, criterion_8()));
    results.push((9, criterion_9()));
    let mut failed = 0;
    for (n, r) in &results {
        match r {
            Ok(d) => println!("criterion {n}: PASS  {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n}: FAIL  {d}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
