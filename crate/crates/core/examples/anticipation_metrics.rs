//! Temporal-distance scoring of per-frame anticipations, and a full
//! evaluation report for an untrained predictor and classifier.
//!
//! cargo run --release --example anticipation_metrics

use dipred::classifier::{next_action_labels, ClassifierConfig, ClassifierModel, LabelTimeline};
use dipred::evaluation::{avg_of_td, evaluate, temporal_distances, EvalConfig, EvalVideo};
use dipred::prednet::{PredNet, PredNetConfig};
use dipred::rankpool::{di_sequence, RankPoolConfig};
use dipred::video::synthetic::class_names;
use dipred::video::{gen_synthetic, ActionScript, ClassId, WindowSpec};

fn main() -> dipred::Result<()> {
    // Action 0 for 100 frames, then action 1 for 50. The predictor names
    // action 1 correctly from frame 72 onwards.
    let timeline = LabelTimeline::from_runs(&[(ClassId(0), 100), (ClassId(1), 50)]);
    let predicted: Vec<Option<ClassId>> = (0..150)
        .map(|f| Some(if f >= 72 { ClassId(1) } else { ClassId(0) }))
        .collect();
    for (class, td) in temporal_distances(&predicted, &timeline) {
        println!("action {class} anticipated {td} frames early");
    }
    for (class, tally) in avg_of_td(&predicted, &timeline) {
        println!("AvgOfTD action {class}: {:.1} over {} occurrence(s)", tally.mean(), tally.count);
    }

    let spec = WindowSpec::new(30, 5)?;
    let videos = (0..2)
        .map(|i| {
            let script = ActionScript::random(40 + i, 6, 4, (20, 40), (0, 15))?;
            let video = gen_synthetic(&script, 32, 40)?;
            let timeline = LabelTimeline::new(video.labels().unwrap_or_default().to_vec());
            let mut dis = di_sequence(&video, spec, &RankPoolConfig::default())?;
            next_action_labels(&mut dis, &timeline)?;
            Ok(EvalVideo { name: format!("video_{i:03}"), dis, timeline })
        })
        .collect::<dipred::Result<Vec<_>>>()?;

    let cfg = PredNetConfig { channels: vec![3, 8], layer_weights: vec![1.0, 0.0], ..PredNetConfig::default() };
    let model = PredNet::init(&cfg, 3)?;
    let classifier =
        ClassifierModel::init([3, 32, 40], class_names()[..4].to_vec(), &ClassifierConfig::default())?;
    let report = evaluate(&model, Some(&classifier), &videos, EvalConfig { context: cfg.context, horizon: 3 })?;

    println!("{:<16} {:<20} {:>12} {:>6}", "metric", "name", "value", "count");
    for row in report.rows() {
        println!("{:<16} {:<20} {:>12.6} {:>6}", row.metric, row.name, row.value, row.count);
    }
    Ok(())
}
