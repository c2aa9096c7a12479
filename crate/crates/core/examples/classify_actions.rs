//! Trains the dynamic-image action classifier and shows the next-action
//! labels that anticipation is scored against.
//!
//! cargo run --release --example classify_actions

use dipred::classifier::{
    accuracy, classify, next_action_labels, train_classifier, ClassifierConfig, LabelTimeline,
};
use dipred::rankpool::{di_sequence, DynamicImage, RankPoolConfig};
use dipred::video::synthetic::class_names;
use dipred::video::{gen_synthetic, ActionScript, ClassId, WindowSpec};
use dipred::Tensor;

fn labelled_dis(seed: u64) -> dipred::Result<Vec<DynamicImage>> {
    let script = ActionScript::random(seed, 6, 4, (20, 40), (0, 15))?;
    let video = gen_synthetic(&script, 32, 40)?;
    let timeline = LabelTimeline::new(video.labels().unwrap_or_default().to_vec());
    let mut dis = di_sequence(&video, WindowSpec::new(30, 5)?, &RankPoolConfig::default())?;
    next_action_labels(&mut dis, &timeline)?;
    Ok(dis)
}

fn samples(dis: &[DynamicImage]) -> Vec<(Tensor<f32>, usize)> {
    dis.iter()
        .filter_map(|d| Some((d.normalized(), d.label?.index()?)))
        .collect()
}

fn main() -> dipred::Result<()> {
    let timeline = LabelTimeline::from_runs(&[
        (ClassId(0), 4),
        (ClassId::GAP, 2),
        (ClassId(1), 3),
    ]);
    let relabeled = timeline.relabel_gaps();
    println!("frame labels    {:?}", timeline.labels().iter().map(|c| c.0).collect::<Vec<_>>());
    println!("gaps relabelled {:?}", relabeled.labels().iter().map(|c| c.0).collect::<Vec<_>>());

    let mut train = Vec::new();
    for seed in 0..12 {
        train.extend(samples(&labelled_dis(seed)?));
    }
    let test_dis = labelled_dis(500)?;
    let test = samples(&test_dis);
    println!("{} training DIs, {} test DIs", train.len(), test.len());

    let names = class_names()[..4].to_vec();
    let cfg = ClassifierConfig::default();
    let (model, losses) = train_classifier(&train, names.clone(), &cfg)?;
    println!(
        "mean epoch loss {:.4} -> {:.4} over {} epochs",
        losses.first().copied().unwrap_or(f64::NAN),
        losses.last().copied().unwrap_or(f64::NAN),
        losses.len()
    );
    println!("train accuracy {:.3}", accuracy(&model, &train)?);
    println!("test accuracy  {:.3}", accuracy(&model, &test)?);

    println!("start  current          predicted        next action");
    let name = |c: Option<ClassId>| match c {
        Some(c) if c.is_action() => names[c.0 as usize].clone(),
        Some(ClassId::END) => "(end)".into(),
        _ => "(gap)".into(),
    };
    for di in test_dis.iter().step_by(4) {
        let (pred, _) = classify(&model, &di.normalized())?;
        println!(
            "{:>5}  {:<16} {:<16} {}",
            di.source.start_frame,
            name(di.label),
            names[pred],
            name(di.next_label)
        );
    }
    Ok(())
}
