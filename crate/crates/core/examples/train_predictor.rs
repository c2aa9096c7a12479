//! Trains a small predictive-coding network on dynamic-image sequences and
//! rolls it out several steps into the future.
//!
//! cargo run --release --example train_predictor -- [epochs]

use dipred::evaluation::{mse, prev_baseline_mse};
use dipred::prednet::{subsequences, train, PredNet, PredNetConfig};
use dipred::rankpool::{di_sequence, RankPoolConfig};
use dipred::video::{gen_synthetic, ActionScript, WindowSpec};
use dipred::Tensor;

fn normalized_dis(seed: u64) -> dipred::Result<Vec<Tensor<f32>>> {
    let script = ActionScript::random(seed, 6, 4, (20, 40), (0, 15))?;
    let video = gen_synthetic(&script, 32, 40)?;
    let dis = di_sequence(&video, WindowSpec::new(30, 5)?, &RankPoolConfig::default())?;
    Ok(dis.iter().map(|d| d.normalized()).collect())
}

fn main() -> dipred::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let cfg = PredNetConfig {
        channels: vec![3, 8, 16],
        layer_weights: vec![1.0, 0.0, 0.0],
        epochs,
        ..PredNetConfig::default()
    };

    let mut data = Vec::new();
    for seed in 0..6 {
        data.extend(subsequences(&normalized_dis(seed)?, cfg.seq_len, 2));
    }
    println!("{} training sequences of {} DIs", data.len(), cfg.seq_len);

    let model = PredNet::init(&cfg, 1)?;
    let (model, history) = train(model, &data, &cfg)?;
    for h in &history {
        println!("epoch {:>2} loss {:.6} lr {}", h.epoch, h.loss, h.lr);
    }

    let test = normalized_dis(100)?;
    let horizon = 5;
    let context = &test[..cfg.context];
    let rollout = model.predict_rollout(context, horizon)?;
    let last = &test[cfg.context - 1];
    println!("step  model_mse  copy_last_mse");
    for (k, pred) in rollout.iter().enumerate() {
        let Some(target) = test.get(cfg.context + k) else { break };
        println!("{:>4}  {:.6}   {:.6}", k + 1, mse(pred, target)?, mse(last, target)?);
    }
    println!(
        "copy-previous baseline over the test video: {:.6}",
        prev_baseline_mse(&test, cfg.context)?
    );
    Ok(())
}
