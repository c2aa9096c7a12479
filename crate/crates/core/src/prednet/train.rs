use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, AdamState, Tensor};
use crate::seed;

use super::{PredNet, PredNetConfig};

/// Which loss a training epoch optimises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingMode {
    /// Every step consumes a real (noisy) DI.
    SingleStep,
    /// Steps from `feedback_from` on consume the model's own prediction.
    Rollout { feedback_from: usize },
}

impl TrainingMode {
    fn feedback_from(self, len: usize) -> usize {
        match self {
            TrainingMode::SingleStep => len,
            TrainingMode::Rollout { feedback_from } => feedback_from.min(len),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Overlapping windows of `len` consecutive DIs, `stride` apart.
pub fn subsequences(dis: &[Tensor<f32>], len: usize, stride: usize) -> Vec<Vec<Tensor<f32>>> {
    if len == 0 || stride == 0 || dis.len() < len {
        return Vec::new();
    }
    (0..=dis.len() - len)
        .step_by(stride)
        .map(|s| dis[s..s + len].to_vec())
        .collect()
}

/// Adds `N(0, σ²)` noise to the real-input steps `0..feedback_from`; later
/// steps are left untouched because the network never reads them.
pub(crate) fn noisy_inputs(
    seq: &[Tensor<f32>],
    sigma: f64,
    feedback_from: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Tensor<f32>> {
    if sigma == 0.0 {
        return seq.to_vec();
    }
    let normal = Normal::new(0.0f32, sigma as f32).expect("σ > 0");
    let mut out = seq.to_vec();
    for x in out.iter_mut().take(feedback_from) {
        for v in x.data_mut() {
            *v += normal.sample(rng);
        }
    }
    out
}

/// Single-owner training loop: model, optimiser and epoch counter.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: PredNet<f32>,
    adam: AdamState<f32>,
    config: PredNetConfig,
    epoch: usize,
}

impl Trainer {
    pub fn new(model: PredNet<f32>, config: &PredNetConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(
            model.params(),
            AdamConfig {
                alpha: config.lr,
                ..AdamConfig::default()
            },
        );
        Ok(Trainer {
            model,
            adam,
            config: config.clone(),
            epoch: 0,
        })
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn adam(&self) -> &AdamState<f32> {
        &self.adam
    }

    /// One pass over `data` in a seeded order. The learning rate is `lr` when
    /// given, otherwise the step schedule over `total_epochs`.
    pub fn run_epoch(
        &mut self,
        data: &[Vec<Tensor<f32>>],
        mode: TrainingMode,
        total_epochs: usize,
        lr: Option<f64>,
    ) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(Error::invalid("empty training set"));
        }
        let epoch = self.epoch;
        let lr = lr.unwrap_or_else(|| self.config.lr_at(epoch, total_epochs));
        self.adam.set_learning_rate(lr);
        let base = seed::fork(self.config.seed, &[epoch as u64]);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(base));

        let mut total = 0.0;
        for chunk in order.chunks(self.config.batch) {
            let model = &self.model;
            let sigma = self.config.sigma;
            let results = chunk
                .par_iter()
                .map(|&i| {
                    let seq = &data[i];
                    let fb = mode.feedback_from(seq.len());
                    let mut rng = ChaCha8Rng::seed_from_u64(seed::fork(base, &[i as u64]));
                    let inputs = noisy_inputs(seq, sigma, fb, &mut rng);
                    model.sequence_loss_and_grad(&inputs, seq, fb)
                })
                .collect::<Result<Vec<_>>>()?;
            let scale = 1.0 / chunk.len() as f32;
            let mut grads: Vec<Tensor<f32>> =
                self.model.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
            for (loss, g) in &results {
                total += loss;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.axpy(scale, gi)?;
                }
            }
            self.adam.step(self.model.params_mut(), &grads)?;
        }
        self.epoch += 1;
        Ok(EpochStats {
            epoch,
            loss: total / data.len() as f64,
            lr,
        })
    }

    /// Model, optimiser moments and epoch counter.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint();
        ck.set_meta("train.epoch", self.epoch);
        ck.set_meta("adam.step", self.adam.step);
        for (i, name) in self.model.names().iter().enumerate() {
            ck.push(format!("adam.m.{name}"), self.adam.m[i].clone());
            ck.push(format!("adam.v.{name}"), self.adam.v[i].clone());
        }
        ck
    }

    /// Restores a trainer; a checkpoint without optimiser state starts fresh moments.
    pub fn from_checkpoint(ck: &Checkpoint, config: &PredNetConfig) -> Result<Self> {
        let model = PredNet::from_checkpoint(ck, config)?;
        let mut t = Trainer::new(model, config)?;
        if ck.meta.contains_key("adam.step") {
            t.epoch = ck.meta_parse("train.epoch")?;
            t.adam.step = ck.meta_parse("adam.step")?;
            for (i, name) in t.model.names().to_vec().iter().enumerate() {
                let m = ck.get(&format!("adam.m.{name}"))?;
                let v = ck.get(&format!("adam.v.{name}"))?;
                if m.shape() != t.adam.m[i].shape() || v.shape() != t.adam.v[i].shape() {
                    return Err(Error::shape(format!("optimiser state for {name}")));
                }
                t.adam.m[i] = m.clone();
                t.adam.v[i] = v.clone();
            }
        }
        Ok(t)
    }
}

/// Single-step training over sequences of `cfg.seq_len` DIs; returns the
/// trained model and one entry per epoch.
pub fn train(
    model: PredNet<f32>,
    data: &[Vec<Tensor<f32>>],
    cfg: &PredNetConfig,
) -> Result<(PredNet<f32>, Vec<EpochStats>)> {
    if let Some(bad) = data.iter().find(|s| s.len() != cfg.seq_len) {
        return Err(Error::invalid(format!(
            "training sequence has {} DIs, expected {}",
            bad.len(),
            cfg.seq_len
        )));
    }
    let mut trainer = Trainer::new(model, cfg)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let stats = trainer.run_epoch(data, TrainingMode::SingleStep, cfg.epochs, None)?;
        log::info!("prednet epoch {} loss {:.6} lr {}", stats.epoch, stats.loss, stats.lr);
        history.push(stats);
    }
    Ok((trainer.model, history))
}

/// Continues training on `context + horizon` DI sequences whose last
/// `horizon` steps consume the model's own predictions.
pub fn finetune_rollout(
    model: PredNet<f32>,
    data: &[Vec<Tensor<f32>>],
    cfg: &PredNetConfig,
) -> Result<(PredNet<f32>, Vec<EpochStats>)> {
    let len = cfg.finetune_len();
    if let Some(bad) = data.iter().find(|s| s.len() != len) {
        return Err(Error::invalid(format!(
            "finetuning sequence has {} DIs, expected {len}",
            bad.len()
        )));
    }
    let mut trainer = Trainer::new(model, cfg)?;
    let mode = TrainingMode::Rollout {
        feedback_from: cfg.context,
    };
    let mut history = Vec::with_capacity(cfg.finetune_epochs);
    for _ in 0..cfg.finetune_epochs {
        let stats = trainer.run_epoch(data, mode, cfg.finetune_epochs, Some(cfg.finetune_lr))?;
        log::info!("finetune epoch {} loss {:.6}", stats.epoch, stats.loss);
        history.push(stats);
    }
    Ok((trainer.model, history))
}
