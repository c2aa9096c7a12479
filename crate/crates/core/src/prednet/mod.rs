//! Predictive-coding network over dynamic-image sequences.
//!
//! Each layer `l` holds a representation `R_l` (a ConvLSTM state), a
//! prediction `Â_l = relu(conv(R_l))`, a target `A_l` and the split error
//! `E_l = [φ(relu(A_l − Â_l)); φ(relu(Â_l − A_l))]`. The bottom target is the
//! input DI, higher targets are `maxpool(relu(conv(E_{l−1})))`. Each step first
//! updates `R` top-down from the previous step's `E_l`, `R_l` and the freshly
//! updated `R_{l+1}` (upsampled), then computes predictions and errors
//! bottom-up. The layer-0 prediction is clamped to `[0, 1]`.

mod cell;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

pub use cell::{split_error, LayerRecord, StepRecord};
pub use train::{finetune_rollout, subsequences, train, EpochStats, Trainer, TrainingMode};

/// How a prediction residual is turned into a non-negative error map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorMode {
    /// `[relu(A−Â); relu(Â−A)]`
    SplitL1,
    /// `[log(1+relu(A−Â)); log(1+relu(Â−A))]`
    SplitLog,
}

impl std::str::FromStr for ErrorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "split_l1" | "l1" => Ok(ErrorMode::SplitL1),
            "split_log" | "log" => Ok(ErrorMode::SplitLog),
            _ => Err(Error::config(format!(
                "unknown error mode `{s}` (split_l1 | split_log)"
            ))),
        }
    }
}

impl std::fmt::Display for ErrorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ErrorMode::SplitL1 => "split_l1",
            ErrorMode::SplitLog => "split_log",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredNetConfig {
    /// Channels per layer; the first entry is the input channel count.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub height: usize,
    pub width: usize,
    pub error_mode: ErrorMode,
    /// Std-dev of the Gaussian noise added to real inputs during training.
    pub sigma: f64,
    pub layer_weights: Vec<f64>,
    /// Adam step size for the first half of training.
    pub lr: f64,
    /// Adam step size from the halfway epoch on.
    pub lr_late: f64,
    pub epochs: usize,
    pub batch: usize,
    /// DIs per single-step training sequence.
    pub seq_len: usize,
    /// Context DIs consumed before predicting.
    pub context: usize,
    /// Fed-back steps at the end of each finetuning sequence.
    pub horizon: usize,
    pub finetune_epochs: usize,
    /// Adam step size during rollout finetuning.
    pub finetune_lr: f64,
    /// Hop between consecutive training subsequences of one DI sequence.
    pub stride: usize,
    pub seed: u64,
}

impl Default for PredNetConfig {
    /// Desk scale: four layers of (3, 8, 16, 32) channels on 32×40 inputs.
    fn default() -> Self {
        PredNetConfig {
            channels: vec![3, 8, 16, 32],
            kernel: 3,
            height: 32,
            width: 40,
            error_mode: ErrorMode::SplitLog,
            sigma: 0.03,
            layer_weights: vec![1.0, 0.0, 0.0, 0.0],
            lr: 0.001,
            lr_late: 0.0001,
            epochs: 10,
            batch: 1,
            seq_len: 10,
            context: 10,
            horizon: 5,
            finetune_epochs: 4,
            finetune_lr: 0.0001,
            stride: 1,
            seed: 0,
        }
    }
}

impl PredNetConfig {
    /// Full-size architecture: (3, 48, 96, 192) channels on 128×160 inputs.
    pub fn full_scale() -> Self {
        PredNetConfig {
            channels: vec![3, 48, 96, 192],
            height: 128,
            width: 160,
            ..Self::default()
        }
    }

    pub fn layers(&self) -> usize {
        self.channels.len()
    }

    /// `(H, W)` of layer `l`.
    pub fn layer_size(&self, l: usize) -> (usize, usize) {
        (self.height >> l, self.width >> l)
    }

    /// Sequence length used for rollout finetuning.
    pub fn finetune_len(&self) -> usize {
        self.context + self.horizon
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.layers();
        if l == 0 || self.channels.iter().any(|&c| c == 0) {
            return Err(Error::config("prednet.channels must be a nonempty list of positive sizes"));
        }
        let div = 1usize << (l - 1);
        if self.height == 0 || self.width == 0 || self.height % div != 0 || self.width % div != 0 {
            return Err(Error::config(format!(
                "input {}×{} must be divisible by 2^(L−1) = {div}",
                self.height, self.width
            )));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::config("prednet.kernel must be odd"));
        }
        if self.layer_weights.len() != l {
            return Err(Error::config(format!(
                "{} layer weights for {l} layers",
                self.layer_weights.len()
            )));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::config("prednet.sigma must be ≥ 0"));
        }
        if self.seq_len < 2 || self.batch == 0 || self.context == 0 {
            return Err(Error::config("prednet.seq_len ≥ 2, batch ≥ 1 and context ≥ 1 required"));
        }
        if self.stride == 0 {
            return Err(Error::config("prednet.stride must be ≥ 1"));
        }
        if !(self.lr > 0.0 && self.lr_late > 0.0 && self.finetune_lr > 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        Ok(())
    }

    /// Learning rate for 0-based `epoch` out of `epochs`: the rate drops at the halfway epoch.
    pub fn lr_at(&self, epoch: usize, epochs: usize) -> f64 {
        if epochs >= 2 && 2 * epoch >= epochs {
            self.lr_late
        } else {
            self.lr
        }
    }
}

/// Indices of one layer's parameters inside [`PredNet::params`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LayerSlots {
    pub lstm_w: usize,
    pub lstm_b: usize,
    pub ahat_w: usize,
    pub ahat_b: usize,
    /// `(weight, bias)` of the target convolution, absent at layer 0.
    pub a: Option<(usize, usize)>,
}

/// Network parameters plus the architecture they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct PredNet<T: Scalar = f32> {
    config: PredNetConfig,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    slots: Vec<LayerSlots>,
}

fn param_layout(cfg: &PredNetConfig) -> (Vec<(String, Vec<usize>)>, Vec<LayerSlots>) {
    let k = cfg.kernel;
    let l_count = cfg.layers();
    let mut specs = Vec::new();
    let mut slots = Vec::new();
    for l in 0..l_count {
        let c = cfg.channels[l];
        let above = if l + 1 < l_count { cfg.channels[l + 1] } else { 0 };
        let lstm_in = 2 * c + c + above;
        let base = specs.len();
        specs.push((format!("layer{l}.lstm.weight"), vec![4 * c, lstm_in, k, k]));
        specs.push((format!("layer{l}.lstm.bias"), vec![4 * c]));
        specs.push((format!("layer{l}.ahat.weight"), vec![c, c, k, k]));
        specs.push((format!("layer{l}.ahat.bias"), vec![c]));
        let a = if l > 0 {
            specs.push((format!("layer{l}.a.weight"), vec![c, 2 * cfg.channels[l - 1], k, k]));
            specs.push((format!("layer{l}.a.bias"), vec![c]));
            Some((base + 4, base + 5))
        } else {
            None
        };
        slots.push(LayerSlots {
            lstm_w: base,
            lstm_b: base + 1,
            ahat_w: base + 2,
            ahat_b: base + 3,
            a,
        });
    }
    (specs, slots)
}

impl<T: Scalar> PredNet<T> {
    /// Uniform `±1/√fan_in` weights and zero biases, deterministic per seed.
    pub fn init(cfg: &PredNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (specs, slots) = param_layout(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::with_capacity(specs.len());
        let mut params = Vec::with_capacity(specs.len());
        for (name, shape) in specs {
            let t = if shape.len() == 4 {
                let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
                let bound = 1.0 / fan_in.sqrt();
                Tensor::from_fn(&shape, |_| T::of(rng.gen_range(-bound..bound)))
            } else {
                Tensor::zeros(&shape)
            };
            names.push(name);
            params.push(t);
        }
        Ok(PredNet {
            config: cfg.clone(),
            names,
            params,
            slots,
        })
    }

    /// Builds a model from explicit parameters, checking every shape.
    pub fn from_params(cfg: &PredNetConfig, params: Vec<Tensor<T>>) -> Result<Self> {
        cfg.validate()?;
        let (specs, slots) = param_layout(cfg);
        if specs.len() != params.len() {
            return Err(Error::shape(format!(
                "expected {} parameter tensors, got {}",
                specs.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in specs.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(Error::shape(format!(
                    "{name}: expected {shape:?}, got {:?}",
                    p.shape()
                )));
            }
            p.check_finite(name)?;
        }
        Ok(PredNet {
            config: cfg.clone(),
            names: specs.into_iter().map(|(n, _)| n).collect(),
            params,
            slots,
        })
    }

    pub fn config(&self) -> &PredNetConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.params[i])
    }

    pub fn cast<U: Scalar>(&self) -> PredNet<U> {
        PredNet {
            config: self.config.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            slots: self.slots.clone(),
        }
    }

    /// Zero recurrent state for this architecture.
    pub fn zero_state(&self) -> PredNetState<T> {
        PredNetState::zeros(&self.config)
    }
}

impl PredNet<f32> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("kind", "prednet");
        write_config_meta(&mut ck, &self.config);
        for (n, p) in self.names.iter().zip(&self.params) {
            ck.push(n.clone(), p.clone());
        }
        ck
    }

    /// Restores a model; architecture comes from the checkpoint, training
    /// hyperparameters from `base`.
    pub fn from_checkpoint(ck: &Checkpoint, base: &PredNetConfig) -> Result<Self> {
        if ck.meta("kind")? != "prednet" {
            return Err(Error::Format {
                what: "checkpoint",
                reason: "not a prednet checkpoint".into(),
            });
        }
        let cfg = read_config_meta(ck, base)?;
        let (specs, _) = param_layout(&cfg);
        let params = specs
            .iter()
            .map(|(n, _)| ck.get(n).cloned())
            .collect::<Result<Vec<_>>>()?;
        Self::from_params(&cfg, params)
    }
}

fn join<V: ToString>(v: &[V]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn write_config_meta(ck: &mut Checkpoint, cfg: &PredNetConfig) {
    ck.set_meta("prednet.channels", join(&cfg.channels));
    ck.set_meta("prednet.kernel", cfg.kernel);
    ck.set_meta("prednet.height", cfg.height);
    ck.set_meta("prednet.width", cfg.width);
    ck.set_meta("prednet.error_mode", cfg.error_mode);
    ck.set_meta("prednet.layer_weights", join(&cfg.layer_weights));
}

fn read_config_meta(ck: &Checkpoint, base: &PredNetConfig) -> Result<PredNetConfig> {
    let list = |key: &str| -> Result<Vec<String>> {
        Ok(ck.meta(key)?.split(',').map(str::to_string).collect())
    };
    let parse_err = |key: &str| Error::Format {
        what: "checkpoint",
        reason: format!("bad `{key}`"),
    };
    let channels = list("prednet.channels")?
        .iter()
        .map(|s| s.parse().map_err(|_| parse_err("prednet.channels")))
        .collect::<Result<Vec<usize>>>()?;
    let layer_weights = list("prednet.layer_weights")?
        .iter()
        .map(|s| s.parse().map_err(|_| parse_err("prednet.layer_weights")))
        .collect::<Result<Vec<f64>>>()?;
    Ok(PredNetConfig {
        channels,
        kernel: ck.meta_parse("prednet.kernel")?,
        height: ck.meta_parse("prednet.height")?,
        width: ck.meta_parse("prednet.width")?,
        error_mode: ck.meta("prednet.error_mode")?.parse()?,
        layer_weights,
        ..base.clone()
    })
}

/// Recurrent state carried between steps: per layer `R_l`, `C_l` and `E_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredNetState<T: Scalar = f32> {
    pub r: Vec<Tensor<T>>,
    pub c: Vec<Tensor<T>>,
    pub e: Vec<Tensor<T>>,
}

impl<T: Scalar> PredNetState<T> {
    pub fn zeros(cfg: &PredNetConfig) -> Self {
        let mut s = PredNetState {
            r: Vec::new(),
            c: Vec::new(),
            e: Vec::new(),
        };
        for (l, &ch) in cfg.channels.iter().enumerate() {
            let (h, w) = cfg.layer_size(l);
            s.r.push(Tensor::zeros(&[ch, h, w]));
            s.c.push(Tensor::zeros(&[ch, h, w]));
            s.e.push(Tensor::zeros(&[2 * ch, h, w]));
        }
        s
    }
}

/// Where a step's bottom-layer target comes from.
#[derive(Debug, Clone, Copy)]
pub enum StepInput<'a, T: Scalar> {
    Real(&'a Tensor<T>),
    /// The step consumes its own layer-0 prediction.
    FeedBack,
}

impl<T: Scalar> PredNet<T> {
    /// One network step; returns the new state and the layer-0 prediction `Â_0^t`.
    pub fn step(&self, state: &PredNetState<T>, x: &Tensor<T>) -> Result<(PredNetState<T>, Tensor<T>)> {
        let rec = self.forward_step(state, StepInput::Real(x))?;
        let pred = rec.layers[0].ahat.clone();
        Ok((rec.into_state(), pred))
    }

    /// Runs the whole sequence from the zero state and returns the layer-0
    /// prediction made at every step.
    pub fn run(&self, inputs: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        let mut state = self.zero_state();
        let mut preds = Vec::with_capacity(inputs.len());
        for x in inputs {
            let (s, p) = self.step(&state, x)?;
            state = s;
            preds.push(p);
        }
        Ok(preds)
    }

    fn check_context(&self, context: &[Tensor<T>]) -> Result<()> {
        if context.len() != self.config.context {
            return Err(Error::invalid(format!(
                "expected {} context DIs, got {}",
                self.config.context,
                context.len()
            )));
        }
        Ok(())
    }

    /// Prediction of the DI following `context` (exactly `context` DIs long).
    pub fn predict_next(&self, context: &[Tensor<T>]) -> Result<Tensor<T>> {
        Ok(self.predict_rollout(context, 1)?.remove(0))
    }

    /// `k` predictions past the context, each fed back as the next input.
    pub fn predict_rollout(&self, context: &[Tensor<T>], k: usize) -> Result<Vec<Tensor<T>>> {
        self.check_context(context)?;
        if k == 0 {
            return Err(Error::invalid("rollout horizon must be ≥ 1"));
        }
        let mut state = self.zero_state();
        for x in context {
            state = self.forward_step(&state, StepInput::Real(x))?.into_state();
        }
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            let rec = self.forward_step(&state, StepInput::FeedBack)?;
            out.push(rec.layers[0].ahat.clone());
            state = rec.into_state();
        }
        Ok(out)
    }

    /// Mean loss over steps `1..T` of `Σ_l w_l·mean(E_l)`; steps at or after
    /// `feedback_from` consume their own prediction and score it against `targets`.
    pub fn sequence_loss(&self, inputs: &[Tensor<T>], targets: &[Tensor<T>], feedback_from: usize) -> Result<f64> {
        Ok(self.loss_impl(inputs, targets, feedback_from, false)?.0)
    }

    /// [`PredNet::sequence_loss`] plus gradients for every parameter.
    pub fn sequence_loss_and_grad(
        &self,
        inputs: &[Tensor<T>],
        targets: &[Tensor<T>],
        feedback_from: usize,
    ) -> Result<(f64, Vec<Tensor<T>>)> {
        let (loss, grads) = self.loss_impl(inputs, targets, feedback_from, true)?;
        Ok((loss, grads.expect("gradients requested")))
    }
}
