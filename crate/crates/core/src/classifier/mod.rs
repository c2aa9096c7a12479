//! Action recognition on dynamic images: label timelines with next-action
//! relabelling, and a small convolutional classifier.
//!
//! The network is three `conv3×3 → relu → maxpool2` blocks, global average
//! pooling and a linear layer to class logits. It is trained with momentum SGD,
//! weight decay and a step learning-rate decay.

mod timeline;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::numerics::ops::{conv2d, conv2d_backward, maxpool2, maxpool2_backward, relu, relu_backward};
use crate::numerics::{Scalar, Tensor};
use crate::seed;

pub use timeline::{next_action_labels, next_label_at, LabelTimeline, Segment};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    /// Output channels of the three convolution blocks.
    pub channels: [usize; 3],
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Iterations between learning-rate decays.
    pub decay_every: usize,
    pub decay_factor: f64,
    /// Maximum random translation in pixels applied to each training sample.
    pub shift: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            channels: [8, 16, 32],
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch: 16,
            epochs: 200,
            decay_every: 6000,
            decay_factor: 0.5,
            shift: 3,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.iter().any(|&c| c == 0) {
            return Err(Error::config("classifier.channels must be positive"));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::config("classifier lr > 0, momentum in [0,1), weight decay ≥ 0"));
        }
        if self.batch == 0 || self.decay_every == 0 || !(self.decay_factor > 0.0) {
            return Err(Error::config("classifier batch, decay interval and factor must be positive"));
        }
        Ok(())
    }

    /// Learning rate at 0-based iteration `iter`.
    pub fn lr_at(&self, iter: usize) -> f64 {
        self.lr * self.decay_factor.powi((iter / self.decay_every) as i32)
    }
}

/// Network parameters, class table and input geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel<T: Scalar = f32> {
    pub class_names: Vec<String>,
    /// `[C, H, W]` of accepted inputs.
    pub input_shape: [usize; 3],
    /// conv0.w, conv0.b, conv1.w, conv1.b, conv2.w, conv2.b, fc.w, fc.b
    params: Vec<Tensor<T>>,
}

const PARAM_NAMES: [&str; 8] = [
    "conv0.weight",
    "conv0.bias",
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "fc.weight",
    "fc.bias",
];

struct BlockCache<T: Scalar> {
    input: Tensor<T>,
    pre: Tensor<T>,
    argmax: Vec<u32>,
}

struct Forward<T: Scalar> {
    blocks: Vec<BlockCache<T>>,
    pooled_shape: Vec<usize>,
    features: Vec<T>,
    probs: Vec<T>,
}

fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / s).collect()
}

impl<T: Scalar> ClassifierModel<T> {
    /// Uniform `±1/√fan_in` weights, zero biases.
    pub fn init(input_shape: [usize; 3], class_names: Vec<String>, cfg: &ClassifierConfig) -> Result<Self> {
        cfg.validate()?;
        let [c, h, w] = input_shape;
        if h % 8 != 0 || w % 8 != 0 || c == 0 {
            return Err(Error::config(format!("classifier input {h}×{w} must be divisible by 8")));
        }
        if class_names.len() < 2 {
            return Err(Error::config("classifier needs at least 2 classes"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut uniform = |shape: &[usize], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..bound)))
        };
        let mut params = Vec::new();
        let mut cin = c;
        for &cout in &cfg.channels {
            params.push(uniform(&[cout, cin, 3, 3], cin * 9));
            params.push(Tensor::zeros(&[cout]));
            cin = cout;
        }
        let n = class_names.len();
        params.push(uniform(&[n, cin], cin));
        params.push(Tensor::zeros(&[n]));
        Ok(ClassifierModel {
            class_names,
            input_shape,
            params,
        })
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn with_params(&self, params: Vec<Tensor<T>>) -> Result<Self> {
        if params.len() != self.params.len()
            || params.iter().zip(&self.params).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::shape("classifier parameter shapes differ"));
        }
        Ok(ClassifierModel {
            params,
            ..self.clone()
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape() != self.input_shape {
            return Err(Error::shape(format!(
                "classifier expects {:?}, got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Forward<T>> {
        self.check_input(x)?;
        let mut blocks = Vec::with_capacity(3);
        let mut cur = x.clone();
        for b in 0..3 {
            let pre = conv2d(&cur, &self.params[2 * b], &self.params[2 * b + 1])?;
            let pooled = maxpool2(&relu(&pre))?;
            blocks.push(BlockCache {
                input: cur,
                pre,
                argmax: pooled.argmax,
            });
            cur = pooled.output;
        }
        let (c, h, w) = cur.dims3()?;
        let hw = T::of((h * w) as f64);
        let features: Vec<T> = (0..c)
            .map(|ch| cur.data()[ch * h * w..(ch + 1) * h * w].iter().copied().sum::<T>() / hw)
            .collect();
        let fc_w = &self.params[6];
        let fc_b = &self.params[7];
        let logits: Vec<T> = (0..self.num_classes())
            .map(|k| {
                let row = &fc_w.data()[k * c..(k + 1) * c];
                fc_b.data()[k] + row.iter().zip(&features).map(|(&a, &b)| a * b).sum::<T>()
            })
            .collect();
        Ok(Forward {
            blocks,
            pooled_shape: cur.shape().to_vec(),
            features,
            probs: softmax(&logits),
        })
    }

    /// Softmax class probabilities.
    pub fn probabilities(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        Ok(self.forward(x)?.probs)
    }

    /// Cross-entropy of one example and its parameter gradients.
    pub fn loss_and_grad(&self, x: &Tensor<T>, class: usize) -> Result<(f64, Vec<Tensor<T>>)> {
        if class >= self.num_classes() {
            return Err(Error::invalid(format!("class index {class} out of range")));
        }
        let fw = self.forward(x)?;
        let loss = -fw.probs[class].max(T::min_positive_value()).ln().as_f64();
        let mut grads: Vec<Tensor<T>> = self.params.iter().map(|p| Tensor::zeros(p.shape())).collect();

        let mut d_logits = fw.probs.clone();
        d_logits[class] -= T::one();
        let c = fw.features.len();
        let mut d_feat = vec![T::zero(); c];
        for (k, &dl) in d_logits.iter().enumerate() {
            grads[7].data_mut()[k] = dl;
            let row = &self.params[6].data()[k * c..(k + 1) * c];
            for j in 0..c {
                grads[6].data_mut()[k * c + j] = dl * fw.features[j];
                d_feat[j] += dl * row[j];
            }
        }
        let (h, w) = (fw.pooled_shape[1], fw.pooled_shape[2]);
        let inv = T::one() / T::of((h * w) as f64);
        let mut d_cur = Tensor::from_fn(&fw.pooled_shape, |i| d_feat[i / (h * w)] * inv);
        for b in (0..3).rev() {
            let bc = &fw.blocks[b];
            let d_relu = maxpool2_backward(&d_cur, &bc.argmax, bc.pre.shape())?;
            let d_pre = relu_backward(&bc.pre, &d_relu)?;
            let cg = conv2d_backward(&bc.input, &self.params[2 * b], &d_pre, b > 0)?;
            grads[2 * b] = cg.kernels;
            grads[2 * b + 1] = cg.bias;
            if let Some(gi) = cg.input {
                d_cur = gi;
            }
        }
        Ok((loss, grads))
    }
}

/// Argmax class and the probability vector for one input.
pub fn classify<T: Scalar>(model: &ClassifierModel<T>, x: &Tensor<T>) -> Result<(usize, Vec<T>)> {
    let probs = model.probabilities(x)?;
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    Ok((best, probs))
}

/// [`classify`] over many inputs.
pub fn classify_batch<T: Scalar>(model: &ClassifierModel<T>, xs: &[Tensor<T>]) -> Result<Vec<(usize, Vec<T>)>> {
    xs.iter().map(|x| classify(model, x)).collect()
}

/// Fraction of `samples` whose argmax class matches the label.
pub fn accuracy(model: &ClassifierModel<f32>, samples: &[(Tensor<f32>, usize)]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for (x, y) in samples {
        if classify(model, x)?.0 == *y {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// One momentum-SGD update with L2 weight decay:
/// `v ← μ·v + g + λ·p`, `p ← p − η·v`.
pub fn sgd_step(params: &mut [Tensor<f32>], grads: &[Tensor<f32>], velocity: &mut [Tensor<f32>], lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
    for g in grads {
        g.check_finite("classifier gradient")?;
    }
    let (lr, mu, wd) = (lr as f32, momentum as f32, weight_decay as f32);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        p.same_shape(g, "sgd_step")?;
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = mu * *vv + gv + wd * *pv;
            *pv -= lr * *vv;
        }
    }
    Ok(())
}

/// Translates a C×H×W image by `(dy, dx)` pixels, repeating the border.
pub fn shift_image(x: &Tensor<f32>, dy: isize, dx: isize) -> Result<Tensor<f32>> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(Error::shape(format!("expected C×H×W, got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1] as isize, s[2] as isize);
    let src = x.data();
    let mut out = Vec::with_capacity(src.len());
    for ch in 0..c {
        let plane = &src[ch * (h * w) as usize..(ch + 1) * (h * w) as usize];
        for i in 0..h {
            let si = (i - dy).clamp(0, h - 1);
            for j in 0..w {
                let sj = (j - dx).clamp(0, w - 1);
                out.push(plane[(si * w + sj) as usize]);
            }
        }
    }
    Tensor::new(s.to_vec(), out)
}

/// Mean training loss of each epoch.
pub type LossCurve = Vec<f64>;

/// Trains on `(normalized DI, class index)` pairs. Every class must occur.
pub fn train_classifier(
    samples: &[(Tensor<f32>, usize)],
    class_names: Vec<String>,
    cfg: &ClassifierConfig,
) -> Result<(ClassifierModel<f32>, LossCurve)> {
    let first = samples.first().ok_or_else(|| Error::invalid("no classifier training samples"))?;
    let n_classes = class_names.len();
    for k in 0..n_classes {
        if !samples.iter().any(|(_, y)| *y == k) {
            return Err(Error::invalid(format!(
                "class `{}` has no training examples",
                class_names[k]
            )));
        }
    }
    if let Some((_, y)) = samples.iter().find(|(_, y)| *y >= n_classes) {
        return Err(Error::invalid(format!("label {y} outside the {n_classes}-class table")));
    }
    let s = first.0.shape();
    let shape = [s[0], s[1], s[2]];
    let mut model = ClassifierModel::<f32>::init(shape, class_names, cfg)?;
    let mut velocity: Vec<Tensor<f32>> = model.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut iter = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::fork(cfg.seed, &[epoch as u64])));
        let mut shift_rng = ChaCha8Rng::seed_from_u64(seed::fork(cfg.seed, &[epoch as u64, 1]));
        let r = cfg.shift as isize;
        let shifts: Vec<(isize, isize)> = (0..samples.len())
            .map(|_| (shift_rng.gen_range(-r..=r), shift_rng.gen_range(-r..=r)))
            .collect();
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let mut grads: Vec<Tensor<f32>> = model.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            let scale = 1.0 / chunk.len() as f32;
            for &i in chunk {
                let (dy, dx) = shifts[i];
                let (loss, g) = if r == 0 {
                    model.loss_and_grad(&samples[i].0, samples[i].1)?
                } else {
                    model.loss_and_grad(&shift_image(&samples[i].0, dy, dx)?, samples[i].1)?
                };
                total += loss;
                for (acc, gi) in grads.iter_mut().zip(&g) {
                    acc.axpy(scale, gi)?;
                }
            }
            sgd_step(&mut model.params, &grads, &mut velocity, cfg.lr_at(iter), cfg.momentum, cfg.weight_decay)?;
            iter += 1;
        }
        let mean = total / samples.len() as f64;
        log::info!("classifier epoch {epoch} loss {mean:.5}");
        curve.push(mean);
    }
    Ok((model, curve))
}

impl ClassifierModel<f32> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("kind", "classifier");
        ck.set_meta("classes", self.class_names.len());
        for (i, n) in self.class_names.iter().enumerate() {
            ck.set_meta(&format!("class.{i}"), n);
        }
        ck.set_meta(
            "input_shape",
            self.input_shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(","),
        );
        for (n, p) in PARAM_NAMES.iter().zip(&self.params) {
            ck.push(*n, p.clone());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let bad = |r: &str| Error::Format {
            what: "checkpoint",
            reason: r.to_string(),
        };
        if ck.meta("kind")? != "classifier" {
            return Err(bad("not a classifier checkpoint"));
        }
        let n: usize = ck.meta_parse("classes")?;
        let class_names = (0..n)
            .map(|i| ck.meta(&format!("class.{i}")).map(str::to_string))
            .collect::<Result<Vec<_>>>()?;
        let dims: Vec<usize> = ck
            .meta("input_shape")?
            .split(',')
            .map(|d| d.parse().map_err(|_| bad("bad input_shape")))
            .collect::<Result<_>>()?;
        let input_shape: [usize; 3] = dims.try_into().map_err(|_| bad("input_shape needs 3 dims"))?;
        let params = PARAM_NAMES
            .iter()
            .map(|n| ck.get(n).cloned())
            .collect::<Result<Vec<_>>>()?;
        let channels = [params[0].shape()[0], params[2].shape()[0], params[4].shape()[0]];
        let template = ClassifierModel::<f32>::init(
            input_shape,
            class_names,
            &ClassifierConfig {
                channels,
                ..ClassifierConfig::default()
            },
        )?;
        template.with_params(params)
    }
}
