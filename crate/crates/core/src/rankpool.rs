//! Rank pooling: the parameters of a linear ranking machine over running-mean
//! frame features, reshaped into a *dynamic image*.
//!
//! For a window of frames `I_1..I_T`, let `V_t` be the mean of the flattened
//! RGB frames up to `t`. Rank pooling returns the minimiser of
//!
//! ```text
//! f(d) = ½·λ·‖d‖² + 2/(T(T−1)) · Σ_{q>t} max(0, 1 − ⟨d, V_q⟩ + ⟨d, V_t⟩)
//! ```
//!
//! Two solvers are provided. [`Solver::DualCoordinate`] runs exact
//! coordinate ascent on the box-constrained dual, entirely in the T×T Gram
//! space of the running means, and is the default. [`Solver::Subgradient`] is
//! full-batch subgradient descent from `d = 0` with step `η₀/(1 + k/K)`.
//! Both return the best primal iterate seen.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::video::{sliding_windows, ClassId, VideoSequence, WindowSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    DualCoordinate,
    Subgradient,
}

impl std::str::FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dual" => Ok(Solver::DualCoordinate),
            "subgradient" => Ok(Solver::Subgradient),
            _ => Err(Error::config(format!(
                "unknown rank-pool solver `{s}` (dual | subgradient)"
            ))),
        }
    }
}

impl std::fmt::Display for Solver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Solver::DualCoordinate => "dual",
            Solver::Subgradient => "subgradient",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankPoolConfig {
    pub lambda: f64,
    /// Epochs over all pairs (dual) or descent steps (subgradient).
    pub iters: usize,
    pub tol: f64,
    pub solver: Solver,
    /// Initial subgradient step `η₀`.
    pub eta0: f64,
    /// Step decay horizon `K` in `η₀/(1 + k/K)`.
    pub decay: f64,
}

impl Default for RankPoolConfig {
    fn default() -> Self {
        RankPoolConfig {
            lambda: 1.0,
            iters: 2000,
            tol: 1e-10,
            solver: Solver::DualCoordinate,
            eta0: 0.1,
            decay: 100.0,
        }
    }
}

impl RankPoolConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::config(format!("rankpool.lambda must be ≥ 0, got {}", self.lambda)));
        }
        if self.iters < 1 {
            return Err(Error::config("rankpool.iters must be ≥ 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("rankpool.tol must be > 0"));
        }
        if !(self.eta0 > 0.0) || !(self.decay > 0.0) {
            return Err(Error::config("subgradient step schedule must be positive"));
        }
        Ok(())
    }
}

/// Result of one rank-pooling solve.
#[derive(Debug, Clone, PartialEq)]
pub struct RankPoolSolution {
    pub d: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Objective of each accepted (improving) iterate, in order.
    pub trace: Vec<f64>,
}

/// `V_t = (1/t)·Σ_{τ≤t} ψ(I_τ)` for every prefix of the window, where `ψ`
/// flattens a frame into one vector.
pub fn running_means(window: &[Tensor<f32>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(window.len());
    let Some(first) = window.first() else {
        return out;
    };
    let mut acc = vec![0.0f64; first.len()];
    for (t, frame) in window.iter().enumerate() {
        for (a, &v) in acc.iter_mut().zip(frame.data()) {
            *a += v as f64;
        }
        let inv = 1.0 / (t + 1) as f64;
        out.push(acc.iter().map(|a| a * inv).collect());
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn pair_weight(t: usize) -> f64 {
    2.0 / (t as f64 * (t as f64 - 1.0))
}

/// The rank-pooling objective `f(d)` over precomputed features `V_t`.
pub fn objective(features: &[Vec<f64>], d: &[f64], lambda: f64) -> f64 {
    let scores: Vec<f64> = features.iter().map(|v| dot(d, v)).collect();
    objective_from_scores(&scores, dot(d, d), lambda)
}

fn objective_from_scores(scores: &[f64], d_norm_sq: f64, lambda: f64) -> f64 {
    let n = scores.len();
    let mut hinge = 0.0;
    for t in 0..n {
        for q in t + 1..n {
            hinge += (1.0 - scores[q] + scores[t]).max(0.0);
        }
    }
    0.5 * lambda * d_norm_sq + pair_weight(n) * hinge
}

fn check_features(features: &[Vec<f64>]) -> Result<usize> {
    if features.len() < 2 {
        return Err(Error::invalid(format!(
            "rank pooling needs at least 2 frames, got {}",
            features.len()
        )));
    }
    let dim = features[0].len();
    if features.iter().any(|v| v.len() != dim) {
        return Err(Error::shape("rank pooling features differ in length"));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rank pooling features".into()));
    }
    Ok(dim)
}

/// Solves rank pooling over feature vectors `V_1..V_T` (already time-averaged).
pub fn rank_pool_features(features: &[Vec<f64>], cfg: &RankPoolConfig) -> Result<RankPoolSolution> {
    cfg.validate()?;
    check_features(features)?;
    let sol = match cfg.solver {
        Solver::DualCoordinate if cfg.lambda > 0.0 => dual_coordinate(features, cfg),
        // the dual is unbounded without regularisation
        _ => subgradient(features, cfg),
    };
    if !sol.objective.is_finite() || sol.d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rank pooling solution".into()));
    }
    Ok(sol)
}

/// Rank-pools a window of frames; returns the flat `d*`.
pub fn rank_pool(window: &[Tensor<f32>], cfg: &RankPoolConfig) -> Result<Vec<f64>> {
    if window.len() < 2 {
        return Err(Error::invalid(format!(
            "rank pooling needs at least 2 frames, got {}",
            window.len()
        )));
    }
    Ok(rank_pool_features(&running_means(window), cfg)?.d)
}

fn subgradient(features: &[Vec<f64>], cfg: &RankPoolConfig) -> RankPoolSolution {
    let n = features.len();
    let dim = features[0].len();
    let w = pair_weight(n);
    let mut d = vec![0.0; dim];
    let mut best = (f64::INFINITY, d.clone());
    let mut trace = Vec::new();
    let mut coef = vec![0.0; n];
    let mut iterations = 0;

    for k in 0..cfg.iters {
        iterations = k + 1;
        let scores: Vec<f64> = features.iter().map(|v| dot(&d, v)).collect();
        let f = objective_from_scores(&scores, dot(&d, &d), cfg.lambda);
        if f < best.0 {
            best = (f, d.clone());
            trace.push(f);
        }
        // active pair (t, q) contributes V_t − V_q
        coef.iter_mut().for_each(|c| *c = 0.0);
        for t in 0..n {
            for q in t + 1..n {
                if 1.0 - scores[q] + scores[t] > 0.0 {
                    coef[t] += w;
                    coef[q] -= w;
                }
            }
        }
        let eta = cfg.eta0 / (1.0 + k as f64 / cfg.decay);
        let mut step_max: f64 = 0.0;
        let mut grad: Vec<f64> = d.iter().map(|&x| cfg.lambda * x).collect();
        for (c, v) in coef.iter().zip(features) {
            if *c != 0.0 {
                for (g, &x) in grad.iter_mut().zip(v) {
                    *g += c * x;
                }
            }
        }
        for (x, g) in d.iter_mut().zip(&grad) {
            let s = eta * g;
            step_max = step_max.max(s.abs());
            *x -= s;
        }
        if step_max < cfg.tol {
            let scores: Vec<f64> = features.iter().map(|v| dot(&d, v)).collect();
            let f = objective_from_scores(&scores, dot(&d, &d), cfg.lambda);
            if f < best.0 {
                best = (f, d.clone());
                trace.push(f);
            }
            break;
        }
    }
    RankPoolSolution {
        d: best.1,
        objective: best.0,
        iterations,
        trace,
    }
}

/// Coordinate ascent on the dual
/// `max_α Σα_p − ‖Σ α_p a_p‖²/(2λ)`, `0 ≤ α_p ≤ 2/(T(T−1))`, `a_p = V_q − V_t`.
/// With `d = Σ β_s V_s / λ` every quantity lives in the T×T Gram matrix.
fn dual_coordinate(features: &[Vec<f64>], cfg: &RankPoolConfig) -> RankPoolSolution {
    let n = features.len();
    let lambda = cfg.lambda;
    let cap = pair_weight(n);

    let mut gram = vec![0.0; n * n];
    for s in 0..n {
        for u in s..n {
            let g = dot(&features[s], &features[u]);
            gram[s * n + u] = g;
            gram[u * n + s] = g;
        }
    }
    let pairs: Vec<(usize, usize, f64)> = (0..n)
        .flat_map(|t| (t + 1..n).map(move |q| (t, q)))
        .map(|(t, q)| {
            let sq = gram[q * n + q] + gram[t * n + t] - 2.0 * gram[q * n + t];
            (t, q, sq)
        })
        .collect();
    // pairs with identical features carry a constant hinge and never move d
    let scale = gram.iter().fold(0.0f64, |m, g| m.max(g.abs())).max(1.0);
    let degenerate = 1e-14 * scale;

    let primal = |beta: &[f64]| -> (f64, Vec<f64>) {
        let scores: Vec<f64> = (0..n)
            .map(|s| (0..n).map(|u| gram[s * n + u] * beta[u]).sum::<f64>() / lambda)
            .collect();
        let norm_sq = dot(beta, &scores) / lambda;
        (objective_from_scores(&scores, norm_sq.max(0.0), lambda), scores)
    };

    let mut alpha = vec![0.0; pairs.len()];
    let mut beta = vec![0.0; n];
    let (f0, mut scores) = primal(&beta);
    let mut best = (f0, beta.clone());
    let mut trace = vec![f0];
    let mut iterations = 0;

    for epoch in 0..cfg.iters {
        iterations = epoch + 1;
        let mut max_violation: f64 = 0.0;
        for (p, &(t, q, sq)) in pairs.iter().enumerate() {
            if sq <= degenerate {
                continue;
            }
            let grad = 1.0 - (scores[q] - scores[t]);
            let a = alpha[p];
            let projected = if a <= 0.0 {
                grad.max(0.0)
            } else if a >= cap {
                grad.min(0.0)
            } else {
                grad
            };
            max_violation = max_violation.max(projected.abs());
            if projected == 0.0 {
                continue;
            }
            let next = (a + lambda * grad / sq).clamp(0.0, cap);
            let delta = next - a;
            if delta == 0.0 {
                continue;
            }
            alpha[p] = next;
            beta[q] += delta;
            beta[t] -= delta;
            for (s, sc) in scores.iter_mut().enumerate() {
                *sc += delta * (gram[s * n + q] - gram[s * n + t]) / lambda;
            }
        }
        let (f, fresh) = primal(&beta);
        scores = fresh;
        if f < best.0 {
            best = (f, beta.clone());
            trace.push(f);
        }
        if max_violation < cfg.tol {
            break;
        }
    }

    let dim = features[0].len();
    let mut d = vec![0.0; dim];
    for (b, v) in best.1.iter().zip(features) {
        if *b != 0.0 {
            for (x, &y) in d.iter_mut().zip(v) {
                *x += b * y;
            }
        }
    }
    d.iter_mut().for_each(|x| *x /= lambda);
    let f = objective(features, &d, lambda);
    RankPoolSolution {
        d,
        objective: f,
        iterations,
        trace,
    }
}

/// Where a dynamic image came from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DiSource {
    pub video: String,
    pub start_frame: usize,
    pub window: usize,
}

/// A rank-pooled window reshaped to an image, with its display bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicImage {
    /// Raw `d*` as C×H×W.
    pub values: Tensor<f32>,
    pub source: DiSource,
    /// `(min, max)` of the raw values.
    pub norm_bounds: (f32, f32),
    pub label: Option<ClassId>,
    pub next_label: Option<ClassId>,
}

impl DynamicImage {
    /// Wraps raw values, computing the normalisation bounds.
    pub fn from_raw(values: Tensor<f32>, source: DiSource) -> Self {
        let norm_bounds = (values.min(), values.max());
        DynamicImage {
            values,
            source,
            norm_bounds,
            label: None,
            next_label: None,
        }
    }

    /// Wraps a prediction that already lives in the normalised [0,1] space.
    /// `bounds` maps it back to raw values.
    pub fn from_normalized(normalized: &Tensor<f32>, bounds: (f32, f32), source: DiSource) -> Self {
        let (lo, hi) = bounds;
        let values = normalized.map(|v| lo + v * (hi - lo));
        DynamicImage {
            values,
            source,
            norm_bounds: bounds,
            label: None,
            next_label: None,
        }
    }

    /// Linear min-max map of the raw values to [0,1]; constant images map to 0.5.
    pub fn normalized(&self) -> Tensor<f32> {
        let (lo, hi) = self.norm_bounds;
        if hi > lo {
            let inv = 1.0 / (hi - lo);
            self.values.map(|v| ((v - lo) * inv).clamp(0.0, 1.0))
        } else {
            self.values.map(|_| 0.5)
        }
    }
}

/// Rank-pools `window` into a dynamic image shaped like its frames.
pub fn make_dynamic_image(window: &[Tensor<f32>], cfg: &RankPoolConfig) -> Result<DynamicImage> {
    let d = rank_pool(window, cfg)?;
    let shape = window[0].shape().to_vec();
    let values = Tensor::new(shape, d.into_iter().map(|v| v as f32).collect())?;
    Ok(DynamicImage::from_raw(
        values,
        DiSource {
            window: window.len(),
            ..DiSource::default()
        },
    ))
}

/// Most frequent label; ties go to the label seen first.
pub fn majority_label(labels: &[ClassId]) -> Option<ClassId> {
    let mut counts: Vec<(ClassId, usize)> = Vec::new();
    for &l in labels {
        match counts.iter_mut().find(|(c, _)| *c == l) {
            Some((_, n)) => *n += 1,
            None => counts.push((l, 1)),
        }
    }
    let mut best: Option<(ClassId, usize)> = None;
    for (c, n) in counts {
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((c, n));
        }
    }
    best.map(|(c, _)| c)
}

/// Dynamic images for every sliding window of `video`, ordered by start frame.
/// Each carries the majority frame label of its window (if the video is labelled).
pub fn di_sequence(
    video: &VideoSequence,
    spec: WindowSpec,
    cfg: &RankPoolConfig,
) -> Result<Vec<DynamicImage>> {
    let windows = sliding_windows(video, spec)?;
    windows
        .par_iter()
        .map(|w| {
            let mut di = make_dynamic_image(w.frames, cfg)?;
            di.source = DiSource {
                video: video.name.clone(),
                start_frame: w.start,
                window: spec.window,
            };
            di.label = video
                .labels()
                .and_then(|l| majority_label(&l[w.start..w.start + spec.window]));
            Ok(di)
        })
        .collect()
}
