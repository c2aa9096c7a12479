//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

fn pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|t| (t + 1..n).map(move |q| (t, q))).collect()
}

/// Direct evaluation of the rank-pooling objective from raw features.
pub fn rank_objective(features: &[Vec<f64>], d: &[f64], lambda: f64) -> f64 {
    let n = features.len();
    let c = 2.0 / (n as f64 * (n as f64 - 1.0));
    let score = |v: &Vec<f64>| v.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
    let reg = 0.5 * lambda * d.iter().map(|x| x * x).sum::<f64>();
    let hinge: f64 = pairs(n)
        .into_iter()
        .map(|(t, q)| (1.0 - score(&features[q]) + score(&features[t])).max(0.0))
        .sum();
    reg + c * hinge
}

/// Exact minimum of the rank-pooling objective (λ > 0) by enumerating every
/// assignment of pairs to {inactive, tight, active}. On the correct assignment
/// the minimiser is the least-norm solution of an equality-constrained
/// quadratic, so the smallest objective over all candidates is the optimum.
pub fn rank_pool_brute_force(features: &[Vec<f64>], lambda: f64) -> (f64, Vec<f64>) {
    let n = features.len();
    let dim = features[0].len();
    let c = 2.0 / (n as f64 * (n as f64 - 1.0));
    let ps = pairs(n);
    let diffs: Vec<DVector<f64>> = ps
        .iter()
        .map(|&(t, q)| DVector::from_iterator(dim, (0..dim).map(|k| features[q][k] - features[t][k])))
        .collect();
    let mut best = (f64::INFINITY, vec![0.0; dim]);
    let total = 3usize.pow(ps.len() as u32);
    for code in 0..total {
        let mut active = Vec::new();
        let mut tight = Vec::new();
        let mut k = code;
        for p in 0..ps.len() {
            match k % 3 {
                1 => tight.push(p),
                2 => active.push(p),
                _ => {}
            }
            k /= 3;
        }
        // unconstrained part: d0 = (c/λ) Σ_active a_p
        let mut d0 = DVector::zeros(dim);
        for &p in &active {
            d0 += &diffs[p] * (c / lambda);
        }
        let d = if tight.is_empty() {
            d0
        } else {
            // d = d0 + Σ μ_z a_z / λ with a_z·d = 1 on tight pairs
            let m = tight.len();
            let a = DMatrix::from_fn(dim, m, |r, j| diffs[tight[j]][r]);
            let gram = a.transpose() * &a / lambda;
            let rhs = DVector::from_iterator(m, tight.iter().map(|&z| 1.0 - diffs[z].dot(&d0)));
            let Ok(mu) = gram.svd(true, true).solve(&rhs, 1e-12) else {
                continue;
            };
            d0 + a * mu / lambda
        };
        let dv: Vec<f64> = d.iter().copied().collect();
        let f = rank_objective(features, &dv, lambda);
        if f < best.0 {
            best = (f, dv);
        }
    }
    best
}

/// Dense grid search for one-dimensional features.
pub fn rank_pool_grid_1d(features: &[Vec<f64>], lambda: f64, lo: f64, hi: f64, steps: usize) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..=steps {
        let d = lo + (hi - lo) * i as f64 / steps as f64;
        let f = rank_objective(features, &[d], lambda);
        if f < best.0 {
            best = (f, d);
        }
    }
    best
}

use dipred::numerics::ops::{
    conv2d, conv2d_backward, maxpool2, maxpool2_backward, relu, relu_backward, sigmoid, sigmoid_backward,
    tanh, tanh_backward, upsample2, upsample2_backward,
};
use dipred::numerics::{GradCheck, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    // keep values away from the relu/maxpool kinks
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

fn weighted_sum(y: &Tensor<f64>, w: &Tensor<f64>) -> f64 {
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

/// Central-difference check of every tensor op's backward pass through the
/// scalar loss `Σ w ⊙ op(x)`. Returns the worst relative error per op.
pub fn op_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gc = GradCheck::with_epsilon(1e-6);
    let mut out = Vec::new();

    let x = random_tensor(&[3, 4, 6], &mut rng);
    let k = random_tensor(&[2, 3, 3, 3], &mut rng);
    let b = random_tensor(&[2], &mut rng);
    let w = random_tensor(&[2, 4, 6], &mut rng);
    let r = gc.run(
        |p| {
            let y = conv2d(&p[0], &p[1], &p[2]).unwrap();
            let g = conv2d_backward(&p[0], &p[1], &w, true).unwrap();
            (weighted_sum(&y, &w), vec![g.input.unwrap(), g.kernels, g.bias])
        },
        &[x.clone(), k, b],
    );
    out.push(("conv2d", r.max_rel_error));

    let w2 = random_tensor(&[3, 2, 3], &mut rng);
    let r = gc.run(
        |p| {
            let pooled = maxpool2(&p[0]).unwrap();
            let g = maxpool2_backward(&w2, &pooled.argmax, p[0].shape()).unwrap();
            (weighted_sum(&pooled.output, &w2), vec![g])
        },
        &[x.clone()],
    );
    out.push(("maxpool2", r.max_rel_error));

    let w3 = random_tensor(&[3, 8, 12], &mut rng);
    let r = gc.run(
        |p| {
            let y = upsample2(&p[0]).unwrap();
            (weighted_sum(&y, &w3), vec![upsample2_backward(&w3).unwrap()])
        },
        &[x.clone()],
    );
    out.push(("upsample2", r.max_rel_error));

    let w4 = random_tensor(&[3, 4, 6], &mut rng);
    let r = gc.run(
        |p| (weighted_sum(&relu(&p[0]), &w4), vec![relu_backward(&p[0], &w4).unwrap()]),
        &[x.clone()],
    );
    out.push(("relu", r.max_rel_error));
    let r = gc.run(
        |p| {
            let y = sigmoid(&p[0]);
            (weighted_sum(&y, &w4), vec![sigmoid_backward(&y, &w4).unwrap()])
        },
        &[x.clone()],
    );
    out.push(("sigmoid", r.max_rel_error));
    let r = gc.run(
        |p| {
            let y = tanh(&p[0]);
            (weighted_sum(&y, &w4), vec![tanh_backward(&y, &w4).unwrap()])
        },
        &[x],
    );
    out.push(("tanh", r.max_rel_error));
    out
}
