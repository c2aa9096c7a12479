//! Central-difference gradient checking (64-bit only).

use crate::numerics::tensor::Tensor;

/// Tuning for [`GradCheck::run`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub epsilon: f64,
    /// Denominator floor: coordinates whose gradients are both below this are
    /// compared in absolute terms.
    pub floor: f64,
    /// Check at most this many evenly spaced coordinates per tensor.
    pub max_per_tensor: Option<usize>,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            epsilon: 1e-6,
            floor: 1e-6,
            max_per_tensor: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(tensor, coordinate)` of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

impl GradCheck {
    pub fn with_epsilon(epsilon: f64) -> Self {
        GradCheck {
            epsilon,
            ..Self::default()
        }
    }

    pub fn sampled(mut self, max_per_tensor: usize) -> Self {
        self.max_per_tensor = Some(max_per_tensor);
        self
    }

    /// Compares the analytic gradient returned by `loss_and_grad` against
    /// central differences of its loss.
    pub fn run<F>(&self, loss_and_grad: F, params: &[Tensor<f64>]) -> GradCheckReport
    where
        F: Fn(&[Tensor<f64>]) -> (f64, Vec<Tensor<f64>>),
    {
        let (_, analytic) = loss_and_grad(params);
        self.compare(&analytic, |p| loss_and_grad(p).0, params)
    }

    /// Compares a precomputed `analytic` gradient against central differences
    /// of `loss`, for losses whose gradient is expensive.
    pub fn compare<F>(&self, analytic: &[Tensor<f64>], loss: F, params: &[Tensor<f64>]) -> GradCheckReport
    where
        F: Fn(&[Tensor<f64>]) -> f64,
    {
        assert_eq!(analytic.len(), params.len(), "one gradient per parameter");
        let mut work = params.to_vec();
        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst: None,
            checked: 0,
        };
        for ti in 0..params.len() {
            let n = params[ti].len();
            let coords: Vec<usize> = match self.max_per_tensor {
                Some(m) if m < n => (0..m).map(|i| i * n / m).collect(),
                _ => (0..n).collect(),
            };
            for ci in coords {
                let orig = work[ti].data()[ci];
                work[ti].data_mut()[ci] = orig + self.epsilon;
                let plus = loss(&work);
                work[ti].data_mut()[ci] = orig - self.epsilon;
                let minus = loss(&work);
                work[ti].data_mut()[ci] = orig;

                let numeric = (plus - minus) / (2.0 * self.epsilon);
                let a = analytic[ti].data()[ci];
                let denom = a.abs().max(numeric.abs()).max(self.floor);
                let rel = (a - numeric).abs() / denom;
                report.checked += 1;
                if rel > report.max_rel_error || report.worst.is_none() {
                    report.max_rel_error = report.max_rel_error.max(rel);
                    report.worst = Some((ti, ci));
                }
            }
        }
        report
    }
}

/// Worst relative error between analytic and central-difference gradients.
pub fn grad_check<F>(loss_and_grad: F, params: &[Tensor<f64>], epsilon: f64) -> f64
where
    F: Fn(&[Tensor<f64>]) -> (f64, Vec<Tensor<f64>>),
{
    GradCheck::with_epsilon(epsilon)
        .run(loss_and_grad, params)
        .max_rel_error
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ops::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn quadratic_loss() {
        let params = vec![
            Tensor::new(vec![3], vec![0.5, -1.5, 2.0]).unwrap(),
            Tensor::new(vec![2, 2], vec![1.0, 2.0, -3.0, 0.25]).unwrap(),
        ];
        let err = grad_check(
            |p| {
                let loss = 0.5 * p.iter().map(|t| t.norm_sq()).sum::<f64>();
                (loss, p.to_vec())
            },
            &params,
            1e-4,
        );
        assert!(err < 1e-9, "{err}");
    }

    /// Weighted sum so that every output coordinate carries a distinct gradient.
    fn weighted(y: &Tensor<f64>) -> (f64, Tensor<f64>) {
        let w = Tensor::from_fn(y.shape(), |i| ((i * 7919) % 13) as f64 / 13.0 - 0.4);
        let loss = y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
        (loss, w)
    }

    #[test]
    fn conv_relu_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = vec![
            random(&[2, 5, 6], &mut rng),
            random(&[3, 2, 3, 3], &mut rng),
            random(&[3], &mut rng),
        ];
        let err = grad_check(
            |p| {
                let z = conv2d(&p[0], &p[1], &p[2]).unwrap();
                let y = relu(&z);
                let n = y.len() as f64;
                let loss = y.mean();
                let gy = Tensor::full(y.shape(), 1.0 / n);
                let gz = relu_backward(&z, &gy).unwrap();
                let g = conv2d_backward(&p[0], &p[1], &gz, true).unwrap();
                (loss, vec![g.input.unwrap(), g.kernels, g.bias])
            },
            &params,
            1e-6,
        );
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn each_op_standalone() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = vec![random(&[2, 4, 6], &mut rng)];

        let ops: Vec<(&str, Box<dyn Fn(&[Tensor<f64>]) -> (f64, Vec<Tensor<f64>>)>)> = vec![
            (
                "sigmoid",
                Box::new(|p: &[Tensor<f64>]| {
                    let y = sigmoid(&p[0]);
                    let (l, w) = weighted(&y);
                    (l, vec![sigmoid_backward(&y, &w).unwrap()])
                }),
            ),
            (
                "tanh",
                Box::new(|p: &[Tensor<f64>]| {
                    let y = tanh(&p[0]);
                    let (l, w) = weighted(&y);
                    (l, vec![tanh_backward(&y, &w).unwrap()])
                }),
            ),
            (
                "relu",
                Box::new(|p: &[Tensor<f64>]| {
                    let y = relu(&p[0]);
                    let (l, w) = weighted(&y);
                    (l, vec![relu_backward(&p[0], &w).unwrap()])
                }),
            ),
            (
                "maxpool2",
                Box::new(|p: &[Tensor<f64>]| {
                    let pooled = maxpool2(&p[0]).unwrap();
                    let (l, w) = weighted(&pooled.output);
                    (
                        l,
                        vec![maxpool2_backward(&w, &pooled.argmax, p[0].shape()).unwrap()],
                    )
                }),
            ),
            (
                "upsample2",
                Box::new(|p: &[Tensor<f64>]| {
                    let y = upsample2(&p[0]).unwrap();
                    let (l, w) = weighted(&y);
                    (l, vec![upsample2_backward(&w).unwrap()])
                }),
            ),
        ];
        for (name, f) in &ops {
            let err = grad_check(f, &x, 1e-6);
            assert!(err < 1e-6, "{name}: {err}");
        }
    }

    #[test]
    fn sampled_checks_fewer_coordinates() {
        let params = vec![Tensor::<f64>::from_fn(&[100], |i| i as f64 * 0.01)];
        let report = GradCheck::with_epsilon(1e-4)
            .sampled(10)
            .run(|p| (0.5 * p[0].norm_sq(), p.to_vec()), &params);
        assert_eq!(report.checked, 10);
        assert!(report.max_rel_error < 1e-8);
    }
}
