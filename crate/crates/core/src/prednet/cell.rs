use crate::error::{Error, Result};
use crate::numerics::ops::{
    conv2d, conv2d_backward, maxpool2, maxpool2_backward, relu, relu_backward, sigmoid,
    sigmoid_backward, tanh, tanh_backward, upsample2, upsample2_backward,
};
use crate::numerics::{Scalar, Tensor};

use super::{ErrorMode, PredNet, PredNetState, StepInput};

/// `E = [φ(relu(A−Â)); φ(relu(Â−A))]` with `φ` the identity or `log(1+·)`.
pub fn split_error<T: Scalar>(a: &Tensor<T>, ahat: &Tensor<T>, mode: ErrorMode) -> Result<Tensor<T>> {
    a.same_shape(ahat, "split_error")?;
    let (c, h, w) = a.dims3()?;
    let n = a.len();
    let mut out = vec![T::zero(); 2 * n];
    let phi = |u: T| match mode {
        ErrorMode::SplitL1 => u,
        ErrorMode::SplitLog => u.ln_1p(),
    };
    for (i, (&x, &y)) in a.data().iter().zip(ahat.data()).enumerate() {
        let u = x - y;
        if u > T::zero() {
            out[i] = phi(u);
        } else if u < T::zero() {
            out[n + i] = phi(-u);
        }
    }
    Ok(Tensor::from_parts(vec![2 * c, h, w], out))
}

/// Adjoint of [`split_error`]: returns `(dA, dÂ)`. The derivative at `A = Â` is 0.
fn split_error_backward<T: Scalar>(
    a: &Tensor<T>,
    ahat: &Tensor<T>,
    grad: &Tensor<T>,
    mode: ErrorMode,
) -> (Tensor<T>, Tensor<T>) {
    let n = a.len();
    let g = grad.data();
    let mut da = vec![T::zero(); n];
    let mut dh = vec![T::zero(); n];
    let dphi = |u: T| match mode {
        ErrorMode::SplitL1 => T::one(),
        ErrorMode::SplitLog => T::one() / (T::one() + u),
    };
    for (i, (&x, &y)) in a.data().iter().zip(ahat.data()).enumerate() {
        let u = x - y;
        if u > T::zero() {
            let d = g[i] * dphi(u);
            da[i] = d;
            dh[i] = -d;
        } else if u < T::zero() {
            let d = g[n + i] * dphi(-u);
            da[i] = -d;
            dh[i] = d;
        }
    }
    (
        Tensor::from_parts(a.shape().to_vec(), da),
        Tensor::from_parts(a.shape().to_vec(), dh),
    )
}

fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

/// Everything one layer computed during one step.
#[derive(Debug, Clone)]
pub struct LayerRecord<T: Scalar> {
    lstm_in: Tensor<T>,
    gate_i: Tensor<T>,
    gate_f: Tensor<T>,
    gate_o: Tensor<T>,
    gate_g: Tensor<T>,
    c_prev: Tensor<T>,
    c: Tensor<T>,
    tanh_c: Tensor<T>,
    pub r: Tensor<T>,
    ahat_pre: Tensor<T>,
    pub ahat: Tensor<T>,
    pub a: Tensor<T>,
    /// Target convolution output before relu, and pooling argmax (layers > 0).
    a_pre: Option<(Tensor<T>, Vec<u32>)>,
    pub e: Tensor<T>,
}

/// One step of the network with all intermediates kept for backprop.
#[derive(Debug, Clone)]
pub struct StepRecord<T: Scalar> {
    pub layers: Vec<LayerRecord<T>>,
    pub fed_back: bool,
}

impl<T: Scalar> StepRecord<T> {
    pub fn state(&self) -> PredNetState<T> {
        PredNetState {
            r: self.layers.iter().map(|l| l.r.clone()).collect(),
            c: self.layers.iter().map(|l| l.c.clone()).collect(),
            e: self.layers.iter().map(|l| l.e.clone()).collect(),
        }
    }

    pub fn into_state(self) -> PredNetState<T> {
        let mut s = PredNetState {
            r: Vec::new(),
            c: Vec::new(),
            e: Vec::new(),
        };
        for l in self.layers {
            s.r.push(l.r);
            s.c.push(l.c);
            s.e.push(l.e);
        }
        s
    }
}

struct Partial<T: Scalar> {
    lstm_in: Tensor<T>,
    gates: [Tensor<T>; 4],
    c_prev: Tensor<T>,
    c: Tensor<T>,
    tanh_c: Tensor<T>,
    r: Tensor<T>,
}

impl<T: Scalar> PredNet<T> {
    fn check_state(&self, state: &PredNetState<T>) -> Result<()> {
        let l = self.config.layers();
        if state.r.len() != l || state.c.len() != l || state.e.len() != l {
            return Err(Error::shape(format!("state does not have {l} layers")));
        }
        for (i, &ch) in self.config.channels.iter().enumerate() {
            let (h, w) = self.config.layer_size(i);
            if state.r[i].shape() != [ch, h, w]
                || state.c[i].shape() != [ch, h, w]
                || state.e[i].shape() != [2 * ch, h, w]
            {
                return Err(Error::shape(format!("state layer {i} has wrong shape")));
            }
        }
        Ok(())
    }

    /// One step keeping every intermediate.
    pub fn forward_step(&self, prev: &PredNetState<T>, input: StepInput<'_, T>) -> Result<StepRecord<T>> {
        self.check_state(prev)?;
        let cfg = &self.config;
        if let StepInput::Real(x) = input {
            let want = [cfg.channels[0], cfg.height, cfg.width];
            if x.shape() != want {
                return Err(Error::shape(format!("input is {:?}, expected {want:?}", x.shape())));
            }
        }
        let n_layers = cfg.layers();
        let p = &self.params;

        let mut partial: Vec<Option<Partial<T>>> = (0..n_layers).map(|_| None).collect();
        for l in (0..n_layers).rev() {
            let s = self.slots[l];
            let ch = cfg.channels[l];
            let up = match partial.get(l + 1) {
                Some(Some(above)) => Some(upsample2(&above.r)?),
                _ => None,
            };
            let mut parts = vec![&prev.e[l], &prev.r[l]];
            if let Some(u) = &up {
                parts.push(u);
            }
            let lstm_in = Tensor::concat_channels(&parts)?;
            let z = conv2d(&lstm_in, &p[s.lstm_w], &p[s.lstm_b])?;
            let zs = z.split_channels(&[ch; 4])?;
            let gi = sigmoid(&zs[0]);
            let gf = sigmoid(&zs[1]);
            let go = sigmoid(&zs[2]);
            let gg = tanh(&zs[3]);
            let c_prev = prev.c[l].clone();
            let mut c = mul(&gf, &c_prev);
            c.add_assign(&mul(&gi, &gg))?;
            let tanh_c = tanh(&c);
            let r = mul(&go, &tanh_c);
            partial[l] = Some(Partial {
                lstm_in,
                gates: [gi, gf, go, gg],
                c_prev,
                c,
                tanh_c,
                r,
            });
        }

        let mut layers: Vec<LayerRecord<T>> = Vec::with_capacity(n_layers);
        for (l, part) in partial.into_iter().enumerate() {
            let part = part.expect("every layer updated top-down");
            let s = self.slots[l];
            let ahat_pre = conv2d(&part.r, &p[s.ahat_w], &p[s.ahat_b])?;
            let mut ahat = relu(&ahat_pre);
            if l == 0 {
                ahat = ahat.map(|v| v.min(T::one()));
            }
            let (a, a_pre) = match (l, s.a) {
                (0, _) => match input {
                    StepInput::Real(x) => (x.clone(), None),
                    StepInput::FeedBack => (ahat.clone(), None),
                },
                (_, Some((w, b))) => {
                    let pre = conv2d(&layers[l - 1].e, &p[w], &p[b])?;
                    let pooled = maxpool2(&relu(&pre))?;
                    (pooled.output, Some((pre, pooled.argmax)))
                }
                _ => unreachable!("layers above 0 have a target convolution"),
            };
            let e = split_error(&a, &ahat, cfg.error_mode)?;
            let [gate_i, gate_f, gate_o, gate_g] = part.gates;
            layers.push(LayerRecord {
                lstm_in: part.lstm_in,
                gate_i,
                gate_f,
                gate_o,
                gate_g,
                c_prev: part.c_prev,
                c: part.c,
                tanh_c: part.tanh_c,
                r: part.r,
                ahat_pre,
                ahat,
                a,
                a_pre,
                e,
            });
        }
        let rec = StepRecord {
            layers,
            fed_back: matches!(input, StepInput::FeedBack),
        };
        for l in &rec.layers {
            l.ahat.check_finite("prediction")?;
            l.e.check_finite("error map")?;
        }
        Ok(rec)
    }

    /// Runs a sequence from the zero state, recording every step.
    pub fn forward_sequence(&self, inputs: &[Tensor<T>], feedback_from: usize) -> Result<Vec<StepRecord<T>>> {
        let mut state = self.zero_state();
        let mut records = Vec::with_capacity(inputs.len());
        for (t, x) in inputs.iter().enumerate() {
            let input = if t >= feedback_from {
                StepInput::FeedBack
            } else {
                StepInput::Real(x)
            };
            let rec = self.forward_step(&state, input)?;
            state = rec.state();
            records.push(rec);
        }
        Ok(records)
    }

    pub(super) fn loss_impl(
        &self,
        inputs: &[Tensor<T>],
        targets: &[Tensor<T>],
        feedback_from: usize,
        want_grad: bool,
    ) -> Result<(f64, Option<Vec<Tensor<T>>>)> {
        let n = inputs.len();
        if n < 2 {
            return Err(Error::invalid(format!("sequence needs ≥ 2 DIs, got {n}")));
        }
        if targets.len() != n {
            return Err(Error::invalid(format!("{} targets for {n} inputs", targets.len())));
        }
        let cfg = &self.config;
        let mode = cfg.error_mode;
        let records = self.forward_sequence(inputs, feedback_from)?;
        let step_w = 1.0 / (n - 1) as f64;

        // layer-0 loss term compares the prediction with the true input
        let bottom_err = |t: usize| -> Result<Tensor<T>> {
            let rec = &records[t].layers[0];
            if records[t].fed_back {
                split_error(&targets[t], &rec.ahat, mode)
            } else {
                Ok(rec.e.clone())
            }
        };
        let mut loss = 0.0;
        for t in 1..n {
            for (l, &w) in cfg.layer_weights.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let e = if l == 0 {
                    bottom_err(t)?
                } else {
                    records[t].layers[l].e.clone()
                };
                loss += step_w * w * e.mean().as_f64();
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("sequence loss".into()));
        }
        if !want_grad {
            return Ok((loss, None));
        }
        let grads = self.backward(&records, targets, step_w)?;
        Ok((loss, Some(grads)))
    }

    fn backward(&self, records: &[StepRecord<T>], targets: &[Tensor<T>], step_w: f64) -> Result<Vec<Tensor<T>>> {
        let cfg = &self.config;
        let mode = cfg.error_mode;
        let n_layers = cfg.layers();
        let p = &self.params;
        let mut grads: Vec<Tensor<T>> = p.iter().map(|t| Tensor::zeros(t.shape())).collect();

        let zero_state = PredNetState::<T>::zeros(cfg);
        let mut carry_e = zero_state.e.clone();
        let mut carry_r = zero_state.r.clone();
        let mut carry_c = zero_state.c;

        for t in (0..records.len()).rev() {
            let rec = &records[t];
            let scored = t >= 1;
            let mut d_e = std::mem::replace(&mut carry_e, zero_state.e.clone());
            let mut d_r = std::mem::replace(&mut carry_r, zero_state.r.clone());

            if scored {
                for l in 1..n_layers {
                    let w = cfg.layer_weights[l];
                    if w != 0.0 {
                        let g = T::of(step_w * w / d_e[l].len() as f64);
                        d_e[l].data_mut().iter_mut().for_each(|v| *v += g);
                    }
                }
            }

            // bottom-up pass, reversed
            for l in (0..n_layers).rev() {
                let lr = &rec.layers[l];
                let s = self.slots[l];
                let (d_a, mut d_ahat) = split_error_backward(&lr.a, &lr.ahat, &d_e[l], mode);
                if l == 0 && scored && cfg.layer_weights[0] != 0.0 {
                    let target = if rec.fed_back { &targets[t] } else { &lr.a };
                    let g = T::of(step_w * cfg.layer_weights[0] / (2 * lr.ahat.len()) as f64);
                    let ones = Tensor::full(&[2 * lr.ahat.shape()[0], lr.ahat.shape()[1], lr.ahat.shape()[2]], g);
                    let (_, extra) = split_error_backward(target, &lr.ahat, &ones, mode);
                    d_ahat.add_assign(&extra)?;
                }
                let d_pre = {
                    let data = lr
                        .ahat_pre
                        .data()
                        .iter()
                        .zip(d_ahat.data())
                        .map(|(&z, &g)| {
                            let live = z > T::zero() && (l > 0 || z < T::one());
                            if live {
                                g
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    Tensor::from_parts(lr.ahat_pre.shape().to_vec(), data)
                };
                let cg = conv2d_backward(&lr.r, &p[s.ahat_w], &d_pre, true)?;
                d_r[l].add_assign(cg.input.as_ref().expect("input grad requested"))?;
                grads[s.ahat_w].add_assign(&cg.kernels)?;
                grads[s.ahat_b].add_assign(&cg.bias)?;

                if let (Some((w, b)), Some((pre, argmax))) = (s.a, &lr.a_pre) {
                    let d_pooled = maxpool2_backward(&d_a, argmax, pre.shape())?;
                    let d_pre = relu_backward(pre, &d_pooled)?;
                    let below = &rec.layers[l - 1].e;
                    let cg = conv2d_backward(below, &p[w], &d_pre, true)?;
                    d_e[l - 1].add_assign(cg.input.as_ref().expect("input grad requested"))?;
                    grads[w].add_assign(&cg.kernels)?;
                    grads[b].add_assign(&cg.bias)?;
                }
            }

            // top-down pass, reversed
            for l in 0..n_layers {
                let lr = &rec.layers[l];
                let s = self.slots[l];
                let ch = cfg.channels[l];
                let d_o = mul(&d_r[l], &lr.tanh_c);
                let mut d_c = std::mem::replace(&mut carry_c[l], Tensor::zeros(lr.c.shape()));
                let d_tanh = mul(&d_r[l], &lr.gate_o);
                d_c.add_assign(&tanh_backward(&lr.tanh_c, &d_tanh)?)?;
                let d_f = mul(&d_c, &lr.c_prev);
                let d_i = mul(&d_c, &lr.gate_g);
                let d_g = mul(&d_c, &lr.gate_i);
                carry_c[l] = mul(&d_c, &lr.gate_f);

                let dz = Tensor::concat_channels(&[
                    &sigmoid_backward(&lr.gate_i, &d_i)?,
                    &sigmoid_backward(&lr.gate_f, &d_f)?,
                    &sigmoid_backward(&lr.gate_o, &d_o)?,
                    &tanh_backward(&lr.gate_g, &d_g)?,
                ])?;
                let cg = conv2d_backward(&lr.lstm_in, &p[s.lstm_w], &dz, true)?;
                grads[s.lstm_w].add_assign(&cg.kernels)?;
                grads[s.lstm_b].add_assign(&cg.bias)?;
                let d_in = cg.input.expect("input grad requested");
                let mut sizes = vec![2 * ch, ch];
                if l + 1 < n_layers {
                    sizes.push(cfg.channels[l + 1]);
                }
                let mut parts = d_in.split_channels(&sizes)?.into_iter();
                carry_e[l] = parts.next().expect("E part");
                carry_r[l] = parts.next().expect("R part");
                if let Some(d_up) = parts.next() {
                    d_r[l + 1].add_assign(&upsample2_backward(&d_up)?)?;
                }
            }
        }
        for (g, name) in grads.iter().zip(&self.names) {
            g.check_finite(name)?;
        }
        Ok(grads)
    }
}
