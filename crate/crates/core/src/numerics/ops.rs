//! Differentiable building blocks of the predictive-coding stack.
//!
//! Every forward op has a matching `*_backward` that maps the gradient of
//! the output back onto the inputs. Convolution is cross-correlation with
//! zero same-padding, so spatial extents are preserved.

use crate::error::{Error, Result};
use crate::numerics::tensor::{Scalar, Tensor};

/// Gradients of a convolution with respect to its three operands.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    /// `None` when the caller did not ask for the input gradient.
    pub input: Option<Tensor<T>>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Copy)]
struct ConvDims {
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
}

fn conv_dims<T: Scalar>(input: &Tensor<T>, kernels: &Tensor<T>) -> Result<ConvDims> {
    let (cin, h, w) = input.dims3()?;
    let (cout, kcin, kh, kw) = match *kernels.shape() {
        [a, b, c, d] => (a, b, c, d),
        _ => {
            return Err(Error::shape(format!(
                "kernels must be Cout×Cin×k×k, got {:?}",
                kernels.shape()
            )))
        }
    };
    if kh != kw || kh % 2 == 0 {
        return Err(Error::shape(format!(
            "kernel must be square with odd size, got {kh}×{kw}"
        )));
    }
    if kcin != cin {
        return Err(Error::shape(format!(
            "input has {cin} channels but kernels expect {kcin}"
        )));
    }
    Ok(ConvDims {
        cin,
        cout,
        h,
        w,
        k: kh,
    })
}

/// Valid `[lo, hi)` output range along one axis for a tap offset `d`.
#[inline]
fn tap_range(len: usize, d: isize) -> (usize, usize) {
    let lo = if d < 0 { (-d) as usize } else { 0 };
    let hi = if d > 0 {
        len.saturating_sub(d as usize)
    } else {
        len
    };
    (lo, hi.max(lo))
}

/// Unfolds `input` into a `(C·k·k) × (H·W)` matrix of zero-padded patches.
fn im2col<T: Scalar>(x: &[T], d: &ConvDims) -> Vec<T> {
    let ConvDims { cin, h, w, k, .. } = *d;
    let hw = h * w;
    let p = (k / 2) as isize;
    let mut cols = vec![T::zero(); cin * k * k * hw];
    for ci in 0..cin {
        let in_c = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - p;
            let (y_lo, y_hi) = tap_range(h, dy);
            for kx in 0..k {
                let dx = kx as isize - p;
                let (x_lo, x_hi) = tap_range(w, dx);
                let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                for y in y_lo..y_hi {
                    let src = ((y as isize + dy) as usize) * w;
                    let lo = (src as isize + x_lo as isize + dx) as usize;
                    row[y * w + x_lo..y * w + x_hi].copy_from_slice(&in_c[lo..lo + (x_hi - x_lo)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
fn col2im<T: Scalar>(cols: &[T], d: &ConvDims) -> Vec<T> {
    let ConvDims { cin, h, w, k, .. } = *d;
    let hw = h * w;
    let p = (k / 2) as isize;
    let mut x = vec![T::zero(); cin * hw];
    for ci in 0..cin {
        let in_c = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - p;
            let (y_lo, y_hi) = tap_range(h, dy);
            for kx in 0..k {
                let dx = kx as isize - p;
                let (x_lo, x_hi) = tap_range(w, dx);
                let row = &cols[((ci * k + ky) * k + kx) * hw..][..hw];
                for y in y_lo..y_hi {
                    let src = ((y as isize + dy) as usize) * w;
                    let lo = (src as isize + x_lo as isize + dx) as usize;
                    for (o, &g) in in_c[lo..lo + (x_hi - x_lo)]
                        .iter_mut()
                        .zip(&row[y * w + x_lo..y * w + x_hi])
                    {
                        *o += g;
                    }
                }
            }
        }
    }
    x
}

/// Same-padded 2-D cross-correlation: `C_in×H×W ⊛ C_out×C_in×k×k + bias → C_out×H×W`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let d = conv_dims(input, kernels)?;
    if bias.shape() != [d.cout] {
        return Err(Error::shape(format!(
            "bias must have {} entries, got {:?}",
            d.cout,
            bias.shape()
        )));
    }
    let hw = d.h * d.w;
    let kk = d.cin * d.k * d.k;
    let cols = im2col(input.data(), &d);
    let mut out = vec![T::zero(); d.cout * hw];
    for (co, &b) in bias.data().iter().enumerate() {
        out[co * hw..(co + 1) * hw].iter_mut().for_each(|v| *v = b);
    }
    // out (cout×hw) += K (cout×kk) · cols (kk×hw)
    T::gemm(
        d.cout,
        kk,
        hw,
        kernels.data(),
        (kk, 1),
        &cols,
        (hw, 1),
        T::one(),
        &mut out,
        hw,
    );
    Ok(Tensor::from_parts(vec![d.cout, d.h, d.w], out))
}

/// Adjoint of [`conv2d`] given the upstream gradient `grad_out` (C_out×H×W).
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_out: &Tensor<T>,
    want_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let d = conv_dims(input, kernels)?;
    let (cout, h, w) = (d.cout, d.h, d.w);
    if grad_out.shape() != [cout, h, w] {
        return Err(Error::shape(format!(
            "grad_out {:?} does not match conv output {:?}",
            grad_out.shape(),
            [cout, h, w]
        )));
    }
    let hw = h * w;
    let kk = d.cin * d.k * d.k;
    let g = grad_out.data();
    let cols = im2col(input.data(), &d);
    let gb: Vec<T> = (0..cout).map(|co| g[co * hw..(co + 1) * hw].iter().copied().sum()).collect();

    // dK (cout×kk) = G (cout×hw) · colsᵀ (hw×kk)
    let mut gk = vec![T::zero(); cout * kk];
    T::gemm(cout, hw, kk, g, (hw, 1), &cols, (1, hw), T::zero(), &mut gk, kk);

    let gx = want_input_grad.then(|| {
        // dcols (kk×hw) = Kᵀ (kk×cout) · G (cout×hw)
        let mut dcols = vec![T::zero(); kk * hw];
        T::gemm(kk, cout, hw, kernels.data(), (1, kk), g, (hw, 1), T::zero(), &mut dcols, hw);
        Tensor::from_parts(vec![d.cin, h, w], col2im(&dcols, &d))
    });
    Ok(ConvGrads {
        input: gx,
        kernels: Tensor::from_parts(kernels.shape().to_vec(), gk),
        bias: Tensor::from_parts(vec![cout], gb),
    })
}

/// Output of [`maxpool2`]: pooled values plus the flat input index of each maximum.
#[derive(Debug, Clone)]
pub struct Pooled<T> {
    pub output: Tensor<T>,
    pub argmax: Vec<u32>,
}

/// Non-overlapping 2×2 max pooling. Ties resolve to the first element in row-major order.
pub fn maxpool2<T: Scalar>(input: &Tensor<T>) -> Result<Pooled<T>> {
    let (c, h, w) = input.dims3()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "maxpool2 needs even spatial extent, got {h}×{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let i0 = base + 2 * oy * w + 2 * ox;
                let mut best = i0;
                for idx in [i0 + 1, i0 + w, i0 + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best as u32);
            }
        }
    }
    Ok(Pooled {
        output: Tensor::from_parts(vec![c, oh, ow], out),
        argmax,
    })
}

pub fn maxpool2_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    argmax: &[u32],
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return Err(Error::shape("maxpool2_backward: argmax length mismatch"));
    }
    let mut gx = Tensor::zeros(input_shape);
    let d = gx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        d[idx as usize] += g;
    }
    Ok(gx)
}

/// Nearest-neighbour 2× upsampling: every value fills a 2×2 block.
pub fn upsample2<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = input.dims3()?;
    let (oh, ow) = (2 * h, 2 * w);
    let x = input.data();
    let mut out = vec![T::zero(); c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            let src = &x[ch * h * w + (y / 2) * w..ch * h * w + (y / 2 + 1) * w];
            let dst = &mut out[ch * oh * ow + y * ow..ch * oh * ow + (y + 1) * ow];
            for (xo, v) in dst.iter_mut().enumerate() {
                *v = src[xo / 2];
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, oh, ow], out))
}

/// Adjoint of [`upsample2`]: sums each 2×2 block.
pub fn upsample2_backward<T: Scalar>(grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, oh, ow) = grad_out.dims3()?;
    if oh % 2 != 0 || ow % 2 != 0 {
        return Err(Error::shape("upsample2_backward needs even extents"));
    }
    let (h, w) = (oh / 2, ow / 2);
    let g = grad_out.data();
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                out[ch * h * w + (y / 2) * w + x / 2] += g[ch * oh * ow + y * ow + x];
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, h, w], out))
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Gradient of [`relu`] given its *input* `x`. The derivative at 0 is taken as 0.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip_map(grad, |v, g| if v > T::zero() { g } else { T::zero() })
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

#[inline]
pub(crate) fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// Gradient of [`sigmoid`] given its *output* `y`.
pub fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    y.zip_map(grad, |s, g| g * s * (T::one() - s))
}

pub fn tanh<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

/// Gradient of [`tanh`] given its *output* `y`.
pub fn tanh_backward<T: Scalar>(y: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    y.zip_map(grad, |t, g| g * (T::one() - t * t))
}
