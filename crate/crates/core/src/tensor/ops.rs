//! Layer primitives with exact analytic backward passes.
//!
//! Forward functions return whatever the matching backward needs (pooling
//! argmax, normalization denominators); callers keep those around in their
//! own caches.

use super::Tensor;
use crate::error::{Error, Result};

/// Denominator floor for [`l2_normalize`].
pub const EPS_NORM: f64 = 1e-8;

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor {
        shape: x.shape().to_vec(),
        data,
    }
}

/// Subgradient 0 at the kink.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    x.expect_same_shape("relu_backward", dy)?;
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Ok(Tensor {
        shape: x.shape().to_vec(),
        data,
    })
}

fn conv_dims(x: &Tensor, kernels: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
    if x.shape().len() != 3 {
        return Err(Error::ShapeMismatch {
            op: "conv2d input (C,H,W)",
            expected: vec![0, 0, 0],
            got: x.shape().to_vec(),
        });
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let ks = kernels.shape();
    if ks.len() != 4 || ks[1] != c || ks[2] != ks[3] {
        return Err(Error::ShapeMismatch {
            op: "conv2d kernels (K,C,R,R)",
            expected: vec![ks.first().copied().unwrap_or(0), c, 0, 0],
            got: ks.to_vec(),
        });
    }
    let (k, r) = (ks[0], ks[2]);
    if r % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "conv2d kernel size must be odd, got {r}"
        )));
    }
    Ok((c, h, w, k, r))
}

/// Stride-1 cross-correlation with "same" zero padding plus a per-kernel bias.
///
/// `x` is `C x H x W`, `kernels` is `K x C x R x R` with odd `R`, `bias` is `K`.
/// Output is `K x H x W`.
pub fn conv2d(x: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (c, h, w, k, r) = conv_dims(x, kernels)?;
    bias.expect_shape("conv2d bias", &[k])?;
    let pad = r / 2;
    let xd = x.data();
    let kd = kernels.data();
    let mut out = vec![0.0; k * h * w];
    for ko in 0..k {
        let plane = &mut out[ko * h * w..(ko + 1) * h * w];
        plane.iter_mut().for_each(|v| *v = bias.data()[ko]);
        for ci in 0..c {
            let xin = &xd[ci * h * w..(ci + 1) * h * w];
            for ky in 0..r {
                for kx in 0..r {
                    let wgt = kd[((ko * c + ci) * r + ky) * r + kx];
                    // output column range whose input column x + kx - pad is in bounds
                    let x_lo = pad.saturating_sub(kx);
                    let x_hi = (w + pad).saturating_sub(kx).min(w);
                    if x_lo >= x_hi {
                        continue;
                    }
                    for oy in 0..h {
                        let iy = oy + ky;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        let iy = iy - pad;
                        let src = &xin[iy * w + x_lo + kx - pad..iy * w + x_hi + kx - pad];
                        let dst = &mut plane[oy * w + x_lo..oy * w + x_hi];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wgt * s;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![k, h, w], out)
}

#[derive(Debug, Clone)]
pub struct Conv2dGrads {
    /// `None` when the caller asked to skip the input gradient.
    pub dx: Option<Tensor>,
    pub dkernels: Tensor,
    pub dbias: Tensor,
}

pub fn conv2d_backward(
    x: &Tensor,
    kernels: &Tensor,
    dy: &Tensor,
    want_dx: bool,
) -> Result<Conv2dGrads> {
    let (c, h, w, k, r) = conv_dims(x, kernels)?;
    dy.expect_shape("conv2d_backward dy", &[k, h, w])?;
    let pad = r / 2;
    let xd = x.data();
    let kd = kernels.data();
    let dyd = dy.data();
    let mut dk = vec![0.0; kernels.len()];
    let mut db = vec![0.0; k];
    let mut dx = if want_dx { vec![0.0; x.len()] } else { Vec::new() };
    for ko in 0..k {
        let g = &dyd[ko * h * w..(ko + 1) * h * w];
        db[ko] = g.iter().sum();
        for ci in 0..c {
            let xin = &xd[ci * h * w..(ci + 1) * h * w];
            for ky in 0..r {
                for kx in 0..r {
                    let widx = ((ko * c + ci) * r + ky) * r + kx;
                    let wgt = kd[widx];
                    let x_lo = pad.saturating_sub(kx);
                    let x_hi = (w + pad).saturating_sub(kx).min(w);
                    if x_lo >= x_hi {
                        continue;
                    }
                    let mut acc = 0.0;
                    for oy in 0..h {
                        let iy = oy + ky;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        let iy = iy - pad;
                        let lo = iy * w + x_lo + kx - pad;
                        let hi = iy * w + x_hi + kx - pad;
                        let gs = &g[oy * w + x_lo..oy * w + x_hi];
                        acc += xin[lo..hi].iter().zip(gs).map(|(a, b)| a * b).sum::<f64>();
                        if want_dx {
                            let dst = &mut dx[ci * h * w + lo..ci * h * w + hi];
                            for (d, gv) in dst.iter_mut().zip(gs) {
                                *d += wgt * gv;
                            }
                        }
                    }
                    dk[widx] += acc;
                }
            }
        }
    }
    Ok(Conv2dGrads {
        dx: if want_dx {
            Some(Tensor::new(x.shape().to_vec(), dx)?)
        } else {
            None
        },
        dkernels: Tensor::new(kernels.shape().to_vec(), dk)?,
        dbias: Tensor::new(vec![k], db)?,
    })
}

/// Output of [`maxpool2d`]; `argmax` holds the flat input index chosen for
/// each output element.
#[derive(Debug, Clone)]
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

/// Non-overlapping 2x2 max pooling over a `C x H x W` tensor. Ties go to the
/// first element of the window in row-major order.
pub fn maxpool2d(x: &Tensor) -> Result<Pooled> {
    let s = x.shape();
    if s.len() != 3 || !s[1].is_multiple_of(2) || !s[2].is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "maxpool2d needs C x H x W with even H and W, got {s:?}"
        )));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = ci * h * w + 2 * oy * w + 2 * ox;
                let mut best = base;
                for idx in [base + 1, base + w, base + w + 1] {
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    Ok(Pooled {
        output: Tensor::new(vec![c, oh, ow], out)?,
        argmax,
    })
}

pub fn maxpool2d_backward(input_shape: &[usize], pooled: &Pooled, dy: &Tensor) -> Result<Tensor> {
    pooled.output.expect_same_shape("maxpool2d_backward", dy)?;
    let mut dx = Tensor::zeros(input_shape);
    for (&src, &g) in pooled.argmax.iter().zip(dy.data()) {
        dx.data[src] += g;
    }
    Ok(dx)
}

/// `W x + b` for `x` of length n, `W` of shape `m x n`, `b` of length m.
pub fn dense(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, n) = dense_dims(x, weight)?;
    bias.expect_shape("dense bias", &[m])?;
    let wd = weight.data();
    let xd = x.data();
    let out = (0..m)
        .map(|i| {
            let row = &wd[i * n..(i + 1) * n];
            bias.data()[i] + row.iter().zip(xd).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    Tensor::new(vec![m], out)
}

fn dense_dims(x: &Tensor, weight: &Tensor) -> Result<(usize, usize)> {
    let ws = weight.shape();
    if ws.len() != 2 || ws[1] != x.len() {
        return Err(Error::ShapeMismatch {
            op: "dense weight (m,n)",
            expected: vec![ws.first().copied().unwrap_or(0), x.len()],
            got: ws.to_vec(),
        });
    }
    Ok((ws[0], ws[1]))
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub dx: Option<Tensor>,
    pub dweight: Tensor,
    pub dbias: Tensor,
}

/// `x` is taken as a flat vector whatever its shape; `dx` comes back in `x`'s shape.
pub fn dense_backward(x: &Tensor, weight: &Tensor, dy: &Tensor, want_dx: bool) -> Result<DenseGrads> {
    let (m, n) = dense_dims(x, weight)?;
    dy.expect_shape("dense_backward dy", &[m])?;
    let xd = x.data();
    let wd = weight.data();
    let mut dw = vec![0.0; m * n];
    for (i, &g) in dy.data().iter().enumerate() {
        for (d, xv) in dw[i * n..(i + 1) * n].iter_mut().zip(xd) {
            *d = g * xv;
        }
    }
    let dx = if want_dx {
        let mut dx = vec![0.0; n];
        for (i, &g) in dy.data().iter().enumerate() {
            for (d, wv) in dx.iter_mut().zip(&wd[i * n..(i + 1) * n]) {
                *d += g * wv;
            }
        }
        Some(Tensor::new(x.shape().to_vec(), dx)?)
    } else {
        None
    };
    Ok(DenseGrads {
        dx,
        dweight: Tensor::new(vec![m, n], dw)?,
        dbias: dy.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Norms below `eps` are an error.
    Strict,
    /// Norms below `eps` are divided by `eps` instead.
    Clamped,
}

/// Result of [`l2_normalize`]. `denom` is the value actually divided by.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub output: Tensor,
    pub norm: f64,
    pub denom: f64,
}

impl Normalized {
    pub fn clamped(&self) -> bool {
        self.denom > self.norm
    }
}

pub fn l2_normalize(v: &Tensor, mode: NormMode, eps: f64) -> Result<Normalized> {
    let norm = v.norm();
    if norm < eps {
        if mode == NormMode::Strict {
            return Err(Error::DegeneratePair { norm, eps });
        }
        return Ok(Normalized {
            output: v.scale(1.0 / eps),
            norm,
            denom: eps,
        });
    }
    Ok(Normalized {
        output: v.scale(1.0 / norm),
        norm,
        denom: norm,
    })
}

/// Exact Jacobian-vector product: `(I - v̂ v̂ᵀ) dy / ‖v‖`, or `dy / eps` when
/// the denominator was clamped.
pub fn l2_normalize_backward(n: &Normalized, dy: &Tensor) -> Result<Tensor> {
    n.output.expect_same_shape("l2_normalize_backward", dy)?;
    if n.clamped() {
        return Ok(dy.scale(1.0 / n.denom));
    }
    let proj = n.output.dot(dy);
    let inv = 1.0 / n.denom;
    let data = dy
        .data()
        .iter()
        .zip(n.output.data())
        .map(|(g, u)| (g - u * proj) * inv)
        .collect();
    Tensor::new(dy.shape().to_vec(), data)
}
