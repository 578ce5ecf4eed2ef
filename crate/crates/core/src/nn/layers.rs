//! Forward and backward kernels for the individual layer types.
//!
//! Convolution is im2col plus GEMM; the column matrix is rebuilt in the
//! backward pass instead of cached, keeping activation caches small.

use super::gemm::gemm;
use crate::tensor::{Shape4, Tensor, TensorError};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvSpec {
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub(crate) fn output_shape(&self, input: Shape4) -> Option<Shape4> {
        if self.stride == 0 || self.kernel_h == 0 || self.kernel_w == 0 || self.out_channels == 0 {
            return None;
        }
        let span_h = (input.height + 2 * self.pad).checked_sub(self.kernel_h)?;
        let span_w = (input.width + 2 * self.pad).checked_sub(self.kernel_w)?;
        Some(Shape4::new(
            input.batch,
            self.out_channels,
            span_h / self.stride + 1,
            span_w / self.stride + 1,
        ))
    }

    fn patch_len(&self, in_channels: usize) -> usize {
        in_channels * self.kernel_h * self.kernel_w
    }
}

/// Unfolds image `b` of `x` into a K x P column matrix (K = C*kh*kw rows,
/// P = ho*wo columns, row-major); out-of-bounds taps read as zero.
fn im2col(x: &Tensor, b: usize, spec: &ConvSpec, ho: usize, wo: usize, cols: &mut [f64]) {
    let s = x.shape();
    let p = ho * wo;
    debug_assert_eq!(cols.len(), spec.patch_len(s.channels) * p);
    for c in 0..s.channels {
        let plane = x.plane(b, c);
        for ki in 0..spec.kernel_h {
            for kj in 0..spec.kernel_w {
                let row = (c * spec.kernel_h + ki) * spec.kernel_w + kj;
                let out_row = &mut cols[row * p..(row + 1) * p];
                for oi in 0..ho {
                    let ii = (oi * spec.stride + ki) as isize - spec.pad as isize;
                    for oj in 0..wo {
                        let jj = (oj * spec.stride + kj) as isize - spec.pad as isize;
                        out_row[oi * wo + oj] = if ii >= 0
                            && ii < s.height as isize
                            && jj >= 0
                            && jj < s.width as isize
                        {
                            plane[ii as usize * s.width + jj as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col`: scatter-adds a K x P column-gradient matrix back
/// onto image `b` of `gx`.
fn col2im(gx: &mut Tensor, b: usize, spec: &ConvSpec, ho: usize, wo: usize, gcols: &[f64]) {
    let s = gx.shape();
    let p = ho * wo;
    for c in 0..s.channels {
        let plane = gx.plane_mut(b, c);
        for ki in 0..spec.kernel_h {
            for kj in 0..spec.kernel_w {
                let row = (c * spec.kernel_h + ki) * spec.kernel_w + kj;
                let in_row = &gcols[row * p..(row + 1) * p];
                for oi in 0..ho {
                    let ii = (oi * spec.stride + ki) as isize - spec.pad as isize;
                    if ii < 0 || ii >= s.height as isize {
                        continue;
                    }
                    for oj in 0..wo {
                        let jj = (oj * spec.stride + kj) as isize - spec.pad as isize;
                        if jj >= 0 && jj < s.width as isize {
                            plane[ii as usize * s.width + jj as usize] += in_row[oi * wo + oj];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation with bias, weight shape (O, C, kh, kw), bias (1, O, 1, 1).
pub(crate) fn conv_forward(
    x: &Tensor,
    w: &Tensor,
    bias: &Tensor,
    spec: &ConvSpec,
) -> Result<Tensor, TensorError> {
    let sx = x.shape();
    let out_shape = spec
        .output_shape(sx)
        .expect("output shape validated by the model chain");
    let k = spec.patch_len(sx.channels);
    let p = out_shape.plane();
    let o = spec.out_channels;

    let mut cols = vec![0.0; k * p];
    let mut out = vec![0.0; out_shape.volume()];
    for b in 0..sx.batch {
        im2col(x, b, spec, out_shape.height, out_shape.width, &mut cols);
        gemm(
            false,
            false,
            o,
            k,
            p,
            1.0,
            w.data(),
            &cols,
            0.0,
            &mut out[b * o * p..(b + 1) * o * p],
        );
        for oc in 0..o {
            let bv = bias.data()[oc];
            for v in &mut out[(b * o + oc) * p..(b * o + oc + 1) * p] {
                *v += bv;
            }
        }
    }
    Tensor::from_vec(out_shape, out)
}

/// Gradients w.r.t. input, weight, and bias.
pub(crate) fn conv_backward(
    x: &Tensor,
    w: &Tensor,
    spec: &ConvSpec,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), TensorError> {
    let sx = x.shape();
    let so = grad_out.shape();
    let k = spec.patch_len(sx.channels);
    let p = so.plane();
    let o = spec.out_channels;

    let mut gx = Tensor::zeros(sx);
    let mut gw = vec![0.0; w.shape().volume()];
    let mut gb = vec![0.0; o];
    let mut cols = vec![0.0; k * p];
    let mut gcols = vec![0.0; k * p];
    for b in 0..sx.batch {
        im2col(x, b, spec, so.height, so.width, &mut cols);
        let g_plane = &grad_out.data()[b * o * p..(b + 1) * o * p];
        gemm(false, true, o, p, k, 1.0, g_plane, &cols, 1.0, &mut gw);
        gemm(true, false, k, o, p, 1.0, w.data(), g_plane, 0.0, &mut gcols);
        col2im(&mut gx, b, spec, so.height, so.width, &gcols);
        for oc in 0..o {
            gb[oc] += g_plane[oc * p..(oc + 1) * p].iter().sum::<f64>();
        }
    }
    let gw = Tensor::from_vec(w.shape(), gw)?;
    let gb = Tensor::from_vec(Shape4::new(1, o, 1, 1), gb)?;
    Ok((gx, gw, gb))
}

pub(crate) fn pool_output_shape(input: Shape4, k: usize, stride: usize) -> Option<Shape4> {
    if k == 0 || stride == 0 || input.height < k || input.width < k {
        return None;
    }
    Some(Shape4::new(
        input.batch,
        input.channels,
        (input.height - k) / stride + 1,
        (input.width - k) / stride + 1,
    ))
}

/// Max pooling; `argmax` holds, per output element, the global flat index of
/// the winning input element (first row-major maximum on ties).
pub(crate) fn maxpool_forward(x: &Tensor, k: usize, stride: usize) -> (Tensor, Vec<u32>) {
    let s = x.shape();
    let out_shape = pool_output_shape(s, k, stride).expect("validated by the model chain");
    let mut out = vec![0.0; out_shape.volume()];
    let mut argmax = vec![0u32; out_shape.volume()];
    let mut cursor = 0;
    for b in 0..s.batch {
        for c in 0..s.channels {
            let plane = x.plane(b, c);
            let base = (b * s.channels + c) * s.plane();
            for oi in 0..out_shape.height {
                for oj in 0..out_shape.width {
                    let (mut best, mut best_idx) = (f64::NEG_INFINITY, 0);
                    for di in 0..k {
                        for dj in 0..k {
                            let idx = (oi * stride + di) * s.width + (oj * stride + dj);
                            if plane[idx] > best {
                                best = plane[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[cursor] = best;
                    argmax[cursor] = (base + best_idx) as u32;
                    cursor += 1;
                }
            }
        }
    }
    (
        Tensor::from_vec(out_shape, out).expect("max of finite inputs is finite"),
        argmax,
    )
}

pub(crate) fn maxpool_backward(x_shape: Shape4, argmax: &[u32], grad_out: &Tensor) -> Tensor {
    let mut gx = Tensor::zeros(x_shape);
    let data = gx.data_mut();
    for (g, &idx) in grad_out.data().iter().zip(argmax) {
        data[idx as usize] += g;
    }
    gx
}

pub(crate) fn relu_forward(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_vec(x.shape(), data).expect("relu of finite input is finite")
}

/// Gradient passes where the pre-activation was strictly positive.
pub(crate) fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("masked gradient is finite")
}

/// Input (B, C, H, W) flattened to (B, in); weight (out, in, 1, 1);
/// bias (1, out, 1, 1); output (B, out, 1, 1).
pub(crate) fn fc_forward(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor, TensorError> {
    let sx = x.shape();
    let (out, input) = (w.shape().batch, w.shape().channels);
    debug_assert_eq!(sx.channels * sx.plane(), input);
    let mut y = vec![0.0; sx.batch * out];
    gemm(
        false,
        true,
        sx.batch,
        input,
        out,
        1.0,
        x.data(),
        w.data(),
        0.0,
        &mut y,
    );
    for b in 0..sx.batch {
        for (o, bv) in bias.data().iter().enumerate() {
            y[b * out + o] += bv;
        }
    }
    Tensor::from_vec(Shape4::new(sx.batch, out, 1, 1), y)
}

pub(crate) fn fc_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), TensorError> {
    let sx = x.shape();
    let (out, input) = (w.shape().batch, w.shape().channels);
    let batch = sx.batch;

    let mut gx = vec![0.0; batch * input];
    gemm(false, false, batch, out, input, 1.0, grad_out.data(), w.data(), 0.0, &mut gx);

    let mut gw = vec![0.0; out * input];
    gemm(true, false, out, batch, input, 1.0, grad_out.data(), x.data(), 0.0, &mut gw);

    let mut gb = vec![0.0; out];
    for b in 0..batch {
        for o in 0..out {
            gb[o] += grad_out.data()[b * out + o];
        }
    }

    Ok((
        Tensor::from_vec(sx, gx)?,
        Tensor::from_vec(w.shape(), gw)?,
        Tensor::from_vec(Shape4::new(1, out, 1, 1), gb)?,
    ))
}
