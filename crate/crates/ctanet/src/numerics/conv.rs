//! 2-D cross-correlation (no kernel flip) with stride and zero padding.

use crate::error::{Error, Result};

use super::tape::{BackwardFn, GradSink, Tape};
use super::tensor::Tensor;

/// Output side length for one spatial dimension.
fn out_side(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

impl Tape {
    /// Cross-correlates `input [C_in, H, W]` with `kernels [C_out, C_in, k, k]`.
    ///
    /// Output is `[C_out, H', W']` with `H' = floor((H + 2p - k) / stride) + 1`.
    /// Out-of-bounds taps read zero (zero padding).
    pub fn conv2d(
        &self,
        input: &Tensor,
        kernels: &Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        if stride == 0 {
            return Err(Error::Config("conv2d: stride must be at least 1".into()));
        }
        if input.rank() != 3 || kernels.rank() != 4 {
            return Err(Error::Dimension(format!(
                "conv2d: expected input [C_in,H,W] and kernels [C_out,C_in,k,k], got {:?} and {:?}",
                input.shape(),
                kernels.shape()
            )));
        }
        let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (c_out, kc_in, kh, kw) = (
            kernels.shape()[0],
            kernels.shape()[1],
            kernels.shape()[2],
            kernels.shape()[3],
        );
        if kc_in != c_in {
            return Err(Error::Dimension(format!(
                "conv2d: kernel input channels {kc_in} do not match input channels {c_in} \
                 (input {:?}, kernels {:?})",
                input.shape(),
                kernels.shape()
            )));
        }
        if kh != kw {
            return Err(Error::Dimension(format!(
                "conv2d: kernels must be square, got {:?}",
                kernels.shape()
            )));
        }
        let k = kh;
        if k == 0 || k > h + 2 * padding || k > w + 2 * padding {
            return Err(Error::Dimension(format!(
                "conv2d: kernel side {k} exceeds padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        let h_out = out_side(h, k, stride, padding);
        let w_out = out_side(w, k, stride, padding);

        let mut out = vec![0.0; c_out * h_out * w_out];
        forward(
            input.data(),
            kernels.data(),
            &mut out,
            Geom {
                c_in,
                h,
                w,
                c_out,
                k,
                stride,
                padding,
                h_out,
                w_out,
            },
        );

        let geom = Geom {
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            padding,
            h_out,
            w_out,
        };
        let backward = if input.requires_grad() || kernels.requires_grad() {
            let (input, kernels) = (input.clone(), kernels.clone());
            Some(Box::new(move |g: &[f64], sink: GradSink| {
                let mut d_input = input
                    .requires_grad()
                    .then(|| vec![0.0; input.len()]);
                let mut d_kernels = kernels
                    .requires_grad()
                    .then(|| vec![0.0; kernels.len()]);
                backward_pass(
                    input.data(),
                    kernels.data(),
                    g,
                    d_input.as_deref_mut(),
                    d_kernels.as_deref_mut(),
                    geom,
                );
                if let Some(d) = d_input {
                    sink(&input, &d);
                }
                if let Some(d) = d_kernels {
                    sink(&kernels, &d);
                }
            }) as BackwardFn)
        } else {
            None
        };
        self.emit_conv(out, &[c_out, h_out, w_out], backward)
    }

    fn emit_conv(
        &self,
        data: Vec<f64>,
        shape: &[usize],
        backward: Option<BackwardFn>,
    ) -> Result<Tensor> {
        let out = Tensor::new(data, shape, backward.is_some())?;
        match backward {
            Some(b) => self.push("conv2d", out, b),
            None => {
                if !out.all_finite() {
                    return Err(Error::Numeric(
                        "non-finite value in output of op `conv2d`".into(),
                    ));
                }
                Ok(out)
            }
        }
    }
}

#[derive(Clone, Copy)]
struct Geom {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
    h_out: usize,
    w_out: usize,
}

/// Valid output range along one dimension for kernel offset `kq`: the output
/// indices whose corresponding input tap lands inside [0, size).
fn valid_out_range(kq: usize, size: usize, stride: usize, pad: usize, out: usize) -> (usize, usize) {
    let lo = if pad > kq {
        (pad - kq + stride - 1) / stride
    } else {
        0
    };
    if size + pad <= kq {
        return (1, 0); // empty range
    }
    let hi_raw = (size - 1 + pad - kq) / stride;
    (lo, hi_raw.min(out.saturating_sub(1)))
}

fn forward(input: &[f64], kernels: &[f64], out: &mut [f64], g: Geom) {
    let in_plane = g.h * g.w;
    let out_plane = g.h_out * g.w_out;
    for oc in 0..g.c_out {
        let out_ch = &mut out[oc * out_plane..(oc + 1) * out_plane];
        for ic in 0..g.c_in {
            let in_ch = &input[ic * in_plane..(ic + 1) * in_plane];
            let kbase = ((oc * g.c_in) + ic) * g.k * g.k;
            for ky in 0..g.k {
                let (oy_lo, oy_hi) = valid_out_range(ky, g.h, g.stride, g.padding, g.h_out);
                if oy_lo > oy_hi {
                    continue;
                }
                for kx in 0..g.k {
                    let (ox_lo, ox_hi) = valid_out_range(kx, g.w, g.stride, g.padding, g.w_out);
                    if ox_lo > ox_hi {
                        continue;
                    }
                    let wgt = kernels[kbase + ky * g.k + kx];
                    if wgt == 0.0 {
                        continue;
                    }
                    for oy in oy_lo..=oy_hi {
                        let iy = oy * g.stride + ky - g.padding;
                        let irow = iy * g.w;
                        let orow = oy * g.w_out;
                        for ox in ox_lo..=ox_hi {
                            let ix = ox * g.stride + kx - g.padding;
                            out_ch[orow + ox] += wgt * in_ch[irow + ix];
                        }
                    }
                }
            }
        }
    }
}

fn backward_pass(
    input: &[f64],
    kernels: &[f64],
    grad_out: &[f64],
    mut d_input: Option<&mut [f64]>,
    mut d_kernels: Option<&mut [f64]>,
    g: Geom,
) {
    let in_plane = g.h * g.w;
    let out_plane = g.h_out * g.w_out;
    for oc in 0..g.c_out {
        let g_ch = &grad_out[oc * out_plane..(oc + 1) * out_plane];
        for ic in 0..g.c_in {
            let in_ch = &input[ic * in_plane..(ic + 1) * in_plane];
            let kbase = ((oc * g.c_in) + ic) * g.k * g.k;
            for ky in 0..g.k {
                let (oy_lo, oy_hi) = valid_out_range(ky, g.h, g.stride, g.padding, g.h_out);
                if oy_lo > oy_hi {
                    continue;
                }
                for kx in 0..g.k {
                    let (ox_lo, ox_hi) = valid_out_range(kx, g.w, g.stride, g.padding, g.w_out);
                    if ox_lo > ox_hi {
                        continue;
                    }
                    let wgt = kernels[kbase + ky * g.k + kx];
                    let mut dw = 0.0;
                    for oy in oy_lo..=oy_hi {
                        let iy = oy * g.stride + ky - g.padding;
                        let irow = iy * g.w;
                        let orow = oy * g.w_out;
                        for ox in ox_lo..=ox_hi {
                            let ix = ox * g.stride + kx - g.padding;
                            let gv = g_ch[orow + ox];
                            dw += gv * in_ch[irow + ix];
                            if let Some(di) = d_input.as_deref_mut() {
                                di[ic * in_plane + irow + ix] += gv * wgt;
                            }
                        }
                    }
                    if let Some(dk) = d_kernels.as_deref_mut() {
                        dk[kbase + ky * g.k + kx] += dw;
                    }
                }
            }
        }
    }
}
