//! Differentiable operations recorded on the tape.
//!
//! Every op validates shapes up front, computes its forward value, and, when
//! any input tracks gradients, registers a closure that maps the output
//! gradient to input gradient contributions. Accumulation order inside each
//! op is fixed, so results are bit-deterministic.

use std::str::FromStr;

use crate::error::{Error, Result};

use super::tape::{BackwardFn, GradSink, Tape};
use super::tensor::{same_shape, Tensor};

/// Pointwise nonlinearities accepted by [`Tape::pointwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Activation> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!(
                "unknown activation `{other}` (expected sigmoid, tanh, or relu)"
            ))),
        }
    }
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }
}

/// Reductions accepted by [`Tape::reduce`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    /// [C, H, W] -> [C]: mean over the spatial plane of each channel.
    GlobalAvgPool2d,
}

impl FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Reduction> {
        match s {
            "sum" => Ok(Reduction::Sum),
            "mean" => Ok(Reduction::Mean),
            "global_avg_pool_2d" => Ok(Reduction::GlobalAvgPool2d),
            other => Err(Error::Config(format!(
                "unknown reduction `{other}` (expected sum, mean, or global_avg_pool_2d)"
            ))),
        }
    }
}

/// Numerically stable logistic function.
pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    fn emit(
        &self,
        name: &'static str,
        data: Vec<f64>,
        shape: &[usize],
        backward: Option<BackwardFn>,
    ) -> Result<Tensor> {
        let out = Tensor::new(data, shape, backward.is_some())?;
        match backward {
            Some(b) => self.push(name, out, b),
            None => {
                if !out.all_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite value in output of op `{name}`"
                    )));
                }
                Ok(out)
            }
        }
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        same_shape("add", a, b)?;
        let data: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        let backward = if a.requires_grad() || b.requires_grad() {
            let (a, b) = (a.clone(), b.clone());
            Some(Box::new(move |g: &[f64], sink: GradSink| {
                if a.requires_grad() {
                    sink(&a, g);
                }
                if b.requires_grad() {
                    sink(&b, g);
                }
            }) as BackwardFn)
        } else {
            None
        };
        self.emit("add", data, a.shape(), backward)
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        same_shape("mul", a, b)?;
        let data: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let backward = if a.requires_grad() || b.requires_grad() {
            let (a, b) = (a.clone(), b.clone());
            Some(Box::new(move |g: &[f64], sink: GradSink| {
                if a.requires_grad() {
                    let da: Vec<f64> = g.iter().zip(b.data()).map(|(gi, bi)| gi * bi).collect();
                    sink(&a, &da);
                }
                if b.requires_grad() {
                    let db: Vec<f64> = g.iter().zip(a.data()).map(|(gi, ai)| gi * ai).collect();
                    sink(&b, &db);
                }
            }) as BackwardFn)
        } else {
            None
        };
        self.emit("mul", data, a.shape(), backward)
    }

    /// Multiplication by a compile-time-known constant.
    pub fn scale(&self, x: &Tensor, c: f64) -> Result<Tensor> {
        let data: Vec<f64> = x.data().iter().map(|v| v * c).collect();
        let backward = x.requires_grad().then(|| {
            let x = x.clone();
            Box::new(move |g: &[f64], sink: GradSink| {
                let dx: Vec<f64> = g.iter().map(|gi| gi * c).collect();
                sink(&x, &dx);
            }) as BackwardFn
        });
        self.emit("scale", data, x.shape(), backward)
    }

    /// Broadcast multiply of `x` by a learned one-element scalar `s`.
    pub fn scale_by(&self, s: &Tensor, x: &Tensor) -> Result<Tensor> {
        if s.len() != 1 {
            return Err(Error::Dimension(format!(
                "scale_by: scalar factor must have one element, got shape {:?}",
                s.shape()
            )));
        }
        let sv = s.data()[0];
        let data: Vec<f64> = x.data().iter().map(|v| v * sv).collect();
        let backward = if s.requires_grad() || x.requires_grad() {
            let (s, x) = (s.clone(), x.clone());
            Some(Box::new(move |g: &[f64], sink: GradSink| {
                if s.requires_grad() {
                    let ds: f64 = g.iter().zip(x.data()).map(|(gi, xi)| gi * xi).sum();
                    sink(&s, &[ds]);
                }
                if x.requires_grad() {
                    let sv = s.data()[0];
                    let dx: Vec<f64> = g.iter().map(|gi| gi * sv).collect();
                    sink(&x, &dx);
                }
            }) as BackwardFn)
        } else {
            None
        };
        self.emit("scale_by", data, x.shape(), backward)
    }

    /// Matrix product `a[m,k] . b[k,n] -> [m,n]`. A rank-1 right operand of
    /// length k is treated as a column, yielding shape `[m]`.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.rank() != 2 {
            return Err(Error::Dimension(format!(
                "matmul: left operand must be rank 2, got {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let (bk, n, vector_rhs) = match b.rank() {
            1 => (b.shape()[0], 1, true),
            2 => (b.shape()[0], b.shape()[1], false),
            _ => {
                return Err(Error::Dimension(format!(
                    "matmul: right operand must be rank 1 or 2, got {:?} and {:?}",
                    a.shape(),
                    b.shape()
                )))
            }
        };
        if k != bk {
            return Err(Error::Dimension(format!(
                "matmul: inner dimensions of {:?} and {:?} do not match",
                a.shape(),
                b.shape()
            )));
        }
        let mut data = vec![0.0; m * n];
        matmul_into(a.data(), b.data(), &mut data, m, k, n);
        let out_shape: Vec<usize> = if vector_rhs { vec![m] } else { vec![m, n] };
        let backward = if a.requires_grad() || b.requires_grad() {
            let (a, b) = (a.clone(), b.clone());
            Some(Box::new(move |g: &[f64], sink: GradSink| {
                if a.requires_grad() {
                    // dA = G . B^T
                    let mut da = vec![0.0; m * k];
                    let bd = b.data();
                    for i in 0..m {
                        for j in 0..k {
                            let mut acc = 0.0;
                            for l in 0..n {
                                acc += g[i * n + l] * bd[j * n + l];
                            }
                            da[i * k + j] = acc;
                        }
                    }
                    sink(&a, &da);
                }
                if b.requires_grad() {
                    // dB = A^T . G
                    let mut db = vec![0.0; k * n];
                    let ad = a.data();
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for j in 0..k {
                            let aij = ad[i * k + j];
                            let row = &mut db[j * n..(j + 1) * n];
                            for (dbl, gl) in row.iter_mut().zip(gi) {
                                *dbl += aij * gl;
                            }
                        }
                    }
                    sink(&b, &db);
                }
            }) as BackwardFn)
        } else {
            None
        };
        self.emit("matmul", data, &out_shape, backward)
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 {
            return Err(Error::Dimension(format!(
                "transpose: expected rank 2, got shape {:?}",
                x.shape()
            )));
        }
        let (m, n) = (x.shape()[0], x.shape()[1]);
        let xd = x.data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = xd[i * n + j];
            }
        }
        let backward = x.requires_grad().then(|| {
            let x = x.clone();
            Box::new(move |g: &[f64], sink: GradSink| {
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        dx[i * n + j] = g[j * m + i];
                    }
                }
                sink(&x, &dx);
            }) as BackwardFn
        });
        self.emit("transpose", data, &[n, m], backward)
    }

    /// Same data, new shape; element counts must agree.
    pub fn reshape(&self, x: &Tensor, shape: &[usize]) -> Result<Tensor> {
        let expect: usize = shape.iter().product();
        if shape.is_empty() || expect != x.len() {
            return Err(Error::Dimension(format!(
                "reshape: cannot view shape {:?} as {:?}",
                x.shape(),
                shape
            )));
        }
        let backward = x.requires_grad().then(|| {
            let x = x.clone();
            Box::new(move |g: &[f64], sink: GradSink| sink(&x, g)) as BackwardFn
        });
        self.emit("reshape", x.data().to_vec(), shape, backward)
    }

    /// Stacks T equal-length rank-1 tensors into a `[T, n]` matrix.
    pub fn stack_rows(&self, rows: &[Tensor]) -> Result<Tensor> {
        if rows.is_empty() {
            return Err(Error::Dimension("stack_rows: no rows given".into()));
        }
        let n = rows[0].len();
        for r in rows {
            if r.rank() != 1 || r.len() != n {
                return Err(Error::Dimension(format!(
                    "stack_rows: expected rank-1 rows of length {n}, got shape {:?}",
                    r.shape()
                )));
            }
        }
        let mut data = Vec::with_capacity(rows.len() * n);
        for r in rows {
            data.extend_from_slice(r.data());
        }
        let backward = rows.iter().any(|r| r.requires_grad()).then(|| {
            let rows: Vec<Tensor> = rows.to_vec();
            Box::new(move |g: &[f64], sink: GradSink| {
                for (t, r) in rows.iter().enumerate() {
                    if r.requires_grad() {
                        sink(r, &g[t * n..(t + 1) * n]);
                    }
                }
            }) as BackwardFn
        });
        self.emit("stack_rows", data, &[rows.len(), n], backward)
    }

    /// Extracts element `i` of a rank-1 tensor as a one-element tensor.
    pub fn index(&self, x: &Tensor, i: usize) -> Result<Tensor> {
        if x.rank() != 1 {
            return Err(Error::Dimension(format!(
                "index: expected rank 1, got shape {:?}",
                x.shape()
            )));
        }
        if i >= x.len() {
            return Err(Error::Contract(format!(
                "index {i} out of range for length {}",
                x.len()
            )));
        }
        let backward = x.requires_grad().then(|| {
            let x = x.clone();
            Box::new(move |g: &[f64], sink: GradSink| {
                let mut dx = vec![0.0; x.len()];
                dx[i] = g[0];
                sink(&x, &dx);
            }) as BackwardFn
        });
        self.emit("index", vec![x.data()[i]], &[1], backward)
    }

    /// Elementwise `ln(max(x, floor))`. The clamp keeps the op total on
    /// nonnegative inputs; below the floor the derivative is zero.
    pub fn log_clamped(&self, x: &Tensor, floor: f64) -> Result<Tensor> {
        if !(floor > 0.0) {
            return Err(Error::Config(format!(
                "log_clamped: floor must be positive, got {floor}"
            )));
        }
        if self.tracing_kinks() {
            self.trace_kink_bits(x.data().iter().map(|&v| v > floor));
        }
        let data: Vec<f64> = x.data().iter().map(|&v| v.max(floor).ln()).collect();
        let backward = x.requires_grad().then(|| {
            let x = x.clone();
            Box::new(move |g: &[f64], sink: GradSink| {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(x.data())
                    .map(|(gi, &xi)| if xi > floor { gi / xi } else { 0.0 })
                    .collect();
                sink(&x, &dx);
            }) as BackwardFn
        });
        self.emit("log_clamped", data, x.shape(), backward)
    }

    /// Adds a per-channel bias to a `[C, H, W]` feature map.
    pub fn bias_channels(&self, x: &Tensor, b: &Tensor) -> Result<Tensor> {
        if x.rank() != 3 || b.rank() != 1 || b.len() != x.shape()[0] {
            return Err(Error::Dimension(format!(
                "bias_channels: expected [C,H,W] and [C], got {:?} and {:?}",
                x.shape(),
                b.shape()
            )));
        }
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let plane = h * w;
        let mut data = x.data().to_vec();
        for ch in 0..c {
            let bias = b.data()[ch];
            for v in &mut data[ch * plane..(ch + 1) * plane] {
                *v += bias;
            }
        }
        let backward = if x.requires_grad() || b.requires_grad() {
            let (x, b) = (x.clone(), b.clone());
            Some(Box::new(move |g: &[f64], sink: GradSink| {
                if x.requires_grad() {
                    sink(&x, g);
                }
                if b.requires_grad() {
                    let mut db = vec![0.0; c];
                    for (ch, dbc) in db.iter_mut().enumerate() {
                        *dbc = g[ch * plane..(ch + 1) * plane].iter().sum();
                    }
                    sink(&b, &db);
                }
            }) as BackwardFn)
        } else {
            None
        };
        self.emit("bias_channels", data, x.shape(), backward)
    }

    /// Softmax along `axis` with max subtraction for overflow safety.
    pub fn softmax(&self, x: &Tensor, axis: usize) -> Result<Tensor> {
        if axis >= x.rank() {
            return Err(Error::Dimension(format!(
                "softmax: axis {axis} out of range for shape {:?}",
                x.shape()
            )));
        }
        let len = x.shape()[axis];
        let inner: usize = x.shape()[axis + 1..].iter().product();
        let outer: usize = x.shape()[..axis].iter().product();
        let xd = x.data();
        let mut data = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut max = f64::NEG_INFINITY;
                for j in 0..len {
                    max = max.max(xd[base + j * inner]);
                }
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (xd[base + j * inner] - max).exp();
                    data[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..len {
                    data[base + j * inner] /= sum;
                }
            }
        }
        let out = Tensor::new(data, x.shape(), x.requires_grad())?;
        if !x.requires_grad() {
            if !out.all_finite() {
                return Err(Error::Numeric(
                    "non-finite value in output of op `softmax`".into(),
                ));
            }
            return Ok(out);
        }
        let backward = {
            let (x, y) = (x.clone(), out.clone());
            Box::new(move |g: &[f64], sink: GradSink| {
                let yd = y.data();
                let mut dx = vec![0.0; yd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut dot = 0.0;
                        for j in 0..len {
                            let idx = base + j * inner;
                            dot += g[idx] * yd[idx];
                        }
                        for j in 0..len {
                            let idx = base + j * inner;
                            dx[idx] = yd[idx] * (g[idx] - dot);
                        }
                    }
                }
                sink(&x, &dx);
            }) as BackwardFn
        };
        self.push("softmax", out, backward)
    }

    /// Elementwise nonlinearity. The ReLU derivative at exactly zero is zero.
    pub fn pointwise(&self, act: Activation, x: &Tensor) -> Result<Tensor> {
        if act == Activation::Relu && self.tracing_kinks() {
            self.trace_kink_bits(x.data().iter().map(|&v| v > 0.0));
        }
        let data: Vec<f64> = match act {
            Activation::Sigmoid => x.data().iter().map(|&v| sigmoid_scalar(v)).collect(),
            Activation::Tanh => x.data().iter().map(|&v| v.tanh()).collect(),
            Activation::Relu => x
                .data()
                .iter()
                .map(|&v| if v > 0.0 { v } else { 0.0 })
                .collect(),
        };
        let out = Tensor::new(data, x.shape(), x.requires_grad())?;
        if !x.requires_grad() {
            if !out.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite value in output of op `{}`",
                    act.name()
                )));
            }
            return Ok(out);
        }
        let backward = {
            let (x, y) = (x.clone(), out.clone());
            Box::new(move |g: &[f64], sink: GradSink| {
                let dx: Vec<f64> = match act {
                    Activation::Sigmoid => g
                        .iter()
                        .zip(y.data())
                        .map(|(gi, &o)| gi * o * (1.0 - o))
                        .collect(),
                    Activation::Tanh => g
                        .iter()
                        .zip(y.data())
                        .map(|(gi, &o)| gi * (1.0 - o * o))
                        .collect(),
                    Activation::Relu => g
                        .iter()
                        .zip(x.data())
                        .map(|(gi, &v)| if v > 0.0 { *gi } else { 0.0 })
                        .collect(),
                };
                sink(&x, &dx);
            }) as BackwardFn
        };
        self.push(act.name(), out, backward)
    }

    pub fn sigmoid(&self, x: &Tensor) -> Result<Tensor> {
        self.pointwise(Activation::Sigmoid, x)
    }

    pub fn tanh(&self, x: &Tensor) -> Result<Tensor> {
        self.pointwise(Activation::Tanh, x)
    }

    pub fn relu(&self, x: &Tensor) -> Result<Tensor> {
        self.pointwise(Activation::Relu, x)
    }

    /// Reduction over all elements (`axis = None`) or along one axis.
    /// `GlobalAvgPool2d` requires a `[C, H, W]` input and no axis.
    pub fn reduce(&self, red: Reduction, x: &Tensor, axis: Option<usize>) -> Result<Tensor> {
        match red {
            Reduction::GlobalAvgPool2d => {
                if axis.is_some() {
                    return Err(Error::Dimension(
                        "global_avg_pool_2d does not take an axis".into(),
                    ));
                }
                if x.rank() != 3 {
                    return Err(Error::Dimension(format!(
                        "global_avg_pool_2d: expected [C,H,W], got shape {:?}",
                        x.shape()
                    )));
                }
                let (c, plane) = (x.shape()[0], x.shape()[1] * x.shape()[2]);
                let xd = x.data();
                let inv = 1.0 / plane as f64;
                let data: Vec<f64> = (0..c)
                    .map(|ch| xd[ch * plane..(ch + 1) * plane].iter().sum::<f64>() * inv)
                    .collect();
                let backward = x.requires_grad().then(|| {
                    let x = x.clone();
                    Box::new(move |g: &[f64], sink: GradSink| {
                        let mut dx = vec![0.0; c * plane];
                        for ch in 0..c {
                            let gi = g[ch] * inv;
                            for v in &mut dx[ch * plane..(ch + 1) * plane] {
                                *v = gi;
                            }
                        }
                        sink(&x, &dx);
                    }) as BackwardFn
                });
                self.emit("global_avg_pool_2d", data, &[c], backward)
            }
            Reduction::Sum | Reduction::Mean => match axis {
                None => {
                    let n = x.len() as f64;
                    let total: f64 = x.data().iter().sum();
                    let (value, scale) = match red {
                        Reduction::Sum => (total, 1.0),
                        Reduction::Mean => (total / n, 1.0 / n),
                        Reduction::GlobalAvgPool2d => unreachable!(),
                    };
                    let backward = x.requires_grad().then(|| {
                        let x = x.clone();
                        Box::new(move |g: &[f64], sink: GradSink| {
                            let dx = vec![g[0] * scale; x.len()];
                            sink(&x, &dx);
                        }) as BackwardFn
                    });
                    self.emit(red_name(red), vec![value], &[1], backward)
                }
                Some(a) => {
                    if a >= x.rank() {
                        return Err(Error::Dimension(format!(
                            "reduce: axis {a} out of range for shape {:?}",
                            x.shape()
                        )));
                    }
                    let len = x.shape()[a];
                    let inner: usize = x.shape()[a + 1..].iter().product();
                    let outer: usize = x.shape()[..a].iter().product();
                    let scale = match red {
                        Reduction::Sum => 1.0,
                        Reduction::Mean => 1.0 / len as f64,
                        Reduction::GlobalAvgPool2d => unreachable!(),
                    };
                    let xd = x.data();
                    let mut data = vec![0.0; outer * inner];
                    for o in 0..outer {
                        for i in 0..inner {
                            let mut acc = 0.0;
                            for j in 0..len {
                                acc += xd[o * len * inner + j * inner + i];
                            }
                            data[o * inner + i] = acc * scale;
                        }
                    }
                    let mut shape: Vec<usize> = x.shape().to_vec();
                    shape.remove(a);
                    if shape.is_empty() {
                        shape.push(1);
                    }
                    let backward = x.requires_grad().then(|| {
                        let x = x.clone();
                        Box::new(move |g: &[f64], sink: GradSink| {
                            let mut dx = vec![0.0; x.len()];
                            for o in 0..outer {
                                for i in 0..inner {
                                    let gi = g[o * inner + i] * scale;
                                    for j in 0..len {
                                        dx[o * len * inner + j * inner + i] = gi;
                                    }
                                }
                            }
                            sink(&x, &dx);
                        }) as BackwardFn
                    });
                    self.emit(red_name(red), data, &shape, backward)
                }
            },
        }
    }
}

fn red_name(red: Reduction) -> &'static str {
    match red {
        Reduction::Sum => "sum",
        Reduction::Mean => "mean",
        Reduction::GlobalAvgPool2d => "global_avg_pool_2d",
    }
}

/// `out[m,n] = a[m,k] . b[k,n]`, accumulating in f64.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, &aij) in arow.iter().enumerate() {
            let brow = &b[j * n..(j + 1) * n];
            for (ov, bv) in orow.iter_mut().zip(brow) {
                *ov += aij * bv;
            }
        }
    }
}
