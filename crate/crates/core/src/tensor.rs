//! Dense row-major `f64` tensors and the forward kernels the model is built
//! from.
//!
//! Every kernel keeps a fixed summation order (reductions run left-to-right
//! over the contracted index), so results are bitwise reproducible across
//! runs. Kernels validate operand shapes and reject non-finite outputs.

use alloc::{format, vec, vec::Vec};

use crate::error::{Error, Result};

/// Variance floor used by [`layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// N-dimensional row-major array of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from a shape and flat row-major data.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} holds {numel} elements but {} were provided",
                data.len()
            )));
        }
        let t = Tensor {
            shape: shape.to_vec(),
            data,
        };
        t.ensure_finite("Tensor::new")?;
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Fills a tensor by calling `f` with the flat row-major index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel).map(f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Interprets the tensor as a matrix, returning (rows, cols).
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            other => Err(Error::ShapeMismatch(format!(
                "expected rank-2 tensor, got shape {other:?}"
            ))),
        }
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            [a, b, c] => Ok((*a, *b, *c)),
            other => Err(Error::ShapeMismatch(format!(
                "expected rank-3 tensor, got shape {other:?}"
            ))),
        }
    }

    /// Same data, new shape. The element count must match.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} ({} elements) to {shape:?} ({numel} elements)",
                self.shape,
                self.data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Element at a multi-index; test and report helper.
    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(
                ix < dim,
                "index {ix} out of bounds for axis {i} (len {dim})"
            );
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn ensure_finite(&self, op: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "{op} produced {v} at flat index {i}"
                )));
            }
        }
        Ok(())
    }
}

fn check_same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch(format!(
            "{op} requires equal shapes, got {:?} and {:?}",
            a.shape, b.shape
        )));
    }
    Ok(())
}

/// `a[m,k] x b[k,n] -> [m,n]`, accumulating over `k` in ascending order.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, ka) = a.dims2()?;
    let (kb, n) = b.dims2()?;
    if ka != kb {
        return Err(Error::ShapeMismatch(format!(
            "matmul inner dims disagree: [{m},{ka}] x [{kb},{n}]"
        )));
    }
    let mut out = vec![0.0; m * n];
    // i-k-j loop order: each out[i,j] still accumulates over k ascending.
    for i in 0..m {
        let a_row = &a.data[i * ka..(i + 1) * ka];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (k, &aik) in a_row.iter().enumerate() {
            let b_row = &b.data[k * n..(k + 1) * n];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
    let t = Tensor {
        shape: vec![m, n],
        data: out,
    };
    t.ensure_finite("matmul")?;
    Ok(t)
}

/// Number of multiply-accumulates a `matmul` of these dims executes.
pub fn matmul_macs(m: usize, k: usize, n: usize) -> u64 {
    m as u64 * k as u64 * n as u64
}

pub fn transpose2(x: &Tensor) -> Result<Tensor> {
    let (m, n) = x.dims2()?;
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = x.data[i * n + j];
        }
    }
    Ok(Tensor {
        shape: vec![n, m],
        data: out,
    })
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape("add", a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    let t = Tensor {
        shape: a.shape.clone(),
        data,
    };
    t.ensure_finite("add")?;
    Ok(t)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape("mul", a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    let t = Tensor {
        shape: a.shape.clone(),
        data,
    };
    t.ensure_finite("mul")?;
    Ok(t)
}

pub fn scale(x: &Tensor, factor: f64) -> Result<Tensor> {
    if !factor.is_finite() {
        return Err(Error::NonFinite(format!("scale factor {factor}")));
    }
    let data = x.data.iter().map(|v| v * factor).collect();
    let t = Tensor {
        shape: x.shape.clone(),
        data,
    };
    t.ensure_finite("scale")?;
    Ok(t)
}

/// Adds `bias[n]` to every row of `x[m,n]`.
pub fn add_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, n) = x.dims2()?;
    if bias.shape != [n] {
        return Err(Error::ShapeMismatch(format!(
            "bias shape {:?} does not match row width {n}",
            bias.shape
        )));
    }
    let mut data = x.data.clone();
    for i in 0..m {
        for j in 0..n {
            data[i * n + j] += bias.data[j];
        }
    }
    let t = Tensor {
        shape: x.shape.clone(),
        data,
    };
    t.ensure_finite("add_bias")?;
    Ok(t)
}

/// Row-wise softmax with per-row max subtraction for stability.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (m, n) = x.dims2()?;
    if n == 0 {
        return Err(Error::ShapeMismatch("softmax over zero-width rows".into()));
    }
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        let row = &x.data[i * n..(i + 1) * n];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let out = &mut data[i * n..(i + 1) * n];
        let mut sum = 0.0;
        for (o, &v) in out.iter_mut().zip(row) {
            let e = libm::exp(v - max);
            *o = e;
            sum += e;
        }
        for o in out.iter_mut() {
            *o /= sum;
        }
    }
    let t = Tensor {
        shape: x.shape.clone(),
        data,
    };
    t.ensure_finite("softmax_rows")?;
    Ok(t)
}

/// Layer normalization over the trailing axis with affine parameters.
///
/// Positions are all leading indices; each position's channel vector is
/// shifted to mean zero and scaled to unit (population) variance before
/// `gamma * xhat + beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let c = *x
        .shape
        .last()
        .ok_or_else(|| Error::ShapeMismatch("layer_norm requires at least one axis".into()))?;
    if gamma.shape != [c] || beta.shape != [c] {
        return Err(Error::ShapeMismatch(format!(
            "layer_norm affine shapes {:?}/{:?} do not match channel count {c}",
            gamma.shape, beta.shape
        )));
    }
    let rows = x.numel() / c;
    let mut data = vec![0.0; x.numel()];
    for r in 0..rows {
        let row = &x.data[r * c..(r + 1) * c];
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let inv_std = 1.0 / libm::sqrt(var + eps);
        let out = &mut data[r * c..(r + 1) * c];
        for j in 0..c {
            out[j] = gamma.data[j] * (row[j] - mean) * inv_std + beta.data[j];
        }
    }
    let t = Tensor {
        shape: x.shape.clone(),
        data,
    };
    t.ensure_finite("layer_norm")?;
    Ok(t)
}

/// Exact-erf Gaussian error linear unit, `x * Phi(x)`.
pub fn gelu(x: &Tensor) -> Result<Tensor> {
    let data = x.data.iter().map(|&v| v * gauss_cdf(v)).collect();
    let t = Tensor {
        shape: x.shape.clone(),
        data,
    };
    t.ensure_finite("gelu")?;
    Ok(t)
}

pub(crate) fn gauss_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / core::f64::consts::SQRT_2))
}

pub(crate) fn gauss_pdf(x: f64) -> f64 {
    libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * core::f64::consts::PI)
}

/// Per-channel 3x3 convolution over `x[H,W,C]` with zero padding of one.
///
/// `kernels[3,3,C]` holds one 3x3 filter per channel; there is no
/// cross-channel mixing. Out-of-bounds taps are skipped, which equals
/// multiplying by the zero padding.
pub fn depthwise_conv3x3(x: &Tensor, kernels: &Tensor) -> Result<Tensor> {
    let (h, w, c) = x.dims3()?;
    let (kh, kw, kc) = kernels.dims3()?;
    if (kh, kw) != (3, 3) || kc != c {
        return Err(Error::ShapeMismatch(format!(
            "depthwise kernels must be [3,3,{c}], got {:?}",
            kernels.shape
        )));
    }
    let mut data = vec![0.0; h * w * c];
    for i in 0..h {
        for j in 0..w {
            for di in 0..3usize {
                let si = i as isize + di as isize - 1;
                if si < 0 || si >= h as isize {
                    continue;
                }
                for dj in 0..3usize {
                    let sj = j as isize + dj as isize - 1;
                    if sj < 0 || sj >= w as isize {
                        continue;
                    }
                    let src = (si as usize * w + sj as usize) * c;
                    let ker = (di * 3 + dj) * c;
                    let dst = (i * w + j) * c;
                    for ch in 0..c {
                        data[dst + ch] += x.data[src + ch] * kernels.data[ker + ch];
                    }
                }
            }
        }
    }
    let t = Tensor {
        shape: vec![h, w, c],
        data,
    };
    t.ensure_finite("depthwise_conv3x3")?;
    Ok(t)
}

/// Multiplies actually executed by [`depthwise_conv3x3`] on an HxWxC map
/// (border taps fall outside and are skipped).
pub fn depthwise_conv3x3_macs(h: usize, w: usize, c: usize) -> u64 {
    let mut taps = 0u64;
    for i in 0..h {
        let vi = 3 - (i == 0) as u64 - (i + 1 == h) as u64;
        for j in 0..w {
            let vj = 3 - (j == 0) as u64 - (j + 1 == w) as u64;
            taps += vi.min(h as u64) * vj.min(w as u64);
        }
    }
    taps * c as u64
}

/// Toroidal roll: `out[(i+dy) mod H, (j+dx) mod W] = x[i,j]`.
pub fn cyclic_roll(x: &Tensor, dy: i64, dx: i64) -> Result<Tensor> {
    let (h, w, c) = x.dims3()?;
    let idx = roll_indices(h, w, dy, dx);
    let mut data = vec![0.0; x.numel()];
    for (dst, &src) in idx.iter().enumerate() {
        data[dst * c..(dst + 1) * c].copy_from_slice(&x.data[src * c..(src + 1) * c]);
    }
    Ok(Tensor {
        shape: vec![h, w, c],
        data,
    })
}

/// Row-permutation view of a toroidal roll: entry `d` is the source token
/// (row-major over HxW) whose value lands at destination token `d`.
pub fn roll_indices(h: usize, w: usize, dy: i64, dx: i64) -> Vec<usize> {
    let hh = h as i64;
    let ww = w as i64;
    let dy = dy.rem_euclid(hh);
    let dx = dx.rem_euclid(ww);
    let mut idx = Vec::with_capacity(h * w);
    for i in 0..hh {
        let si = (i - dy).rem_euclid(hh) as usize;
        for j in 0..ww {
            let sj = (j - dx).rem_euclid(ww) as usize;
            idx.push(si * w + sj);
        }
    }
    idx
}

/// Column-mean over rows: `x[m,n] -> [1,n]`.
pub fn mean_rows(x: &Tensor) -> Result<Tensor> {
    let (m, n) = x.dims2()?;
    if m == 0 {
        return Err(Error::ShapeMismatch("mean over zero rows".into()));
    }
    let mut data = vec![0.0; n];
    for i in 0..m {
        for j in 0..n {
            data[j] += x.data[i * n + j];
        }
    }
    for v in &mut data {
        *v /= m as f64;
    }
    let t = Tensor {
        shape: vec![1, n],
        data,
    };
    t.ensure_finite("mean_rows")?;
    Ok(t)
}

/// Sum of all elements as a `[1]` scalar tensor.
pub fn sum_all(x: &Tensor) -> Result<Tensor> {
    let s = x.data.iter().sum::<f64>();
    let t = Tensor::scalar(s);
    t.ensure_finite("sum_all")?;
    Ok(t)
}

/// Mean cross-entropy of row-wise logits against integer targets.
///
/// Stable form: `-logit[t] + logsumexp(row)` averaged over rows.
pub fn cross_entropy_mean(logits: &Tensor, targets: &[usize]) -> Result<Tensor> {
    let (b, n) = logits.dims2()?;
    if targets.len() != b {
        return Err(Error::ShapeMismatch(format!(
            "{} targets for {b} logit rows",
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        if t >= n {
            return Err(Error::InvalidConfig(format!(
                "target class {t} out of range for {n} classes"
            )));
        }
        let row = &logits.data[r * n..(r + 1) * n];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + libm::log(row.iter().map(|&v| libm::exp(v - max)).sum::<f64>());
        total += lse - row[t];
    }
    let t = Tensor::scalar(total / b as f64);
    t.ensure_finite("cross_entropy_mean")?;
    Ok(t)
}
