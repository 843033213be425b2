//! Reverse-mode differentiation over a recorded operation tape.
//!
//! A [`Tape`] stores every executed operation together with its output value.
//! Walking the record backward from a scalar loss evaluates each operation's
//! vector-Jacobian product in reverse order and accumulates one gradient per
//! leaf, shape-equal to that leaf. The op set is exactly what the model
//! needs; this is not a general autodiff system.
//!
//! The tape also counts the multiply-accumulates of the work it records
//! (matmul, elementwise products, depthwise convolution taps), which backs
//! the measured-vs-formula complexity checks. Normalizations and
//! transcendentals are not counted.

use alloc::{format, vec, vec::Vec};

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor, LAYER_NORM_EPS};

/// Default central-difference step for gradient checks.
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Matmul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    Gelu(Var),
    DepthwiseConv3x3 {
        x: Var,
        kernels: Var,
        height: usize,
        width: usize,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    GatherElems {
        x: Var,
        idx: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    Sum(Var),
    CrossEntropyMean {
        logits: Var,
        targets: Vec<usize>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of executed operations with saved inputs.
pub struct Tape {
    nodes: Vec<Node>,
    macs: u64,
}

/// Per-leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            macs: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulates executed by the operations recorded so far.
    pub fn mac_count(&self) -> u64 {
        self.macs
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers an input; leaves are the only nodes that receive gradients.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = tensor::matmul(self.value(a), self.value(b))?;
        let (m, k) = self.value(a).dims2()?;
        let n = self.value(b).dims2()?.1;
        self.macs += tensor::matmul_macs(m, k, n);
        Ok(self.push(value, Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = tensor::transpose2(self.value(x))?;
        Ok(self.push(value, Op::Transpose(x)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = tensor::add(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = tensor::mul(self.value(a), self.value(b))?;
        self.macs += value.numel() as u64;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let value = tensor::scale(self.value(x), factor)?;
        self.macs += value.numel() as u64;
        Ok(self.push(value, Op::Scale(x, factor)))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let value = tensor::add_bias(self.value(x), self.value(bias))?;
        Ok(self.push(value, Op::AddBias(x, bias)))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let value = tensor::softmax_rows(self.value(x))?;
        Ok(self.push(value, Op::SoftmaxRows(x)))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let value = tensor::layer_norm(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            LAYER_NORM_EPS,
        )?;
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta }))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let value = tensor::gelu(self.value(x))?;
        Ok(self.push(value, Op::Gelu(x)))
    }

    /// Depthwise 3x3 convolution over a token matrix `[h*w, c]` viewed as an
    /// `h` by `w` feature map.
    pub fn depthwise_conv3x3(
        &mut self,
        x: Var,
        kernels: Var,
        height: usize,
        width: usize,
    ) -> Result<Var> {
        let (rows, c) = self.value(x).dims2()?;
        if rows != height * width {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {height}x{width}={} tokens, got {rows}",
                height * width
            )));
        }
        let spatial = self.value(x).reshape(&[height, width, c])?;
        let value =
            tensor::depthwise_conv3x3(&spatial, self.value(kernels))?.reshape(&[rows, c])?;
        self.macs += tensor::depthwise_conv3x3_macs(height, width, c);
        Ok(self.push(
            value,
            Op::DepthwiseConv3x3 {
                x,
                kernels,
                height,
                width,
            },
        ))
    }

    /// `out[r, :] = x[idx[r], :]` for a rank-2 input.
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &src in &idx {
            if src >= rows {
                return Err(Error::ShapeMismatch(format!(
                    "gather_rows index {src} out of range for {rows} rows"
                )));
            }
            data.extend_from_slice(&self.value(x).data()[src * cols..(src + 1) * cols]);
        }
        let value = Tensor::new(&[idx.len(), cols], data)?;
        Ok(self.push(value, Op::GatherRows { x, idx }))
    }

    /// Flat element gather: `out.data[e] = x.data[idx[e]]`, reshaped to
    /// `out_shape`. Covers patch extraction and other re-layouts.
    pub fn gather_elems(&mut self, x: Var, idx: Vec<usize>, out_shape: &[usize]) -> Result<Var> {
        let numel: usize = out_shape.iter().product();
        if numel != idx.len() {
            return Err(Error::ShapeMismatch(format!(
                "gather_elems index count {} does not fill shape {out_shape:?}",
                idx.len()
            )));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(idx.len());
        for &i in &idx {
            if i >= src.len() {
                return Err(Error::ShapeMismatch(format!(
                    "gather_elems index {i} out of range for {} elements",
                    src.len()
                )));
            }
            data.push(src[i]);
        }
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, Op::GatherElems { x, idx }))
    }

    /// Contiguous column slice `x[:, start..start+len]`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        if start + len > cols {
            return Err(Error::ShapeMismatch(format!(
                "column slice {start}..{} exceeds width {cols}",
                start + len
            )));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let value = Tensor::new(&[rows, len], data)?;
        Ok(self.push(value, Op::SliceCols { x, start }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::ShapeMismatch("concat_rows of nothing".into()));
        }
        let cols = self.value(parts[0]).dims2()?.1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (m, n) = self.value(p).dims2()?;
            if n != cols {
                return Err(Error::ShapeMismatch(format!(
                    "concat_rows width mismatch: {n} vs {cols}"
                )));
            }
            rows += m;
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(&[rows, cols], data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::ShapeMismatch("concat_cols of nothing".into()));
        }
        let rows = self.value(parts[0]).dims2()?.0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| self.value(p).dims2().map(|d| d.1))
            .collect::<Result<_>>()?;
        for &p in parts {
            if self.value(p).dims2()?.0 != rows {
                return Err(Error::ShapeMismatch(
                    "concat_cols row count mismatch".into(),
                ));
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        for r in 0..rows {
            let mut offset = 0;
            for (&p, &w) in parts.iter().zip(&widths) {
                let src = self.value(p).data();
                data[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&src[r * w..(r + 1) * w]);
                offset += w;
            }
        }
        let value = Tensor::new(&[rows, total], data)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    /// Column means: `[m,n] -> [1,n]` (global average pooling over tokens).
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let value = tensor::mean_rows(self.value(x))?;
        Ok(self.push(value, Op::MeanRows(x)))
    }

    /// Sum of all elements as a `[1]` scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = tensor::sum_all(self.value(x))?;
        Ok(self.push(value, Op::Sum(x)))
    }

    /// Mean cross-entropy of `logits[b,n]` against integer targets.
    pub fn cross_entropy_mean(&mut self, logits: Var, targets: Vec<usize>) -> Result<Var> {
        let value = tensor::cross_entropy_mean(self.value(logits), &targets)?;
        Ok(self.push(value, Op::CrossEntropyMean { logits, targets }))
    }

    /// Replays the tape backward from a scalar node, returning one gradient
    /// per leaf. Non-leaf gradients are consumed during the sweep.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.numel() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward requires a scalar output, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_fn(loss_value.shape(), |_| 1.0));

        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(i, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        // Ensures a zero-initialized buffer for a parent gradient.
        fn buf<'a>(grads: &'a mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'a mut Tensor {
            grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
        }

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let bt = tensor::transpose2(self.value(*b))?;
                let da = tensor::matmul(g, &bt)?;
                let at = tensor::transpose2(self.value(*a))?;
                let db = tensor::matmul(&at, g)?;
                add_assign(buf(grads, *a, self.value(*a).shape()), &da);
                add_assign(buf(grads, *b, self.value(*b).shape()), &db);
            }
            Op::Transpose(x) => {
                let dx = tensor::transpose2(g)?;
                add_assign(buf(grads, *x, self.value(*x).shape()), &dx);
            }
            Op::Add(a, b) => {
                add_assign(buf(grads, *a, self.value(*a).shape()), g);
                add_assign(buf(grads, *b, self.value(*b).shape()), g);
            }
            Op::Mul(a, b) => {
                let da = tensor::mul(g, self.value(*b))?;
                let db = tensor::mul(g, self.value(*a))?;
                add_assign(buf(grads, *a, self.value(*a).shape()), &da);
                add_assign(buf(grads, *b, self.value(*b).shape()), &db);
            }
            Op::Scale(x, factor) => {
                let dx = tensor::scale(g, *factor)?;
                add_assign(buf(grads, *x, self.value(*x).shape()), &dx);
            }
            Op::AddBias(x, bias) => {
                let (m, n) = g.dims2()?;
                add_assign(buf(grads, *x, self.value(*x).shape()), g);
                let db = buf(grads, *bias, self.value(*bias).shape());
                for r in 0..m {
                    for j in 0..n {
                        db.data_mut()[j] += g.data()[r * n + j];
                    }
                }
            }
            Op::SoftmaxRows(x) => {
                let y = &self.nodes[i].value;
                let (m, n) = y.dims2()?;
                let mut dx = Tensor::zeros(y.shape());
                for r in 0..m {
                    let yr = &y.data()[r * n..(r + 1) * n];
                    let gr = &g.data()[r * n..(r + 1) * n];
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    let out = &mut dx.data_mut()[r * n..(r + 1) * n];
                    for j in 0..n {
                        out[j] = yr[j] * (gr[j] - dot);
                    }
                }
                add_assign(buf(grads, *x, self.value(*x).shape()), &dx);
            }
            Op::LayerNorm { x, gamma, beta } => {
                self.layer_norm_vjp(*x, *gamma, *beta, g, grads)?;
            }
            Op::Gelu(x) => {
                let xs = self.value(*x);
                let mut dx = Tensor::zeros(xs.shape());
                for (o, (&v, &gv)) in dx.data_mut().iter_mut().zip(xs.data().iter().zip(g.data())) {
                    *o = gv * (tensor::gauss_cdf(v) + v * tensor::gauss_pdf(v));
                }
                add_assign(buf(grads, *x, xs.shape()), &dx);
            }
            Op::DepthwiseConv3x3 {
                x,
                kernels,
                height,
                width,
            } => {
                self.depthwise_vjp(*x, *kernels, *height, *width, g, grads)?;
            }
            Op::GatherRows { x, idx } => {
                let cols = self.value(*x).dims2()?.1;
                let dx = buf(grads, *x, self.value(*x).shape());
                for (r, &src) in idx.iter().enumerate() {
                    for j in 0..cols {
                        dx.data_mut()[src * cols + j] += g.data()[r * cols + j];
                    }
                }
            }
            Op::GatherElems { x, idx } => {
                let dx = buf(grads, *x, self.value(*x).shape());
                for (e, &src) in idx.iter().enumerate() {
                    dx.data_mut()[src] += g.data()[e];
                }
            }
            Op::SliceCols { x, start } => {
                let (rows, len) = g.dims2()?;
                let cols = self.value(*x).dims2()?.1;
                let dx = buf(grads, *x, self.value(*x).shape());
                for r in 0..rows {
                    for j in 0..len {
                        dx.data_mut()[r * cols + start + j] += g.data()[r * len + j];
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let cols = g.dims2()?.1;
                let mut row = 0;
                for &p in parts {
                    let m = self.value(p).dims2()?.0;
                    let slice = &g.data()[row * cols..(row + m) * cols];
                    let dp = buf(grads, p, self.value(p).shape());
                    for (o, &v) in dp.data_mut().iter_mut().zip(slice) {
                        *o += v;
                    }
                    row += m;
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = g.dims2()?;
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).dims2()?.1;
                    let dp = buf(grads, p, self.value(p).shape());
                    for r in 0..rows {
                        for j in 0..w {
                            dp.data_mut()[r * w + j] += g.data()[r * total + offset + j];
                        }
                    }
                    offset += w;
                }
            }
            Op::MeanRows(x) => {
                let (m, n) = self.value(*x).dims2()?;
                let dx = buf(grads, *x, self.value(*x).shape());
                for r in 0..m {
                    for j in 0..n {
                        dx.data_mut()[r * n + j] += g.data()[j] / m as f64;
                    }
                }
            }
            Op::Sum(x) => {
                let gv = g.data()[0];
                let dx = buf(grads, *x, self.value(*x).shape());
                for o in dx.data_mut() {
                    *o += gv;
                }
            }
            Op::CrossEntropyMean { logits, targets } => {
                let gv = g.data()[0];
                let probs = tensor::softmax_rows(self.value(*logits))?;
                let (b, n) = probs.dims2()?;
                let dl = buf(grads, *logits, self.value(*logits).shape());
                for (r, &t) in targets.iter().enumerate() {
                    for j in 0..n {
                        let indicator = (j == t) as usize as f64;
                        dl.data_mut()[r * n + j] +=
                            gv * (probs.data()[r * n + j] - indicator) / b as f64;
                    }
                }
            }
        }
        Ok(())
    }

    fn layer_norm_vjp(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let xs = self.value(x);
        let gs = self.value(gamma);
        let c = *xs.shape().last().unwrap();
        let rows = xs.numel() / c;

        let mut dx = Tensor::zeros(xs.shape());
        let mut dgamma = Tensor::zeros(&[c]);
        let mut dbeta = Tensor::zeros(&[c]);
        for r in 0..rows {
            let row = &xs.data()[r * c..(r + 1) * c];
            let grow = &g.data()[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv_std = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);

            let mut mean_dxhat = 0.0;
            let mut mean_dxhat_xhat = 0.0;
            for j in 0..c {
                let xhat = (row[j] - mean) * inv_std;
                let dxhat = grow[j] * gs.data()[j];
                dgamma.data_mut()[j] += grow[j] * xhat;
                dbeta.data_mut()[j] += grow[j];
                mean_dxhat += dxhat;
                mean_dxhat_xhat += dxhat * xhat;
            }
            mean_dxhat /= c as f64;
            mean_dxhat_xhat /= c as f64;
            for j in 0..c {
                let xhat = (row[j] - mean) * inv_std;
                let dxhat = grow[j] * gs.data()[j];
                dx.data_mut()[r * c + j] = inv_std * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
            }
        }

        let shape = xs.shape().to_vec();
        add_assign(
            grads[x.index()].get_or_insert_with(|| Tensor::zeros(&shape)),
            &dx,
        );
        add_assign(
            grads[gamma.index()].get_or_insert_with(|| Tensor::zeros(&[c])),
            &dgamma,
        );
        add_assign(
            grads[beta.index()].get_or_insert_with(|| Tensor::zeros(&[c])),
            &dbeta,
        );
        Ok(())
    }

    fn depthwise_vjp(
        &self,
        x: Var,
        kernels: Var,
        height: usize,
        width: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let xs = self.value(x);
        let ks = self.value(kernels);
        let c = xs.dims2()?.1;
        let mut dx = Tensor::zeros(xs.shape());
        let mut dk = Tensor::zeros(ks.shape());
        for i in 0..height {
            for j in 0..width {
                for di in 0..3usize {
                    let si = i as isize + di as isize - 1;
                    if si < 0 || si >= height as isize {
                        continue;
                    }
                    for dj in 0..3usize {
                        let sj = j as isize + dj as isize - 1;
                        if sj < 0 || sj >= width as isize {
                            continue;
                        }
                        let src = (si as usize * width + sj as usize) * c;
                        let ker = (di * 3 + dj) * c;
                        let dst = (i * width + j) * c;
                        for ch in 0..c {
                            dx.data_mut()[src + ch] += g.data()[dst + ch] * ks.data()[ker + ch];
                            dk.data_mut()[ker + ch] += g.data()[dst + ch] * xs.data()[src + ch];
                        }
                    }
                }
            }
        }
        let shape = xs.shape().to_vec();
        add_assign(
            grads[x.index()].get_or_insert_with(|| Tensor::zeros(&shape)),
            &dx,
        );
        let kshape = ks.shape().to_vec();
        add_assign(
            grads[kernels.index()].get_or_insert_with(|| Tensor::zeros(&kshape)),
            &dk,
        );
        Ok(())
    }
}

impl Var {
    fn index(self) -> usize {
        self.0
    }
}

fn add_assign(dst: &mut Tensor, src: &Tensor) {
    debug_assert_eq!(dst.shape(), src.shape());
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += s;
    }
}

/// Compares the tape gradient of a scalar function against central
/// differences, coordinate by coordinate.
///
/// Returns the maximum relative error with denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(
        |tape, vars| f(tape, vars[0]),
        core::slice::from_ref(x),
        step,
    )
}

/// Multi-input version of [`grad_check`]; the maximum runs over every
/// coordinate of every input.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "grad_check requires a scalar function, got shape {:?}",
            tape.value(out).shape()
        )));
    }
    let grads = tape.backward(out)?;

    let eval = |which: usize, coord: usize, delta: f64| -> Result<f64> {
        let mut perturbed: Vec<Tensor> = inputs.to_vec();
        perturbed[which].data_mut()[coord] += delta;
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.into_iter().map(|p| t.leaf(p)).collect();
        let o = f(&mut t, &vs)?;
        Ok(t.value(o).data()[0])
    };

    let mut max_rel: f64 = 0.0;
    for (vi, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[vi]);
        for coord in 0..input.numel() {
            let plus = eval(vi, coord, step)?;
            let minus = eval(vi, coord, -step)?;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.map_or(0.0, |t| t.data()[coord]);
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max((a - numeric).abs() / denom);
        }
    }
    Ok(max_rel)
}
