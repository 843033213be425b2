//! Axially expanded window (AEWin) self-attention.
//!
//! The K heads split into three parallel groups: the first K/4 attend within
//! horizontal stripes (one row of the feature map each), the next K/4 within
//! vertical stripes, and the last K/2 within non-overlapping MxM windows.
//! Group outputs concatenate along channels (C/4 + C/4 + C/2 = C) and pass
//! through the output projection.
//!
//! The shifted variant splits the window heads into two subgroups whose
//! window partitions are displaced right and down by the shift amount, using
//! cyclic rolls of the feature map instead of attention masks: the axial
//! heads already connect every pair of windows, so wrapped windows need no
//! masking.
//!
//! All paths are expressed as regular window/stripe attention over
//! precomputed token-index regions, so one code path serves every partition.

use alloc::{format, vec, vec::Vec};
use core::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::oracle::{self, AttentionMask};
use crate::tape::{Tape, Var};
use crate::tensor::{self, Tensor};

/// Head-group assignment under the K/4, K/4, K/2 split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadGroup {
    Horizontal,
    Vertical,
    Window,
}

/// Whether a block uses the regular or the parallel-shifted window partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Regular,
    Shifted,
}

/// Per-layer attention hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AewinConfig {
    channels: usize,
    heads: usize,
    window: usize,
    shift: usize,
}

impl AewinConfig {
    /// Validates the head split and channel divisibility; the shift defaults
    /// to half the window size.
    pub fn new(channels: usize, heads: usize, window: usize) -> Result<Self> {
        if heads == 0 || !heads.is_multiple_of(4) {
            return Err(Error::InvalidConfig(format!(
                "head count {heads} must be a positive multiple of 4"
            )));
        }
        if channels == 0 || !channels.is_multiple_of(heads) {
            return Err(Error::InvalidConfig(format!(
                "channels {channels} must divide evenly into {heads} heads"
            )));
        }
        if window == 0 {
            return Err(Error::InvalidConfig("window size must be positive".into()));
        }
        Ok(AewinConfig {
            channels,
            heads,
            window,
            shift: window / 2,
        })
    }

    pub fn with_shift(mut self, shift: usize) -> Self {
        self.shift = shift;
        self
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn shift(&self) -> usize {
        self.shift
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    /// Group of head `k` (0-based), exactly the K/4, K/4, K/2 split.
    pub fn head_group(&self, k: usize) -> HeadGroup {
        if k < self.heads / 4 {
            HeadGroup::Horizontal
        } else if k < self.heads / 2 {
            HeadGroup::Vertical
        } else {
            HeadGroup::Window
        }
    }

    fn horizontal_heads(&self) -> Range<usize> {
        0..self.heads / 4
    }

    fn vertical_heads(&self) -> Range<usize> {
        self.heads / 4..self.heads / 2
    }

    fn window_heads(&self) -> Range<usize> {
        self.heads / 2..self.heads
    }
}

/// Query/key/value/output projections, each CxC with a bias.
///
/// Head `k` owns columns `[k*d_k, (k+1)*d_k)` of the Q/K/V matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub bq: Tensor,
    pub bk: Tensor,
    pub bv: Tensor,
    pub bo: Tensor,
}

impl AttentionWeights {
    pub fn zeros(channels: usize) -> Self {
        AttentionWeights {
            wq: Tensor::zeros(&[channels, channels]),
            wk: Tensor::zeros(&[channels, channels]),
            wv: Tensor::zeros(&[channels, channels]),
            wo: Tensor::zeros(&[channels, channels]),
            bq: Tensor::zeros(&[channels]),
            bk: Tensor::zeros(&[channels]),
            bv: Tensor::zeros(&[channels]),
            bo: Tensor::zeros(&[channels]),
        }
    }

    /// Seeded standard-normal weights, handy for equivalence checks.
    pub fn random(channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw =
            |shape: &[usize]| Tensor::from_fn(shape, |_| StandardNormal.sample(&mut rng));
        AttentionWeights {
            wq: draw(&[channels, channels]),
            wk: draw(&[channels, channels]),
            wv: draw(&[channels, channels]),
            wo: draw(&[channels, channels]),
            bq: draw(&[channels]),
            bk: draw(&[channels]),
            bv: draw(&[channels]),
            bo: draw(&[channels]),
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        for (name, t) in [
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
        ] {
            if t.shape() != [channels, channels] {
                return Err(Error::ShapeMismatch(format!(
                    "{name} must be [{channels},{channels}], got {:?}",
                    t.shape()
                )));
            }
        }
        for (name, t) in [
            ("bq", &self.bq),
            ("bk", &self.bk),
            ("bv", &self.bv),
            ("bo", &self.bo),
        ] {
            if t.shape() != [channels] {
                return Err(Error::ShapeMismatch(format!(
                    "{name} must be [{channels}], got {:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// Column slice of the Q/K/V projections owned by one head.
    pub fn head_projection(&self, head: usize, head_dim: usize) -> HeadProjection {
        let c = self.wq.shape()[0];
        let start = head * head_dim;
        let slice_mat = |t: &Tensor| {
            Tensor::from_fn(&[c, head_dim], |i| {
                let row = i / head_dim;
                let col = i % head_dim;
                t.data()[row * c + start + col]
            })
        };
        let slice_bias = |t: &Tensor| Tensor::from_fn(&[head_dim], |i| t.data()[start + i]);
        HeadProjection {
            wq: slice_mat(&self.wq),
            wk: slice_mat(&self.wk),
            wv: slice_mat(&self.wv),
            bq: slice_bias(&self.bq),
            bk: slice_bias(&self.bk),
            bv: slice_bias(&self.bv),
        }
    }

    pub fn leaf(&self, tape: &mut Tape) -> AttentionVars {
        AttentionVars {
            wq: tape.leaf(self.wq.clone()),
            wk: tape.leaf(self.wk.clone()),
            wv: tape.leaf(self.wv.clone()),
            wo: tape.leaf(self.wo.clone()),
            bq: tape.leaf(self.bq.clone()),
            bk: tape.leaf(self.bk.clone()),
            bv: tape.leaf(self.bv.clone()),
            bo: tape.leaf(self.bo.clone()),
        }
    }
}

/// One head's `[C, d_k]` projections and `[d_k]` biases.
#[derive(Debug, Clone)]
pub struct HeadProjection {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub bq: Tensor,
    pub bk: Tensor,
    pub bv: Tensor,
}

/// Tape handles for a set of attention weights.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub bq: Var,
    pub bk: Var,
    pub bv: Var,
    pub bo: Var,
}

// ---------------------------------------------------------------------------
// Token regions: every attention flavor is "full attention within each
// region" for some partition of the H*W tokens (row-major order).
// ---------------------------------------------------------------------------

/// Horizontal stripes: one region per feature-map row (1xW tokens each).
pub fn row_regions(h: usize, w: usize) -> Vec<Vec<usize>> {
    (0..h).map(|i| (i * w..(i + 1) * w).collect()).collect()
}

/// Vertical stripes: one region per feature-map column (Hx1 tokens each).
pub fn col_regions(h: usize, w: usize) -> Vec<Vec<usize>> {
    (0..w)
        .map(|j| (0..h).map(|i| i * w + j).collect())
        .collect()
}

fn check_window_divisible(h: usize, w: usize, m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidConfig("window size must be positive".into()));
    }
    if !h.is_multiple_of(m) || !w.is_multiple_of(m) {
        return Err(Error::Indivisible(format!(
            "feature map {h}x{w} is not divisible by window size {m}"
        )));
    }
    Ok(())
}

/// Non-overlapping MxM windows in window-major order; within a window,
/// tokens appear in row-major order.
///
/// Window index of token (i,j) is `(i/M)*(W/M) + j/M`, its slot is
/// `(i%M)*M + j%M`.
pub fn window_regions(h: usize, w: usize, m: usize) -> Result<Vec<Vec<usize>>> {
    shifted_window_regions(h, w, m, 0, 0)
}

/// Window regions after displacing the partition lines down by `dy` and
/// right by `dx` on the torus. Equals rolling the feature map by
/// `(-dy, -dx)`, partitioning regularly, and mapping indices back, so the
/// zero-displacement case is bitwise identical to [`window_regions`].
pub fn shifted_window_regions(
    h: usize,
    w: usize,
    m: usize,
    dy: usize,
    dx: usize,
) -> Result<Vec<Vec<usize>>> {
    check_window_divisible(h, w, m)?;
    let mut regions = Vec::with_capacity((h / m) * (w / m));
    for wi in 0..h / m {
        for wj in 0..w / m {
            let mut region = Vec::with_capacity(m * m);
            for di in 0..m {
                for dj in 0..m {
                    let i = (wi * m + di + dy) % h;
                    let j = (wj * m + dj + dx) % w;
                    region.push(i * w + j);
                }
            }
            regions.push(region);
        }
    }
    Ok(regions)
}

/// Regroups `x[H,W,C]` into `[N, M*M, C]` window tensors.
pub fn window_partition(x: &Tensor, m: usize) -> Result<Tensor> {
    let (h, w, c) = x.dims3()?;
    let regions = window_regions(h, w, m)?;
    let n = regions.len();
    let mut data = Vec::with_capacity(x.numel());
    for region in &regions {
        for &tok in region {
            data.extend_from_slice(&x.data()[tok * c..(tok + 1) * c]);
        }
    }
    Tensor::new(&[n, m * m, c], data)
}

/// Inverse of [`window_partition`]; the round trip is bitwise identity.
pub fn window_reverse(windows: &Tensor, h: usize, w: usize, m: usize) -> Result<Tensor> {
    let (n, slots, c) = windows.dims3()?;
    let regions = window_regions(h, w, m)?;
    if n != regions.len() || slots != m * m {
        return Err(Error::ShapeMismatch(format!(
            "window tensor {:?} does not match {h}x{w} map with window {m}",
            windows.shape()
        )));
    }
    let mut data = vec![0.0; h * w * c];
    for (wi, region) in regions.iter().enumerate() {
        for (slot, &tok) in region.iter().enumerate() {
            let src = (wi * slots + slot) * c;
            data[tok * c..(tok + 1) * c].copy_from_slice(&windows.data()[src..src + c]);
        }
    }
    Tensor::new(&[h, w, c], data)
}

// ---------------------------------------------------------------------------
// Attention assembly on the tape.
// ---------------------------------------------------------------------------

fn project_qkv(tape: &mut Tape, x: Var, w: &AttentionVars) -> Result<(Var, Var, Var)> {
    let q = tape.matmul(x, w.wq)?;
    let q = tape.add_bias(q, w.bq)?;
    let k = tape.matmul(x, w.wk)?;
    let k = tape.add_bias(k, w.bk)?;
    let v = tape.matmul(x, w.wv)?;
    let v = tape.add_bias(v, w.bv)?;
    Ok((q, k, v))
}

/// Per-head attention restricted to each region, for the heads in `range`.
/// Regions must partition the token set. Output is `[n, |range| * d]` with
/// heads concatenated in ascending order.
fn group_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    range: Range<usize>,
    regions: &[Vec<usize>],
    head_dim: usize,
) -> Result<Var> {
    let n = tape.value(q).dims2()?.0;
    let mut scatter = vec![usize::MAX; n];
    let mut pos = 0;
    for region in regions {
        for &tok in region {
            scatter[tok] = pos;
            pos += 1;
        }
    }
    if pos != n || scatter.contains(&usize::MAX) {
        return Err(Error::InvalidConfig(
            "attention regions must partition the token set".into(),
        ));
    }
    let inv_sqrt_d = 1.0 / libm::sqrt(head_dim as f64);

    let mut head_outs = Vec::new();
    for head in range {
        let offset = head * head_dim;
        let qh = tape.slice_cols(q, offset, head_dim)?;
        let kh = tape.slice_cols(k, offset, head_dim)?;
        let vh = tape.slice_cols(v, offset, head_dim)?;
        let mut region_outs = Vec::with_capacity(regions.len());
        for region in regions {
            let qr = tape.gather_rows(qh, region.clone())?;
            let kr = tape.gather_rows(kh, region.clone())?;
            let vr = tape.gather_rows(vh, region.clone())?;
            let kt = tape.transpose(kr)?;
            let scores = tape.matmul(qr, kt)?;
            let scaled = tape.scale(scores, inv_sqrt_d)?;
            let probs = tape.softmax_rows(scaled)?;
            region_outs.push(tape.matmul(probs, vr)?);
        }
        let stacked = tape.concat_rows(&region_outs)?;
        head_outs.push(tape.gather_rows(stacked, scatter.clone())?);
    }
    tape.concat_cols(&head_outs)
}

fn check_tokens(tape: &Tape, x: Var, cfg: &AewinConfig, h: usize, w: usize) -> Result<()> {
    let (n, c) = tape.value(x).dims2()?;
    if n != h * w {
        return Err(Error::ShapeMismatch(format!(
            "expected {h}x{w}={} tokens, got {n}",
            h * w
        )));
    }
    if c != cfg.channels {
        return Err(Error::ShapeMismatch(format!(
            "expected {} channels, got {c}",
            cfg.channels
        )));
    }
    Ok(())
}

/// Horizontal-axis group over `[h*w, C]` tokens: the K/4 horizontal heads
/// attend within their 1xW stripe; output `[h*w, C/4]`.
pub fn horizontal_attention_tape(
    tape: &mut Tape,
    x: Var,
    weights: &AttentionVars,
    cfg: &AewinConfig,
    h: usize,
    w: usize,
) -> Result<Var> {
    check_tokens(tape, x, cfg, h, w)?;
    let (q, k, v) = project_qkv(tape, x, weights)?;
    group_attention(
        tape,
        q,
        k,
        v,
        cfg.horizontal_heads(),
        &row_regions(h, w),
        cfg.head_dim(),
    )
}

/// Vertical-axis group: transpose analogue of the horizontal group using
/// the second K/4 heads; output `[h*w, C/4]`.
pub fn vertical_attention_tape(
    tape: &mut Tape,
    x: Var,
    weights: &AttentionVars,
    cfg: &AewinConfig,
    h: usize,
    w: usize,
) -> Result<Var> {
    check_tokens(tape, x, cfg, h, w)?;
    let (q, k, v) = project_qkv(tape, x, weights)?;
    group_attention(
        tape,
        q,
        k,
        v,
        cfg.vertical_heads(),
        &col_regions(h, w),
        cfg.head_dim(),
    )
}

/// Window group: the K/2 window heads attend within each MxM window;
/// output `[h*w, C/2]`.
pub fn window_attention_tape(
    tape: &mut Tape,
    x: Var,
    weights: &AttentionVars,
    cfg: &AewinConfig,
    h: usize,
    w: usize,
) -> Result<Var> {
    check_tokens(tape, x, cfg, h, w)?;
    let (q, k, v) = project_qkv(tape, x, weights)?;
    let regions = window_regions(h, w, cfg.window)?;
    group_attention(tape, q, k, v, cfg.window_heads(), &regions, cfg.head_dim())
}

/// Parallel shifted window group: the first half of the window heads uses
/// the partition displaced right by the shift, the second half the partition
/// displaced down. No attention mask crosses the wrapped boundaries; the
/// axial groups already connect all windows. Output `[h*w, C/2]`.
pub fn psw_window_attention_tape(
    tape: &mut Tape,
    x: Var,
    weights: &AttentionVars,
    cfg: &AewinConfig,
    h: usize,
    w: usize,
) -> Result<Var> {
    check_tokens(tape, x, cfg, h, w)?;
    let (q, k, v) = project_qkv(tape, x, weights)?;
    psw_window_group(tape, q, k, v, cfg, h, w)
}

fn psw_window_group(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    cfg: &AewinConfig,
    h: usize,
    w: usize,
) -> Result<Var> {
    let win = cfg.window_heads();
    let half = (win.end - win.start) / 2;
    if half * 2 != win.end - win.start {
        return Err(Error::InvalidConfig(format!(
            "window head group of size {} cannot split into two shifted subgroups",
            win.end - win.start
        )));
    }
    let s = cfg.shift;
    let d = cfg.head_dim();
    let right = shifted_window_regions(h, w, cfg.window, 0, s)?;
    let down = shifted_window_regions(h, w, cfg.window, s, 0)?;
    let a = group_attention(tape, q, k, v, win.start..win.start + half, &right, d)?;
    let b = group_attention(tape, q, k, v, win.start + half..win.end, &down, d)?;
    tape.concat_cols(&[a, b])
}

/// Full AEWin attention: horizontal, vertical, and window group outputs
/// concatenated in head order, then the output projection. Shape-preserving.
pub fn aewin_forward_tape(
    tape: &mut Tape,
    x: Var,
    weights: &AttentionVars,
    cfg: &AewinConfig,
    h: usize,
    w: usize,
) -> Result<Var> {
    aewin_tape_inner(tape, x, weights, cfg, h, w, LayerKind::Regular)
}

/// AEWin with the parallel-shifted window partition for the window group;
/// the axial groups are unchanged.
pub fn psw_aewin_forward_tape(
    tape: &mut Tape,
    x: Var,
    weights: &AttentionVars,
    cfg: &AewinConfig,
    h: usize,
    w: usize,
) -> Result<Var> {
    aewin_tape_inner(tape, x, weights, cfg, h, w, LayerKind::Shifted)
}

pub(crate) fn aewin_tape_inner(
    tape: &mut Tape,
    x: Var,
    weights: &AttentionVars,
    cfg: &AewinConfig,
    h: usize,
    w: usize,
    kind: LayerKind,
) -> Result<Var> {
    check_tokens(tape, x, cfg, h, w)?;
    let (q, k, v) = project_qkv(tape, x, weights)?;
    let d = cfg.head_dim();
    let h_out = group_attention(tape, q, k, v, cfg.horizontal_heads(), &row_regions(h, w), d)?;
    let v_out = group_attention(tape, q, k, v, cfg.vertical_heads(), &col_regions(h, w), d)?;
    let w_out = match kind {
        LayerKind::Regular => {
            let regions = window_regions(h, w, cfg.window)?;
            group_attention(tape, q, k, v, cfg.window_heads(), &regions, d)?
        }
        LayerKind::Shifted => psw_window_group(tape, q, k, v, cfg, h, w)?,
    };
    let cat = tape.concat_cols(&[h_out, v_out, w_out])?;
    let o = tape.matmul(cat, weights.wo)?;
    tape.add_bias(o, weights.bo)
}

// ---------------------------------------------------------------------------
// Tensor-level entry points (scratch tape under the hood).
// ---------------------------------------------------------------------------

/// `softmax(q k^T / sqrt(d)) v` for one head over `t` tokens.
pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (tq, d) = q.dims2()?;
    if k.shape() != [tq, d] || v.shape() != [tq, d] {
        return Err(Error::ShapeMismatch(format!(
            "q/k/v must share [t,d], got {:?}/{:?}/{:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let kt = tensor::transpose2(k)?;
    let scores = tensor::matmul(q, &kt)?;
    let scaled = tensor::scale(&scores, 1.0 / libm::sqrt(d as f64))?;
    let probs = tensor::softmax_rows(&scaled)?;
    tensor::matmul(&probs, v)
}

fn run_attention<F>(
    x: &Tensor,
    weights: &AttentionWeights,
    cfg: &AewinConfig,
    f: F,
) -> Result<Tensor>
where
    F: FnOnce(&mut Tape, Var, &AttentionVars, usize, usize) -> Result<Var>,
{
    let (h, w, c) = x.dims3()?;
    if c != cfg.channels {
        return Err(Error::ShapeMismatch(format!(
            "input has {c} channels, config expects {}",
            cfg.channels
        )));
    }
    weights.validate(cfg.channels)?;
    let mut tape = Tape::new();
    let xv = tape.leaf(x.reshape(&[h * w, c])?);
    let wv = weights.leaf(&mut tape);
    let out = f(&mut tape, xv, &wv, h, w)?;
    let value = tape.value(out);
    let c_out = value.dims2()?.1;
    value.reshape(&[h, w, c_out])
}

/// Horizontal-axis self-attention over `x[H,W,C]`; output `[H,W,C/4]`.
pub fn horizontal_axis_attention(
    x: &Tensor,
    weights: &AttentionWeights,
    cfg: &AewinConfig,
) -> Result<Tensor> {
    run_attention(x, weights, cfg, |t, xv, wv, h, w| {
        horizontal_attention_tape(t, xv, wv, cfg, h, w)
    })
}

/// Vertical-axis self-attention over `x[H,W,C]`; output `[H,W,C/4]`.
pub fn vertical_axis_attention(
    x: &Tensor,
    weights: &AttentionWeights,
    cfg: &AewinConfig,
) -> Result<Tensor> {
    run_attention(x, weights, cfg, |t, xv, wv, h, w| {
        vertical_attention_tape(t, xv, wv, cfg, h, w)
    })
}

/// Windowed self-attention over `x[H,W,C]`; output `[H,W,C/2]`.
pub fn window_attention(
    x: &Tensor,
    weights: &AttentionWeights,
    cfg: &AewinConfig,
) -> Result<Tensor> {
    run_attention(x, weights, cfg, |t, xv, wv, h, w| {
        window_attention_tape(t, xv, wv, cfg, h, w)
    })
}

/// Parallel shifted windowed self-attention over `x[H,W,C]`; output
/// `[H,W,C/2]`. With shift 0 this is bitwise equal to [`window_attention`].
pub fn psw_window_attention(
    x: &Tensor,
    weights: &AttentionWeights,
    cfg: &AewinConfig,
) -> Result<Tensor> {
    run_attention(x, weights, cfg, |t, xv, wv, h, w| {
        psw_window_attention_tape(t, xv, wv, cfg, h, w)
    })
}

/// Full AEWin self-attention over `x[H,W,C]`; shape-preserving.
pub fn aewin_forward(x: &Tensor, weights: &AttentionWeights, cfg: &AewinConfig) -> Result<Tensor> {
    run_attention(x, weights, cfg, |t, xv, wv, h, w| {
        aewin_forward_tape(t, xv, wv, cfg, h, w)
    })
}

/// AEWin with parallel shifted windows over `x[H,W,C]`; shape-preserving.
pub fn psw_aewin_forward(
    x: &Tensor,
    weights: &AttentionWeights,
    cfg: &AewinConfig,
) -> Result<Tensor> {
    run_attention(x, weights, cfg, |t, xv, wv, h, w| {
        psw_aewin_forward_tape(t, xv, wv, cfg, h, w)
    })
}

// ---------------------------------------------------------------------------
// Reachability analysis.
// ---------------------------------------------------------------------------

/// Adjacency of one AEWin layer: the union of the row mask, the column
/// mask, and the (shifted) window masks the layer's head groups realize.
pub fn layer_adjacency(
    h: usize,
    w: usize,
    window: usize,
    shift: usize,
    kind: LayerKind,
) -> Result<AttentionMask> {
    let rows = oracle::row_mask(h, w);
    let cols = oracle::col_mask(h, w);
    let axial = rows.union(&cols)?;
    match kind {
        LayerKind::Regular => axial.union(&oracle::window_mask(h, w, window)?),
        LayerKind::Shifted => {
            let right = oracle::shifted_window_mask(h, w, window, 0, shift)?;
            let down = oracle::shifted_window_mask(h, w, window, shift, 0)?;
            axial.union(&right)?.union(&down)
        }
    }
}

/// Which token pairs can influence each other across a stack of layers:
/// the boolean matrix product of the per-layer adjacencies.
pub fn attention_reachability(
    h: usize,
    w: usize,
    window: usize,
    shift: usize,
    layers: &[LayerKind],
) -> Result<AttentionMask> {
    if layers.is_empty() {
        return Err(Error::InvalidConfig(
            "reachability of an empty stack".into(),
        ));
    }
    let mut reach = layer_adjacency(h, w, window, shift, layers[0])?;
    for &kind in &layers[1..] {
        let adj = layer_adjacency(h, w, window, shift, kind)?;
        reach = adj.compose(&reach)?;
    }
    Ok(reach)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn randn(seed: u64, shape: &[usize]) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.sample(StandardNormal))
    }

    #[test]
    fn config_validation() {
        assert!(AewinConfig::new(8, 4, 2).is_ok());
        assert!(AewinConfig::new(8, 3, 2).is_err()); // heads not multiple of 4
        assert!(AewinConfig::new(10, 4, 2).is_err()); // channels not divisible
        assert!(AewinConfig::new(8, 4, 0).is_err());
        let cfg = AewinConfig::new(16, 8, 7).unwrap();
        assert_eq!(cfg.shift(), 3);
        assert_eq!(cfg.head_dim(), 2);
    }

    #[test]
    fn head_groups_follow_the_quarter_split() {
        let cfg = AewinConfig::new(16, 8, 2).unwrap();
        let groups: Vec<HeadGroup> = (0..8).map(|k| cfg.head_group(k)).collect();
        assert_eq!(&groups[0..2], &[HeadGroup::Horizontal; 2]);
        assert_eq!(&groups[2..4], &[HeadGroup::Vertical; 2]);
        assert_eq!(&groups[4..8], &[HeadGroup::Window; 4]);
    }

    #[test]
    fn window_index_arithmetic() {
        // 4x4, M=2: token (2,3) belongs to window 3, slot 1
        let regions = window_regions(4, 4, 2).unwrap();
        assert_eq!(regions.len(), 4);
        let token = 2 * 4 + 3;
        assert_eq!(regions[3][1], token);
    }

    #[test]
    fn single_window_covers_all_tokens_in_row_major_order() {
        let regions = window_regions(3, 3, 3).unwrap();
        assert_eq!(regions, vec![(0..9).collect::<Vec<_>>()]);
    }

    #[test]
    fn window_partition_errors_on_indivisible_maps() {
        let x = Tensor::zeros(&[5, 4, 2]);
        assert!(matches!(
            window_partition(&x, 2),
            Err(Error::Indivisible(_))
        ));
    }

    #[test]
    fn shifted_regions_wrap_on_the_torus() {
        // 4x4, M=2, partition displaced right by 1: column groups {1,2} and {3,0}
        let regions = shifted_window_regions(4, 4, 2, 0, 1).unwrap();
        // window 0 covers rows {0,1} x cols {1,2}
        assert_eq!(regions[0], vec![1, 2, 4 + 1, 4 + 2]);
        // window 1 covers rows {0,1} x cols {3,0} (wrapped)
        assert_eq!(regions[1], vec![3, 0, 4 + 3, 4]);
    }

    #[test]
    fn zero_displacement_is_the_regular_partition() {
        assert_eq!(
            shifted_window_regions(8, 4, 2, 0, 0).unwrap(),
            window_regions(8, 4, 2).unwrap()
        );
    }

    #[test]
    fn scaled_dot_attention_singleton_returns_v() {
        let q = randn(1, &[1, 3]);
        let k = randn(2, &[1, 3]);
        let v = randn(3, &[1, 3]);
        let out = scaled_dot_attention(&q, &k, &v).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn scaled_dot_attention_uniform_tokens() {
        // all tokens identical: softmax is uniform, each output row equals v's row
        let row = randn(4, &[1, 2]);
        let rep = |t: &Tensor| Tensor::from_fn(&[3, 2], |i| t.data()[i % 2]);
        let out = scaled_dot_attention(&rep(&row), &rep(&row), &rep(&row)).unwrap();
        for r in 0..3 {
            for c in 0..2 {
                assert!((out.at(&[r, c]) - row.data()[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scaled_dot_attention_matches_three_step_oracle() {
        let q = randn(5, &[3, 2]);
        let k = randn(6, &[3, 2]);
        let v = randn(7, &[3, 2]);
        let out = scaled_dot_attention(&q, &k, &v).unwrap();
        // hand-rolled: scores, softmax, mix
        let scale = 1.0 / (2.0f64).sqrt();
        for i in 0..3 {
            let mut scores = [0.0; 3];
            for j in 0..3 {
                let mut dot = 0.0;
                for d in 0..2 {
                    dot += q.at(&[i, d]) * k.at(&[j, d]);
                }
                scores[j] = dot * scale;
            }
            let max = scores.iter().cloned().fold(f64::MIN, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            for d in 0..2 {
                let mut acc = 0.0;
                for j in 0..3 {
                    acc += exps[j] / total * v.at(&[j, d]);
                }
                assert!((out.at(&[i, d]) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn horizontal_single_row_equals_global_per_head() {
        // H=1: one stripe holding all W tokens
        let cfg = AewinConfig::new(8, 4, 1).unwrap();
        let x = randn(8, &[1, 5, 8]);
        let weights = AttentionWeights::random(8, 9);
        let out = horizontal_axis_attention(&x, &weights, &cfg).unwrap();
        assert_eq!(out.shape(), &[1, 5, 2]);

        let tokens = x.reshape(&[5, 8]).unwrap();
        let d = cfg.head_dim();
        let head = weights.head_projection(0, d);
        let q = tensor::add_bias(&tensor::matmul(&tokens, &head.wq).unwrap(), &head.bq).unwrap();
        let k = tensor::add_bias(&tensor::matmul(&tokens, &head.wk).unwrap(), &head.bk).unwrap();
        let v = tensor::add_bias(&tensor::matmul(&tokens, &head.wv).unwrap(), &head.bv).unwrap();
        let expect = scaled_dot_attention(&q, &k, &v).unwrap();
        let got = out.reshape(&[5, 2]).unwrap();
        assert!(got.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn width_one_map_attends_only_to_itself_horizontally() {
        let cfg = AewinConfig::new(8, 4, 1).unwrap();
        let x = randn(10, &[4, 1, 8]);
        let weights = AttentionWeights::random(8, 11);
        let out = horizontal_axis_attention(&x, &weights, &cfg).unwrap();
        // each stripe holds a single token: output is that token's v-projection
        let tokens = x.reshape(&[4, 8]).unwrap();
        let head = weights.head_projection(0, 2);
        let v = tensor::add_bias(&tensor::matmul(&tokens, &head.wv).unwrap(), &head.bv).unwrap();
        assert!(out.reshape(&[4, 2]).unwrap().max_abs_diff(&v) < 1e-12);
    }

    #[test]
    fn vertical_is_the_transpose_of_horizontal_with_swapped_head_weights() {
        let cfg = AewinConfig::new(8, 4, 2).unwrap();
        let x = randn(12, &[3, 5, 8]);
        let weights = AttentionWeights::random(8, 13);
        let vert = vertical_axis_attention(&x, &weights, &cfg).unwrap();

        // transpose the map, move the vertical head's columns into the
        // horizontal slot, run horizontally, transpose back
        let (h, w, c) = x.dims3().unwrap();
        let xt = Tensor::from_fn(&[w, h, c], |i| {
            let ch = i % c;
            let pos = i / c;
            let (j, ii) = (pos / h, pos % h);
            x.at(&[ii, j, ch])
        });
        let d = cfg.head_dim();
        let mut swapped = weights.clone();
        for (dst, src) in [
            (&mut swapped.wq, &weights.wq),
            (&mut swapped.wk, &weights.wk),
            (&mut swapped.wv, &weights.wv),
        ] {
            let mut t = src.clone();
            for row in 0..c {
                for col in 0..d {
                    // horizontal head 0 columns [0,d) take the vertical head's [d,2d)
                    t.data_mut()[row * c + col] = src.data()[row * c + d + col];
                }
            }
            *dst = t;
        }
        for (dst, src) in [
            (&mut swapped.bq, &weights.bq),
            (&mut swapped.bk, &weights.bk),
            (&mut swapped.bv, &weights.bv),
        ] {
            let mut t = src.clone();
            for col in 0..d {
                t.data_mut()[col] = src.data()[d + col];
            }
            *dst = t;
        }
        let horiz_t = horizontal_axis_attention(&xt, &swapped, &cfg).unwrap();
        let back = Tensor::from_fn(&[h, w, d], |i| {
            let ch = i % d;
            let pos = i / d;
            let (ii, j) = (pos / w, pos % w);
            horiz_t.at(&[j, ii, ch])
        });
        assert!(vert.max_abs_diff(&back) < 1e-12);
    }

    #[test]
    fn window_size_one_is_a_v_projection() {
        let cfg = AewinConfig::new(8, 4, 1).unwrap();
        let x = randn(14, &[3, 4, 8]);
        let weights = AttentionWeights::random(8, 15);
        let out = window_attention(&x, &weights, &cfg).unwrap();
        assert_eq!(out.shape(), &[3, 4, 4]);
        let tokens = x.reshape(&[12, 8]).unwrap();
        let d = cfg.head_dim();
        for (slot, head) in (2..4).enumerate() {
            let hp = weights.head_projection(head, d);
            let v = tensor::add_bias(&tensor::matmul(&tokens, &hp.wv).unwrap(), &hp.bv).unwrap();
            for t in 0..12 {
                for ch in 0..d {
                    let got = out.data()[t * 4 + slot * d + ch];
                    assert!((got - v.at(&[t, ch])).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn psw_with_zero_shift_is_bitwise_regular() {
        let cfg = AewinConfig::new(8, 4, 2).unwrap().with_shift(0);
        let x = randn(16, &[4, 4, 8]);
        let weights = AttentionWeights::random(8, 17);
        let regular = window_attention(&x, &weights, &cfg).unwrap();
        let shifted = psw_window_attention(&x, &weights, &cfg).unwrap();
        assert_eq!(regular, shifted);

        let full_r = aewin_forward(&x, &weights, &cfg).unwrap();
        let full_s = psw_aewin_forward(&x, &weights, &cfg).unwrap();
        assert_eq!(full_r, full_s);
    }

    #[test]
    fn constant_input_stays_constant_under_psw() {
        let cfg = AewinConfig::new(8, 4, 2).unwrap();
        let x = Tensor::from_fn(&[4, 4, 8], |i| ((i % 8) as f64) * 0.1 - 0.3);
        let weights = AttentionWeights::random(8, 19);
        let out = psw_aewin_forward(&x, &weights, &cfg).unwrap();
        for t in 1..16 {
            for ch in 0..8 {
                assert!((out.data()[t * 8 + ch] - out.data()[ch]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn aewin_output_constant_over_space_with_identity_wo() {
        let cfg = AewinConfig::new(8, 4, 2).unwrap();
        let mut weights = AttentionWeights::random(8, 21);
        weights.wo = Tensor::from_fn(&[8, 8], |i| if i / 8 == i % 8 { 1.0 } else { 0.0 });
        weights.bo = Tensor::zeros(&[8]);
        let x = Tensor::from_fn(&[4, 4, 8], |i| ((i % 8) as f64) * 0.2 - 0.7);
        let out = aewin_forward(&x, &weights, &cfg).unwrap();
        for t in 1..16 {
            for ch in 0..8 {
                assert!((out.data()[t * 8 + ch] - out.data()[ch]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn aewin_preserves_shape_across_random_configs() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let heads = 4 * rng.gen_range(1..3usize);
            let d = rng.gen_range(1..4usize);
            let c = heads * d;
            let m = [1, 2, 4][rng.gen_range(0..3usize)];
            let h = m * rng.gen_range(1..3usize);
            let w = m * rng.gen_range(1..3usize);
            let cfg = AewinConfig::new(c, heads, m).unwrap();
            let x = randn(rng.gen(), &[h, w, c]);
            let weights = AttentionWeights::random(c, rng.gen());
            let out = aewin_forward(&x, &weights, &cfg).unwrap();
            assert_eq!(out.shape(), &[h, w, c]);
            let out = psw_aewin_forward(&x, &weights, &cfg).unwrap();
            assert_eq!(out.shape(), &[h, w, c]);
        }
    }

    #[test]
    fn window_attention_is_roll_equivariant_in_window_multiples() {
        let cfg = AewinConfig::new(8, 4, 2).unwrap();
        let x = randn(25, &[6, 4, 8]);
        let weights = AttentionWeights::random(8, 26);
        let base = window_attention(&x, &weights, &cfg).unwrap();
        let rolled_in = tensor::cyclic_roll(&x, 2, 0).unwrap();
        let from_rolled = window_attention(&rolled_in, &weights, &cfg).unwrap();
        let rolled_out = tensor::cyclic_roll(&base, 2, 0).unwrap();
        assert!(from_rolled.max_abs_diff(&rolled_out) < 1e-12);
    }

    #[test]
    fn reachability_single_window_is_complete_after_one_layer() {
        let reach = attention_reachability(2, 2, 2, 1, &[LayerKind::Regular]).unwrap();
        assert!(reach.is_all_true());
    }

    #[test]
    fn reachability_two_layers_is_complete_for_any_mix() {
        use LayerKind::{Regular, Shifted};
        for kinds in [
            [Regular, Regular],
            [Regular, Shifted],
            [Shifted, Regular],
            [Shifted, Shifted],
        ] {
            let reach = attention_reachability(8, 8, 2, 1, &kinds).unwrap();
            assert!(reach.is_all_true(), "{kinds:?}");
        }
    }

    #[test]
    fn reachability_one_layer_from_corner() {
        // row 0 (4 tokens) + column 0 (3 more) + window {(1,1)}: 8 of 16.
        // 4 + 4 + 4 double-counts (0,0) twice and (0,1)/(1,0) once each.
        let reach = attention_reachability(4, 4, 2, 1, &[LayerKind::Regular]).unwrap();
        let reached: Vec<usize> = (0..16).filter(|&q| reach.allowed(0, q)).collect();
        assert_eq!(reached, vec![0, 1, 2, 3, 4, 5, 8, 12]);
    }

    proptest! {
        #[test]
        fn window_round_trip_is_bitwise_identity(
            hw in 1usize..4, ww in 1usize..4, m in 1usize..3, seed in 0u64..256
        ) {
            let h = hw * m;
            let w = ww * m;
            let x = randn(seed, &[h, w, 3]);
            let parts = window_partition(&x, m).unwrap();
            let back = window_reverse(&parts, h, w, m).unwrap();
            prop_assert_eq!(back.data(), x.data());
        }

        #[test]
        fn roll_then_inverse_roll_is_identity(
            h in 1usize..6, w in 1usize..6, dy in -8i64..8, dx in -8i64..8, seed in 0u64..64
        ) {
            let x = randn(seed, &[h, w, 2]);
            let rolled = tensor::cyclic_roll(&x, dy, dx).unwrap();
            let back = tensor::cyclic_roll(&rolled, -dy, -dx).unwrap();
            prop_assert_eq!(back.data(), x.data());
        }
    }
}
