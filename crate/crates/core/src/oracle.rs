//! Brute-force reference: dense masked global attention plus the mask
//! constructors for rows, columns, windows, and shifted windows on the
//! torus. Everything here enumerates token pairs directly and is the ground
//! truth the grouped attention paths are checked against.
//!
//! Token ordering is row-major over (i, j) everywhere.

use alloc::{format, vec, vec::Vec};

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Boolean (H*W)x(H*W) matrix: `allowed(p, q)` says token `p` may attend to
/// token `q`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    n: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn new_false(n: usize) -> Self {
        AttentionMask {
            n,
            allowed: vec![false; n * n],
        }
    }

    pub fn new_true(n: usize) -> Self {
        AttentionMask {
            n,
            allowed: vec![true; n * n],
        }
    }

    /// Identity mask: every token attends only to itself.
    pub fn identity(n: usize) -> Self {
        let mut mask = Self::new_false(n);
        for p in 0..n {
            mask.set(p, p, true);
        }
        mask
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn allowed(&self, p: usize, q: usize) -> bool {
        self.allowed[p * self.n + q]
    }

    pub fn set(&mut self, p: usize, q: usize, value: bool) {
        self.allowed[p * self.n + q] = value;
    }

    pub fn row_count(&self, p: usize) -> usize {
        self.allowed[p * self.n..(p + 1) * self.n]
            .iter()
            .filter(|&&b| b)
            .count()
    }

    pub fn is_all_true(&self) -> bool {
        self.allowed.iter().all(|&b| b)
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|p| (0..self.n).all(|q| self.allowed(p, q) == self.allowed(q, p)))
    }

    pub fn diagonal_all_true(&self) -> bool {
        (0..self.n).all(|p| self.allowed(p, p))
    }

    /// Elementwise OR.
    pub fn union(&self, other: &AttentionMask) -> Result<AttentionMask> {
        if self.n != other.n {
            return Err(Error::ShapeMismatch(format!(
                "mask sizes differ: {} vs {}",
                self.n, other.n
            )));
        }
        let allowed = self
            .allowed
            .iter()
            .zip(&other.allowed)
            .map(|(a, b)| *a || *b)
            .collect();
        Ok(AttentionMask { n: self.n, allowed })
    }

    /// Boolean matrix product: `(self.compose(other))(p, q)` holds when some
    /// token `r` satisfies `self(p, r)` and `other(r, q)`.
    pub fn compose(&self, other: &AttentionMask) -> Result<AttentionMask> {
        if self.n != other.n {
            return Err(Error::ShapeMismatch(format!(
                "mask sizes differ: {} vs {}",
                self.n, other.n
            )));
        }
        let n = self.n;
        let mut out = AttentionMask::new_false(n);
        for p in 0..n {
            for r in 0..n {
                if self.allowed(p, r) {
                    for q in 0..n {
                        if other.allowed(r, q) {
                            out.set(p, q, true);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Union of an arbitrary mask list.
pub fn mask_union(masks: &[&AttentionMask]) -> Result<AttentionMask> {
    let first = masks
        .first()
        .ok_or_else(|| Error::InvalidConfig("union of an empty mask list".into()))?;
    let mut acc = (*first).clone();
    for m in &masks[1..] {
        acc = acc.union(m)?;
    }
    Ok(acc)
}

/// `steps`-fold boolean matrix power of an adjacency. Masks here keep the
/// diagonal true, so higher powers only ever add reachability.
pub fn reachability_closure(adjacency: &AttentionMask, steps: usize) -> Result<AttentionMask> {
    if steps == 0 {
        return Err(Error::InvalidConfig(
            "closure needs at least one step".into(),
        ));
    }
    let mut reach = adjacency.clone();
    for _ in 1..steps {
        reach = adjacency.compose(&reach)?;
    }
    Ok(reach)
}

/// Tokens on the same feature-map row may attend to each other.
pub fn row_mask(h: usize, w: usize) -> AttentionMask {
    let n = h * w;
    let mut mask = AttentionMask::new_false(n);
    for p in 0..n {
        for q in 0..n {
            if p / w == q / w {
                mask.set(p, q, true);
            }
        }
    }
    mask
}

/// Tokens on the same feature-map column may attend to each other.
pub fn col_mask(h: usize, w: usize) -> AttentionMask {
    let n = h * w;
    let mut mask = AttentionMask::new_false(n);
    for p in 0..n {
        for q in 0..n {
            if p % w == q % w {
                mask.set(p, q, true);
            }
        }
    }
    mask
}

/// Tokens in the same MxM window may attend to each other.
pub fn window_mask(h: usize, w: usize, m: usize) -> Result<AttentionMask> {
    shifted_window_mask(h, w, m, 0, 0)
}

/// Window mask after displacing the partition lines down by `dy` and right
/// by `dx`, grouping with wrap-around on the torus.
pub fn shifted_window_mask(
    h: usize,
    w: usize,
    m: usize,
    dy: usize,
    dx: usize,
) -> Result<AttentionMask> {
    if m == 0 {
        return Err(Error::InvalidConfig("window size must be positive".into()));
    }
    if !h.is_multiple_of(m) || !w.is_multiple_of(m) {
        return Err(Error::Indivisible(format!(
            "grid {h}x{w} is not divisible by window size {m}"
        )));
    }
    let n = h * w;
    let group = |p: usize| {
        let (i, j) = (p / w, p % w);
        let gi = ((i + h - dy % h) % h) / m;
        let gj = ((j + w - dx % w) % w) / m;
        gi * (w / m) + gj
    };
    let mut mask = AttentionMask::new_false(n);
    for p in 0..n {
        for q in 0..n {
            if group(p) == group(q) {
                mask.set(p, q, true);
            }
        }
    }
    Ok(mask)
}

/// Dense masked global attention for one head: `q k^T / sqrt(d)` with
/// disallowed entries forced to the most negative finite score, softmax,
/// then explicit zeroing of disallowed positions.
///
/// The exp of a masked score underflows to exactly 0.0, so zeroing does not
/// change allowed weights and the all-true mask reproduces unmasked
/// attention bitwise.
pub fn masked_global_attention(
    x: &Tensor,
    head: &crate::attention::HeadProjection,
    mask: &AttentionMask,
) -> Result<Tensor> {
    let (n, _c) = x.dims2()?;
    if mask.n() != n {
        return Err(Error::ShapeMismatch(format!(
            "mask is over {} tokens but input has {n}",
            mask.n()
        )));
    }
    for p in 0..n {
        if mask.row_count(p) == 0 {
            return Err(Error::EmptyMaskRow(p));
        }
    }
    let d = head.wq.dims2()?.1;
    let q = tensor::add_bias(&tensor::matmul(x, &head.wq)?, &head.bq)?;
    let k = tensor::add_bias(&tensor::matmul(x, &head.wk)?, &head.bk)?;
    let v = tensor::add_bias(&tensor::matmul(x, &head.wv)?, &head.bv)?;

    let kt = tensor::transpose2(&k)?;
    let scores = tensor::matmul(&q, &kt)?;
    let mut scaled = tensor::scale(&scores, 1.0 / libm::sqrt(d as f64))?;
    for p in 0..n {
        for t in 0..n {
            if !mask.allowed(p, t) {
                scaled.data_mut()[p * n + t] = f64::MIN;
            }
        }
    }
    let mut probs = tensor::softmax_rows(&scaled)?;
    for p in 0..n {
        for t in 0..n {
            if !mask.allowed(p, t) {
                probs.data_mut()[p * n + t] = 0.0;
            }
        }
    }
    tensor::matmul(&probs, &v)
}
