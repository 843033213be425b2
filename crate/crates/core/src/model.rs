//! The hierarchical AEWin backbone: patch embedding, conditional positional
//! encoding, AEWin blocks alternating regular and parallel-shifted window
//! partitions, patch merging across four stages, and a pooled classifier
//! head.
//!
//! Stage s halves the spatial extent of stage s-1 (the embedding divides by
//! four) and doubles the channel width, so a HxW input walks the chain
//! (H/4,W/4,C) -> (H/8,W/8,2C) -> (H/16,W/16,4C) -> (H/32,W/32,8C).

use alloc::{format, string::String, vec::Vec};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::attention::{aewin_tape_inner, AewinConfig, AttentionVars, AttentionWeights, LayerKind};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Standard deviation of the truncated-normal weight init.
pub const INIT_STD: f64 = 0.02;

/// One stage of the backbone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageSpec {
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    pub window: usize,
}

/// Four-stage backbone description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub name: String,
    pub stages: [StageSpec; 4],
    pub patch_size: usize,
    pub num_classes: usize,
    pub mlp_ratio: usize,
}

impl ModelSpec {
    pub fn from_arrays(
        name: &str,
        dims: [usize; 4],
        depths: [usize; 4],
        heads: [usize; 4],
        window: usize,
        num_classes: usize,
    ) -> Self {
        let stage = |i: usize| StageSpec {
            depth: depths[i],
            dim: dims[i],
            heads: heads[i],
            window,
        };
        ModelSpec {
            name: name.into(),
            stages: [stage(0), stage(1), stage(2), stage(3)],
            patch_size: 4,
            num_classes,
            mlp_ratio: 4,
        }
    }

    /// Tiny variant: base dim 64, depths 2,2,16,2, heads 4,4,8,16.
    pub fn aewin_t() -> Self {
        Self::from_arrays(
            "aewin-t",
            [64, 128, 256, 512],
            [2, 2, 16, 2],
            [4, 4, 8, 16],
            7,
            1000,
        )
    }

    /// Base variant: base dim 96, heads 4,8,16,32. The stage-3 depth is 32,
    /// which lands on the 77M-parameter / 14.6G-FLOPs budget this variant
    /// is sized for.
    pub fn aewin_b() -> Self {
        Self::from_arrays(
            "aewin-b",
            [96, 192, 384, 768],
            [2, 4, 32, 2],
            [4, 8, 16, 32],
            7,
            1000,
        )
    }

    /// Desk-scale variant for the synthetic three-class task at 32x32.
    pub fn aewin_toy() -> Self {
        Self::from_arrays(
            "aewin-toy",
            [8, 16, 32, 64],
            [2, 2, 2, 2],
            [4, 4, 4, 4],
            2,
            3,
        )
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "aewin-t" => Some(Self::aewin_t()),
            "aewin-b" => Some(Self::aewin_b()),
            "aewin-toy" => Some(Self::aewin_toy()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size != 4 {
            return Err(Error::InvalidConfig(format!(
                "patch size must be 4, got {}",
                self.patch_size
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::InvalidConfig("num_classes must be positive".into()));
        }
        if self.mlp_ratio == 0 {
            return Err(Error::InvalidConfig("mlp_ratio must be positive".into()));
        }
        for (i, stage) in self.stages.iter().enumerate() {
            if stage.depth == 0 {
                return Err(Error::InvalidConfig(format!("stage {i} has zero depth")));
            }
            // constructing the config checks heads % 4 and dim % heads
            AewinConfig::new(stage.dim, stage.heads, stage.window)?;
        }
        for i in 0..3 {
            if self.stages[i + 1].dim != 2 * self.stages[i].dim {
                return Err(Error::InvalidConfig(format!(
                    "stage {} dim {} must double stage {i} dim {}",
                    i + 1,
                    self.stages[i + 1].dim,
                    self.stages[i].dim
                )));
            }
        }
        Ok(())
    }

    fn patch_vector_len(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }
}

// ---------------------------------------------------------------------------
// Parameters.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl NormParams {
    fn unit(c: usize) -> Self {
        NormParams {
            gamma: Tensor::from_fn(&[c], |_| 1.0),
            beta: Tensor::zeros(&[c]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub fc1: Tensor,
    pub b1: Tensor,
    pub fc2: Tensor,
    pub b2: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub cpe_kernels: Tensor,
    pub norm1: NormParams,
    pub attn: AttentionWeights,
    pub norm2: NormParams,
    pub mlp: MlpParams,
}

impl BlockParams {
    pub fn zeros(dim: usize, mlp_ratio: usize) -> Self {
        BlockParams {
            cpe_kernels: Tensor::zeros(&[3, 3, dim]),
            norm1: NormParams {
                gamma: Tensor::zeros(&[dim]),
                beta: Tensor::zeros(&[dim]),
            },
            attn: AttentionWeights::zeros(dim),
            norm2: NormParams {
                gamma: Tensor::zeros(&[dim]),
                beta: Tensor::zeros(&[dim]),
            },
            mlp: MlpParams {
                fc1: Tensor::zeros(&[dim, mlp_ratio * dim]),
                b1: Tensor::zeros(&[mlp_ratio * dim]),
                fc2: Tensor::zeros(&[mlp_ratio * dim, dim]),
                b2: Tensor::zeros(&[dim]),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeParams {
    pub norm: NormParams,
    pub reduction: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbedParams {
    pub proj: Tensor,
    pub bias: Tensor,
    pub norm: NormParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub norm: NormParams,
    pub fc: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageParams {
    pub merge: Option<MergeParams>,
    pub blocks: Vec<BlockParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub patch_embed: PatchEmbedParams,
    pub stages: Vec<StageParams>,
    pub head: HeadParams,
}

/// Truncated-normal weights (sigma 0.02, clipped at two sigma) for every
/// projection, zeros for biases, ones/zeros for norm affines. The same seed
/// always yields bitwise-identical parameters.
pub fn init_weights(spec: &ModelSpec, seed: u64) -> Result<ModelParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trunc = |shape: &[usize]| {
        Tensor::from_fn(shape, |_| loop {
            let z: f64 = StandardNormal.sample(&mut rng);
            if z.abs() <= 2.0 {
                return INIT_STD * z;
            }
        })
    };

    let c1 = spec.stages[0].dim;
    let patch_embed = PatchEmbedParams {
        proj: trunc(&[spec.patch_vector_len(), c1]),
        bias: Tensor::zeros(&[c1]),
        norm: NormParams::unit(c1),
    };

    let mut stages = Vec::with_capacity(4);
    for (s, stage) in spec.stages.iter().enumerate() {
        let c = stage.dim;
        let merge = if s == 0 {
            None
        } else {
            let c_prev = spec.stages[s - 1].dim;
            Some(MergeParams {
                norm: NormParams::unit(4 * c_prev),
                reduction: trunc(&[4 * c_prev, c]),
                bias: Tensor::zeros(&[c]),
            })
        };
        let mut blocks = Vec::with_capacity(stage.depth);
        for _ in 0..stage.depth {
            blocks.push(BlockParams {
                cpe_kernels: trunc(&[3, 3, c]),
                norm1: NormParams::unit(c),
                attn: AttentionWeights {
                    wq: trunc(&[c, c]),
                    wk: trunc(&[c, c]),
                    wv: trunc(&[c, c]),
                    wo: trunc(&[c, c]),
                    bq: Tensor::zeros(&[c]),
                    bk: Tensor::zeros(&[c]),
                    bv: Tensor::zeros(&[c]),
                    bo: Tensor::zeros(&[c]),
                },
                norm2: NormParams::unit(c),
                mlp: MlpParams {
                    fc1: trunc(&[c, spec.mlp_ratio * c]),
                    b1: Tensor::zeros(&[spec.mlp_ratio * c]),
                    fc2: trunc(&[spec.mlp_ratio * c, c]),
                    b2: Tensor::zeros(&[c]),
                },
            });
        }
        stages.push(StageParams { merge, blocks });
    }

    let c4 = spec.stages[3].dim;
    let head = HeadParams {
        norm: NormParams::unit(c4),
        fc: trunc(&[c4, spec.num_classes]),
        bias: Tensor::zeros(&[spec.num_classes]),
    };

    Ok(ModelParams {
        spec: spec.clone(),
        patch_embed,
        stages,
        head,
    })
}

impl ModelParams {
    /// Canonical (name, tensor) listing. Order is stable and shared with
    /// [`ModelVars::ordered`], the weight container, and the optimizer.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        out.push(("patch_embed.proj".into(), &self.patch_embed.proj));
        out.push(("patch_embed.bias".into(), &self.patch_embed.bias));
        out.push((
            "patch_embed.norm.gamma".into(),
            &self.patch_embed.norm.gamma,
        ));
        out.push(("patch_embed.norm.beta".into(), &self.patch_embed.norm.beta));
        for (s, stage) in self.stages.iter().enumerate() {
            if let Some(merge) = &stage.merge {
                out.push((format!("stage{s}.merge.norm.gamma"), &merge.norm.gamma));
                out.push((format!("stage{s}.merge.norm.beta"), &merge.norm.beta));
                out.push((format!("stage{s}.merge.reduction"), &merge.reduction));
                out.push((format!("stage{s}.merge.bias"), &merge.bias));
            }
            for (b, block) in stage.blocks.iter().enumerate() {
                let p = format!("stage{s}.block{b}");
                out.push((format!("{p}.cpe"), &block.cpe_kernels));
                out.push((format!("{p}.norm1.gamma"), &block.norm1.gamma));
                out.push((format!("{p}.norm1.beta"), &block.norm1.beta));
                out.push((format!("{p}.attn.wq"), &block.attn.wq));
                out.push((format!("{p}.attn.bq"), &block.attn.bq));
                out.push((format!("{p}.attn.wk"), &block.attn.wk));
                out.push((format!("{p}.attn.bk"), &block.attn.bk));
                out.push((format!("{p}.attn.wv"), &block.attn.wv));
                out.push((format!("{p}.attn.bv"), &block.attn.bv));
                out.push((format!("{p}.attn.wo"), &block.attn.wo));
                out.push((format!("{p}.attn.bo"), &block.attn.bo));
                out.push((format!("{p}.norm2.gamma"), &block.norm2.gamma));
                out.push((format!("{p}.norm2.beta"), &block.norm2.beta));
                out.push((format!("{p}.mlp.fc1"), &block.mlp.fc1));
                out.push((format!("{p}.mlp.b1"), &block.mlp.b1));
                out.push((format!("{p}.mlp.fc2"), &block.mlp.fc2));
                out.push((format!("{p}.mlp.b2"), &block.mlp.b2));
            }
        }
        out.push(("head.norm.gamma".into(), &self.head.norm.gamma));
        out.push(("head.norm.beta".into(), &self.head.norm.beta));
        out.push(("head.fc".into(), &self.head.fc));
        out.push(("head.bias".into(), &self.head.bias));
        out
    }

    /// Mutable variant of [`ModelParams::named`], same order.
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        out.push(("patch_embed.proj".into(), &mut self.patch_embed.proj));
        out.push(("patch_embed.bias".into(), &mut self.patch_embed.bias));
        out.push((
            "patch_embed.norm.gamma".into(),
            &mut self.patch_embed.norm.gamma,
        ));
        out.push((
            "patch_embed.norm.beta".into(),
            &mut self.patch_embed.norm.beta,
        ));
        for (s, stage) in self.stages.iter_mut().enumerate() {
            if let Some(merge) = &mut stage.merge {
                out.push((format!("stage{s}.merge.norm.gamma"), &mut merge.norm.gamma));
                out.push((format!("stage{s}.merge.norm.beta"), &mut merge.norm.beta));
                out.push((format!("stage{s}.merge.reduction"), &mut merge.reduction));
                out.push((format!("stage{s}.merge.bias"), &mut merge.bias));
            }
            for (b, block) in stage.blocks.iter_mut().enumerate() {
                let p = format!("stage{s}.block{b}");
                out.push((format!("{p}.cpe"), &mut block.cpe_kernels));
                out.push((format!("{p}.norm1.gamma"), &mut block.norm1.gamma));
                out.push((format!("{p}.norm1.beta"), &mut block.norm1.beta));
                out.push((format!("{p}.attn.wq"), &mut block.attn.wq));
                out.push((format!("{p}.attn.bq"), &mut block.attn.bq));
                out.push((format!("{p}.attn.wk"), &mut block.attn.wk));
                out.push((format!("{p}.attn.bk"), &mut block.attn.bk));
                out.push((format!("{p}.attn.wv"), &mut block.attn.wv));
                out.push((format!("{p}.attn.bv"), &mut block.attn.bv));
                out.push((format!("{p}.attn.wo"), &mut block.attn.wo));
                out.push((format!("{p}.attn.bo"), &mut block.attn.bo));
                out.push((format!("{p}.norm2.gamma"), &mut block.norm2.gamma));
                out.push((format!("{p}.norm2.beta"), &mut block.norm2.beta));
                out.push((format!("{p}.mlp.fc1"), &mut block.mlp.fc1));
                out.push((format!("{p}.mlp.b1"), &mut block.mlp.b1));
                out.push((format!("{p}.mlp.fc2"), &mut block.mlp.fc2));
                out.push((format!("{p}.mlp.b2"), &mut block.mlp.b2));
            }
        }
        out.push(("head.norm.gamma".into(), &mut self.head.norm.gamma));
        out.push(("head.norm.beta".into(), &mut self.head.norm.beta));
        out.push(("head.fc".into(), &mut self.head.fc));
        out.push(("head.bias".into(), &mut self.head.bias));
        out
    }

    /// Registers every parameter as a tape leaf.
    pub fn leaf_all(&self, tape: &mut Tape) -> ModelVars {
        let norm = |tape: &mut Tape, n: &NormParams| NormVars {
            gamma: tape.leaf(n.gamma.clone()),
            beta: tape.leaf(n.beta.clone()),
        };
        let patch_embed = PatchEmbedVars {
            proj: tape.leaf(self.patch_embed.proj.clone()),
            bias: tape.leaf(self.patch_embed.bias.clone()),
            norm: norm(tape, &self.patch_embed.norm),
        };
        let mut stages = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let merge = stage.merge.as_ref().map(|m| MergeVars {
                norm: norm(tape, &m.norm),
                reduction: tape.leaf(m.reduction.clone()),
                bias: tape.leaf(m.bias.clone()),
            });
            let blocks = stage
                .blocks
                .iter()
                .map(|b| BlockVars {
                    cpe_kernels: tape.leaf(b.cpe_kernels.clone()),
                    norm1: norm(tape, &b.norm1),
                    attn: b.attn.leaf(tape),
                    norm2: norm(tape, &b.norm2),
                    fc1: tape.leaf(b.mlp.fc1.clone()),
                    b1: tape.leaf(b.mlp.b1.clone()),
                    fc2: tape.leaf(b.mlp.fc2.clone()),
                    b2: tape.leaf(b.mlp.b2.clone()),
                })
                .collect();
            stages.push(StageVars { merge, blocks });
        }
        let head = HeadVars {
            norm: norm(tape, &self.head.norm),
            fc: tape.leaf(self.head.fc.clone()),
            bias: tape.leaf(self.head.bias.clone()),
        };
        ModelVars {
            patch_embed,
            stages,
            head,
        }
    }
}

// Tape-handle mirrors of the parameter structs.

#[derive(Debug, Clone, Copy)]
pub struct NormVars {
    pub gamma: Var,
    pub beta: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct PatchEmbedVars {
    pub proj: Var,
    pub bias: Var,
    pub norm: NormVars,
}

#[derive(Debug, Clone, Copy)]
pub struct MergeVars {
    pub norm: NormVars,
    pub reduction: Var,
    pub bias: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub cpe_kernels: Var,
    pub norm1: NormVars,
    pub attn: AttentionVars,
    pub norm2: NormVars,
    pub fc1: Var,
    pub b1: Var,
    pub fc2: Var,
    pub b2: Var,
}

#[derive(Debug, Clone)]
pub struct StageVars {
    pub merge: Option<MergeVars>,
    pub blocks: Vec<BlockVars>,
}

#[derive(Debug, Clone)]
pub struct ModelVars {
    pub patch_embed: PatchEmbedVars,
    pub stages: Vec<StageVars>,
    pub head: HeadVars,
}

#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub norm: NormVars,
    pub fc: Var,
    pub bias: Var,
}

impl ModelVars {
    /// Leaves in the same order as [`ModelParams::named`].
    pub fn ordered(&self) -> Vec<Var> {
        let mut out = Vec::new();
        out.extend([
            self.patch_embed.proj,
            self.patch_embed.bias,
            self.patch_embed.norm.gamma,
            self.patch_embed.norm.beta,
        ]);
        for stage in &self.stages {
            if let Some(m) = &stage.merge {
                out.extend([m.norm.gamma, m.norm.beta, m.reduction, m.bias]);
            }
            for b in &stage.blocks {
                out.extend([
                    b.cpe_kernels,
                    b.norm1.gamma,
                    b.norm1.beta,
                    b.attn.wq,
                    b.attn.bq,
                    b.attn.wk,
                    b.attn.bk,
                    b.attn.wv,
                    b.attn.bv,
                    b.attn.wo,
                    b.attn.bo,
                    b.norm2.gamma,
                    b.norm2.beta,
                    b.fc1,
                    b.b1,
                    b.fc2,
                    b.b2,
                ]);
            }
        }
        out.extend([
            self.head.norm.gamma,
            self.head.norm.beta,
            self.head.fc,
            self.head.bias,
        ]);
        out
    }
}

// ---------------------------------------------------------------------------
// Forward graph builders.
// ---------------------------------------------------------------------------

/// Flat indices that pull each non-overlapping `patch x patch` RGB patch
/// into one row (pixels row-major, channels innermost).
fn patch_indices(h_img: usize, w_img: usize, patch: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(h_img * w_img * 3);
    for pi in 0..h_img / patch {
        for pj in 0..w_img / patch {
            for di in 0..patch {
                for dj in 0..patch {
                    for ch in 0..3 {
                        idx.push(((pi * patch + di) * w_img + (pj * patch + dj)) * 3 + ch);
                    }
                }
            }
        }
    }
    idx
}

/// Non-overlapping patch projection plus layer norm. Returns the token
/// matrix and the token-grid extent.
pub fn patch_embed_tape(
    tape: &mut Tape,
    image: Var,
    params: &PatchEmbedVars,
    patch: usize,
) -> Result<(Var, usize, usize)> {
    let (h_img, w_img, ch) = tape.value(image).dims3()?;
    if ch != 3 {
        return Err(Error::ShapeMismatch(format!(
            "patch embedding expects 3 input channels, got {ch}"
        )));
    }
    if h_img % patch != 0 || w_img % patch != 0 {
        return Err(Error::Indivisible(format!(
            "image {h_img}x{w_img} is not divisible by patch size {patch}"
        )));
    }
    let (h, w) = (h_img / patch, w_img / patch);
    let idx = patch_indices(h_img, w_img, patch);
    let patches = tape.gather_elems(image, idx, &[h * w, 3 * patch * patch])?;
    let projected = tape.matmul(patches, params.proj)?;
    let biased = tape.add_bias(projected, params.bias)?;
    let out = tape.layer_norm(biased, params.norm.gamma, params.norm.beta)?;
    Ok((out, h, w))
}

/// Concatenates each 2x2 token neighborhood (row-major: top-left, top-right,
/// bottom-left, bottom-right), layer-norms the 4C vector, and projects to 2C.
pub fn patch_merge_tape(
    tape: &mut Tape,
    x: Var,
    params: &MergeVars,
    h: usize,
    w: usize,
) -> Result<Var> {
    if !h.is_multiple_of(2) || !w.is_multiple_of(2) {
        return Err(Error::Indivisible(format!(
            "patch merge needs even extents, got {h}x{w}"
        )));
    }
    let corner = |oi: usize, oj: usize| {
        let mut idx = Vec::with_capacity(h / 2 * w / 2);
        for i in 0..h / 2 {
            for j in 0..w / 2 {
                idx.push((2 * i + oi) * w + 2 * j + oj);
            }
        }
        idx
    };
    let tl = tape.gather_rows(x, corner(0, 0))?;
    let tr = tape.gather_rows(x, corner(0, 1))?;
    let bl = tape.gather_rows(x, corner(1, 0))?;
    let br = tape.gather_rows(x, corner(1, 1))?;
    let cat = tape.concat_cols(&[tl, tr, bl, br])?;
    let normed = tape.layer_norm(cat, params.norm.gamma, params.norm.beta)?;
    let reduced = tape.matmul(normed, params.reduction)?;
    tape.add_bias(reduced, params.bias)
}

/// Conditional positional encoding: residual depthwise 3x3 convolution.
pub fn cpe_tape(tape: &mut Tape, x: Var, kernels: Var, h: usize, w: usize) -> Result<Var> {
    let conv = tape.depthwise_conv3x3(x, kernels, h, w)?;
    tape.add(x, conv)
}

/// One AEWin transformer block:
/// CPE at entry, then `y + AEWin(LN(y))`, then `z + MLP(LN(z))`.
pub fn aewin_block_tape(
    tape: &mut Tape,
    x: Var,
    params: &BlockVars,
    cfg: &AewinConfig,
    h: usize,
    w: usize,
    mode: LayerKind,
) -> Result<Var> {
    let y = cpe_tape(tape, x, params.cpe_kernels, h, w)?;
    let normed = tape.layer_norm(y, params.norm1.gamma, params.norm1.beta)?;
    let attn = aewin_tape_inner(tape, normed, &params.attn, cfg, h, w, mode)?;
    let z = tape.add(y, attn)?;
    let normed2 = tape.layer_norm(z, params.norm2.gamma, params.norm2.beta)?;
    let hidden = tape.matmul(normed2, params.fc1)?;
    let hidden = tape.add_bias(hidden, params.b1)?;
    let activated = tape.gelu(hidden)?;
    let mlp = tape.matmul(activated, params.fc2)?;
    let mlp = tape.add_bias(mlp, params.b2)?;
    tape.add(z, mlp)
}

/// Per-stage record of an instrumented forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageTrace {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Effective window (the configured window clamped to the feature map).
    pub window: usize,
    pub modes: Vec<LayerKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ForwardTrace {
    pub stages: Vec<StageTrace>,
}

/// Attention configuration a stage actually runs: the window is clamped to
/// the feature-map extent (a 1x1 map with window 2 runs a 1x1 window), and
/// the shift is half the effective window.
pub fn stage_config(stage: &StageSpec, h: usize, w: usize) -> Result<AewinConfig> {
    let m_eff = stage.window.min(h).min(w);
    Ok(AewinConfig::new(stage.dim, stage.heads, m_eff)?.with_shift(m_eff / 2))
}

fn check_stage_divisible(s: usize, h: usize, w: usize, m: usize) -> Result<()> {
    if !h.is_multiple_of(m) || !w.is_multiple_of(m) {
        return Err(Error::Indivisible(format!(
            "stage {s}: feature map {h}x{w} is not divisible by window {m}"
        )));
    }
    Ok(())
}

/// Full backbone forward on one tape (training and gradient checks).
/// Blocks alternate Regular, Shifted, Regular, ... within each stage.
pub fn model_forward_tape(
    tape: &mut Tape,
    image: Var,
    vars: &ModelVars,
    spec: &ModelSpec,
) -> Result<(Var, ForwardTrace)> {
    spec.validate()?;
    let (mut x, mut h, mut w) = patch_embed_tape(tape, image, &vars.patch_embed, spec.patch_size)?;
    let mut trace = ForwardTrace::default();
    for (s, stage) in spec.stages.iter().enumerate() {
        if s > 0 {
            if h % 2 != 0 || w % 2 != 0 {
                return Err(Error::Indivisible(format!(
                    "stage {s}: cannot merge odd feature map {h}x{w}"
                )));
            }
            let merge = vars.stages[s].merge.as_ref().expect("merge params");
            x = patch_merge_tape(tape, x, merge, h, w)?;
            h /= 2;
            w /= 2;
        }
        let cfg = stage_config(stage, h, w)?;
        check_stage_divisible(s, h, w, cfg.window())?;
        let mut modes = Vec::with_capacity(stage.depth);
        for (b, block) in vars.stages[s].blocks.iter().enumerate() {
            let mode = if b % 2 == 0 {
                LayerKind::Regular
            } else {
                LayerKind::Shifted
            };
            x = aewin_block_tape(tape, x, block, &cfg, h, w, mode)?;
            modes.push(mode);
        }
        trace.stages.push(StageTrace {
            height: h,
            width: w,
            channels: stage.dim,
            window: cfg.window(),
            modes,
        });
    }
    let pooled = tape.mean_rows(x)?;
    let normed = tape.layer_norm(pooled, vars.head.norm.gamma, vars.head.norm.beta)?;
    let logits = tape.matmul(normed, vars.head.fc)?;
    let logits = tape.add_bias(logits, vars.head.bias)?;
    Ok((logits, trace))
}

// ---------------------------------------------------------------------------
// Tensor-level entry points. These run each block on its own scratch tape so
// a full-resolution forward never holds more than one block of activations.
// ---------------------------------------------------------------------------

/// Patch embedding of `image[Himg,Wimg,3]` to `[Himg/4, Wimg/4, dim]`.
pub fn patch_embed(params: &PatchEmbedParams, image: &Tensor, patch: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let iv = tape.leaf(image.clone());
    let pv = PatchEmbedVars {
        proj: tape.leaf(params.proj.clone()),
        bias: tape.leaf(params.bias.clone()),
        norm: NormVars {
            gamma: tape.leaf(params.norm.gamma.clone()),
            beta: tape.leaf(params.norm.beta.clone()),
        },
    };
    let (out, h, w) = patch_embed_tape(&mut tape, iv, &pv, patch)?;
    let c = tape.value(out).dims2()?.1;
    tape.value(out).reshape(&[h, w, c])
}

/// Patch merging of `x[H,W,C]` to `[H/2, W/2, 2C]`.
pub fn patch_merge(params: &MergeParams, x: &Tensor) -> Result<Tensor> {
    let (h, w, c) = x.dims3()?;
    let mut tape = Tape::new();
    let xv = tape.leaf(x.reshape(&[h * w, c])?);
    let mv = MergeVars {
        norm: NormVars {
            gamma: tape.leaf(params.norm.gamma.clone()),
            beta: tape.leaf(params.norm.beta.clone()),
        },
        reduction: tape.leaf(params.reduction.clone()),
        bias: tape.leaf(params.bias.clone()),
    };
    let out = patch_merge_tape(&mut tape, xv, &mv, h, w)?;
    let c_out = tape.value(out).dims2()?.1;
    tape.value(out).reshape(&[h / 2, w / 2, c_out])
}

/// Conditional positional encoding over `x[H,W,C]`: `x + dwconv3x3(x)`.
pub fn cpe(x: &Tensor, kernels: &Tensor) -> Result<Tensor> {
    let conv = crate::tensor::depthwise_conv3x3(x, kernels)?;
    crate::tensor::add(x, &conv)
}

/// One AEWin block over `x[H,W,C]`; shape-preserving.
pub fn aewin_block(
    params: &BlockParams,
    x: &Tensor,
    cfg: &AewinConfig,
    mode: LayerKind,
) -> Result<Tensor> {
    let (h, w, c) = x.dims3()?;
    let mut tape = Tape::new();
    let xv = tape.leaf(x.reshape(&[h * w, c])?);
    let bv = block_leaf(&mut tape, params);
    let out = aewin_block_tape(&mut tape, xv, &bv, cfg, h, w, mode)?;
    tape.value(out).reshape(&[h, w, c])
}

fn block_leaf(tape: &mut Tape, params: &BlockParams) -> BlockVars {
    BlockVars {
        cpe_kernels: tape.leaf(params.cpe_kernels.clone()),
        norm1: NormVars {
            gamma: tape.leaf(params.norm1.gamma.clone()),
            beta: tape.leaf(params.norm1.beta.clone()),
        },
        attn: params.attn.leaf(tape),
        norm2: NormVars {
            gamma: tape.leaf(params.norm2.gamma.clone()),
            beta: tape.leaf(params.norm2.beta.clone()),
        },
        fc1: tape.leaf(params.mlp.fc1.clone()),
        b1: tape.leaf(params.mlp.b1.clone()),
        fc2: tape.leaf(params.mlp.fc2.clone()),
        b2: tape.leaf(params.mlp.b2.clone()),
    }
}

/// Deterministic whole-model forward for `image[Himg,Wimg,3]`, returning the
/// logits (length `num_classes`) and the per-stage trace. Matches
/// [`model_forward_tape`] bitwise.
pub fn model_forward(params: &ModelParams, image: &Tensor) -> Result<(Tensor, ForwardTrace)> {
    let spec = &params.spec;
    spec.validate()?;

    // patch embedding on its own scratch tape
    let (mut tokens, mut h, mut w) = {
        let mut tape = Tape::new();
        let iv = tape.leaf(image.clone());
        let pv = PatchEmbedVars {
            proj: tape.leaf(params.patch_embed.proj.clone()),
            bias: tape.leaf(params.patch_embed.bias.clone()),
            norm: NormVars {
                gamma: tape.leaf(params.patch_embed.norm.gamma.clone()),
                beta: tape.leaf(params.patch_embed.norm.beta.clone()),
            },
        };
        let (v, h, w) = patch_embed_tape(&mut tape, iv, &pv, spec.patch_size)?;
        (tape.value(v).clone(), h, w)
    };

    let mut trace = ForwardTrace::default();
    for (s, stage) in spec.stages.iter().enumerate() {
        if s > 0 {
            if h % 2 != 0 || w % 2 != 0 {
                return Err(Error::Indivisible(format!(
                    "stage {s}: cannot merge odd feature map {h}x{w}"
                )));
            }
            let merge = params.stages[s].merge.as_ref().expect("merge params");
            let spatial = tokens.reshape(&[h, w, spec.stages[s - 1].dim])?;
            let merged = patch_merge(merge, &spatial)?;
            h /= 2;
            w /= 2;
            tokens = merged.reshape(&[h * w, stage.dim])?;
        }
        let cfg = stage_config(stage, h, w)?;
        check_stage_divisible(s, h, w, cfg.window())?;
        let mut modes = Vec::with_capacity(stage.depth);
        for (b, block) in params.stages[s].blocks.iter().enumerate() {
            let mode = if b % 2 == 0 {
                LayerKind::Regular
            } else {
                LayerKind::Shifted
            };
            let spatial = tokens.reshape(&[h, w, stage.dim])?;
            tokens = aewin_block(block, &spatial, &cfg, mode)?.reshape(&[h * w, stage.dim])?;
            modes.push(mode);
        }
        trace.stages.push(StageTrace {
            height: h,
            width: w,
            channels: stage.dim,
            window: cfg.window(),
            modes,
        });
    }

    let logits = {
        let mut tape = Tape::new();
        let xv = tape.leaf(tokens);
        let pooled = tape.mean_rows(xv)?;
        let gv = tape.leaf(params.head.norm.gamma.clone());
        let bv = tape.leaf(params.head.norm.beta.clone());
        let normed = tape.layer_norm(pooled, gv, bv)?;
        let fc = tape.leaf(params.head.fc.clone());
        let bias = tape.leaf(params.head.bias.clone());
        let o = tape.matmul(normed, fc)?;
        let o = tape.add_bias(o, bias)?;
        tape.value(o).reshape(&[spec.num_classes])?
    };
    Ok((logits, trace))
}

// ---------------------------------------------------------------------------
// Parameter accounting.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamReport {
    pub entries: Vec<ParamEntry>,
    pub total: u64,
}

/// Parameters of one linear map with bias.
pub fn linear_params(c_in: usize, c_out: usize) -> u64 {
    (c_in * c_out + c_out) as u64
}

/// Exact parameter total with a per-component breakdown. Agrees with the
/// element count of the tensors [`init_weights`] creates.
pub fn param_count(spec: &ModelSpec) -> Result<ParamReport> {
    spec.validate()?;
    let mut entries = Vec::new();
    let mut push = |name: String, count: u64| entries.push(ParamEntry { name, count });

    let c1 = spec.stages[0].dim;
    push(
        "patch_embed".into(),
        linear_params(spec.patch_vector_len(), c1) + 2 * c1 as u64,
    );
    for (s, stage) in spec.stages.iter().enumerate() {
        let c = stage.dim;
        let depth = stage.depth as u64;
        if s > 0 {
            let cp = spec.stages[s - 1].dim;
            push(
                format!("stage{s}.merge"),
                linear_params(4 * cp, 2 * cp) + 8 * cp as u64,
            );
        }
        push(format!("stage{s}.cpe"), depth * 9 * c as u64);
        push(format!("stage{s}.layer_norm"), depth * 4 * c as u64);
        push(
            format!("stage{s}.attention"),
            depth * 4 * linear_params(c, c),
        );
        push(
            format!("stage{s}.mlp"),
            depth * (linear_params(c, spec.mlp_ratio * c) + linear_params(spec.mlp_ratio * c, c)),
        );
    }
    let c4 = spec.stages[3].dim;
    push(
        "head".into(),
        linear_params(c4, spec.num_classes) + 2 * c4 as u64,
    );

    let total = entries.iter().map(|e| e.count).sum();
    Ok(ParamReport { entries, total })
}
