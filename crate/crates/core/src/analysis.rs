//! Closed-form cost models for global and AEWin attention, a whole-model
//! FLOPs report, and a measured-vs-formula validation hook.
//!
//! Counting convention: one FLOP is one multiply-accumulate, matching the
//! projection term 4HWC^2 (four CxC matmuls over HW tokens) and the
//! attention term (score and mix matmuls). Normalizations, softmax, and
//! activations are not counted. All totals are exact integers.

use alloc::{format, string::String, vec::Vec};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::attention::{aewin_forward_tape, AewinConfig, AttentionWeights};
use crate::error::Result;
use crate::model::{stage_config, ModelSpec};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Cost of standard global self-attention: `4HWC^2 + 2(HW)^2 C`.
pub fn flops_global(h: usize, w: usize, c: usize) -> u64 {
    let (h, w, c) = (h as u128, w as u128, c as u128);
    let projection = 4 * h * w * c * c;
    let attention = 2 * (h * w) * (h * w) * c;
    u64::try_from(projection + attention).expect("flops fit in u64")
}

/// Cost of parallel AEWin attention: `4HWC^2 + HWC(H/2 + W/2 + M^2)`.
///
/// Evaluated exactly: `HWC(H + W + 2M^2)` is always even (an odd `H + W`
/// forces `HW` even), so the halving never truncates.
pub fn flops_aewin(h: usize, w: usize, c: usize, m: usize) -> u64 {
    let (h, w, c, m) = (h as u128, w as u128, c as u128, m as u128);
    let projection = 4 * h * w * c * c;
    let doubled_attention = h * w * c * (h + w + 2 * m * m);
    debug_assert_eq!(doubled_attention % 2, 0);
    u64::try_from(projection + doubled_attention / 2).expect("flops fit in u64")
}

/// One costed layer of the report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopsEntry {
    pub layer: String,
    pub mechanism: String,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Effective window size; zero for layers without one.
    pub window: usize,
    pub projection: u64,
    pub attention: u64,
}

impl FlopsEntry {
    pub fn total(&self) -> u64 {
        self.projection + self.attention
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopsReport {
    pub entries: Vec<FlopsEntry>,
    pub total: u64,
}

/// Itemized whole-model cost at a square input resolution.
///
/// Included terms: patch embedding projection, per block the AEWin cost
/// (projections plus attention), the CPE depthwise pass at its nominal
/// 9HWC, and the MLP (2 * ratio * HWC^2); per stage transition the merge
/// reduction; and the classifier head. Norms, softmax, activations, and
/// pooling are excluded by the counting convention.
pub fn flops_model(spec: &ModelSpec, image_size: usize) -> Result<FlopsReport> {
    spec.validate()?;
    let mut entries: Vec<FlopsEntry> = Vec::new();

    let mut h = image_size / spec.patch_size;
    let mut w = image_size / spec.patch_size;
    let c1 = spec.stages[0].dim;
    let patch_vec = 3 * spec.patch_size * spec.patch_size;
    entries.push(FlopsEntry {
        layer: "patch_embed".into(),
        mechanism: "embed".into(),
        height: h,
        width: w,
        channels: c1,
        window: 0,
        projection: (h * w * patch_vec * c1) as u64,
        attention: 0,
    });

    for (s, stage) in spec.stages.iter().enumerate() {
        if s > 0 {
            let cp = spec.stages[s - 1].dim;
            h /= 2;
            w /= 2;
            entries.push(FlopsEntry {
                layer: format!("stage{s}.merge"),
                mechanism: "merge".into(),
                height: h,
                width: w,
                channels: stage.dim,
                window: 0,
                projection: (h * w * 4 * cp * 2 * cp) as u64,
                attention: 0,
            });
        }
        let cfg = stage_config(stage, h, w)?;
        let m = cfg.window();
        let c = stage.dim;
        let n = h * w;
        for b in 0..stage.depth {
            let layer = format!("stage{s}.block{b}");
            entries.push(FlopsEntry {
                layer: format!("{layer}.cpe"),
                mechanism: "cpe".into(),
                height: h,
                width: w,
                channels: c,
                window: 0,
                projection: (9 * n * c) as u64,
                attention: 0,
            });
            entries.push(FlopsEntry {
                layer: format!("{layer}.aewin"),
                mechanism: "aewin".into(),
                height: h,
                width: w,
                channels: c,
                window: m,
                projection: (4 * n * c * c) as u64,
                attention: flops_aewin(h, w, c, m) - (4 * n * c * c) as u64,
            });
            entries.push(FlopsEntry {
                layer: format!("{layer}.mlp"),
                mechanism: "mlp".into(),
                height: h,
                width: w,
                channels: c,
                window: 0,
                projection: (2 * spec.mlp_ratio * n * c * c) as u64,
                attention: 0,
            });
        }
    }

    let c4 = spec.stages[3].dim;
    entries.push(FlopsEntry {
        layer: "head".into(),
        mechanism: "head".into(),
        height: 1,
        width: 1,
        channels: c4,
        window: 0,
        projection: (c4 * spec.num_classes) as u64,
        attention: 0,
    });

    let total = entries.iter().map(|e| e.total()).sum();
    Ok(FlopsReport { entries, total })
}

/// Outcome of running instrumented attention against the closed form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeasuredFlops {
    /// Multiply-accumulates the tape recorded while running the forward.
    pub measured: u64,
    /// The Eq-level formula value for the same shape.
    pub formula: u64,
}

impl MeasuredFlops {
    pub fn ratio(&self) -> f64 {
        self.measured as f64 / self.formula as f64
    }
}

/// Runs a seeded AEWin forward and compares the tape's multiply-accumulate
/// counter with [`flops_aewin`]. The measured side additionally counts the
/// elementwise score scaling, a surplus of one multiply per score entry:
/// attention-term / (2 * head_dim). The ratio therefore sits slightly above
/// one and approaches it as the head dim grows.
pub fn measured_flops_check(
    cfg: &AewinConfig,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<MeasuredFlops> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::from_fn(&[h * w, cfg.channels()], |_| {
        let v: f64 = StandardNormal.sample(&mut rng);
        v * 0.1
    });
    let weights = AttentionWeights::random(cfg.channels(), seed.wrapping_add(1));

    let mut tape = Tape::new();
    let xv = tape.leaf(x);
    let wv = weights.leaf(&mut tape);
    aewin_forward_tape(&mut tape, xv, &wv, cfg, h, w)?;
    Ok(MeasuredFlops {
        measured: tape.mac_count(),
        formula: flops_aewin(h, w, cfg.channels(), cfg.window()),
    })
}
