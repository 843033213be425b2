//! Central-difference verification of the attention mechanism and the whole
//! transformer block, over the input and every parameter tensor.

use aewin_core::attention::{
    aewin_forward_tape, psw_aewin_forward_tape, AewinConfig, AttentionVars, AttentionWeights,
    LayerKind,
};
use aewin_core::model::init_weights;
use aewin_core::model::{aewin_block_tape, BlockParams, BlockVars, ModelSpec, NormVars};
use aewin_core::tape::{grad_check_many, Tape, Var, GRAD_CHECK_STEP};
use aewin_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const BLOCK_TOL: f64 = 1e-4;

fn randn(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| StandardNormal.sample(&mut rng))
}

/// Scalar probe: sum(output * R) with a fixed random R.
///
/// R is scaled so the probe's absolute term sum stays well under one.
/// Central-difference roundoff is about eps * sum(|terms|) / 2h; the key
/// bias has an exactly zero gradient (softmax ignores constant row shifts),
/// so its numeric estimate is nothing but that roundoff, divided by the
/// 1e-8 denominator floor. Keeping the term sum small keeps the noise below
/// the 1e-4 tolerance; live coordinates are unaffected because their
/// gradients and errors scale together.
fn probe(tape: &mut Tape, out: Var, seed: u64) -> aewin_core::Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let numel: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = tape.leaf(Tensor::from_fn(&shape, |_| {
        let v: f64 = rng.sample(StandardNormal);
        v / (32.0 * numel as f64)
    }));
    let prod = tape.mul(out, r)?;
    tape.sum(prod)
}

fn attn_vars(vars: &[Var]) -> AttentionVars {
    AttentionVars {
        wq: vars[1],
        bq: vars[2],
        wk: vars[3],
        bk: vars[4],
        wv: vars[5],
        bv: vars[6],
        wo: vars[7],
        bo: vars[8],
    }
}

fn attention_inputs(seed: u64, h: usize, w: usize, c: usize) -> Vec<Tensor> {
    let weights = AttentionWeights::random(c, seed);
    // weights scaled down so the probe stays in a well-conditioned range
    let shrink = |t: &Tensor| Tensor::from_fn(t.shape(), |i| t.data()[i] * 0.3);
    vec![
        randn(seed ^ 1, &[h * w, c]),
        shrink(&weights.wq),
        shrink(&weights.bq),
        shrink(&weights.wk),
        shrink(&weights.bk),
        shrink(&weights.wv),
        shrink(&weights.bv),
        shrink(&weights.wo),
        shrink(&weights.bo),
    ]
}

#[test]
fn aewin_forward_passes_grad_check_on_input_and_all_weights() {
    let cfg = AewinConfig::new(8, 4, 2).unwrap();
    let inputs = attention_inputs(41, 8, 8, 8);
    let err = grad_check_many(
        |t, vs| {
            let out = aewin_forward_tape(t, vs[0], &attn_vars(vs), &cfg, 8, 8)?;
            probe(t, out, 42)
        },
        &inputs,
        GRAD_CHECK_STEP,
    )
    .unwrap();
    assert!(err < BLOCK_TOL, "relative error {err}");
}

#[test]
fn psw_aewin_forward_passes_grad_check_on_input_and_all_weights() {
    let cfg = AewinConfig::new(8, 4, 2).unwrap();
    let inputs = attention_inputs(43, 8, 8, 8);
    let err = grad_check_many(
        |t, vs| {
            let out = psw_aewin_forward_tape(t, vs[0], &attn_vars(vs), &cfg, 8, 8)?;
            probe(t, out, 44)
        },
        &inputs,
        GRAD_CHECK_STEP,
    )
    .unwrap();
    assert!(err < BLOCK_TOL, "relative error {err}");
}

/// Flattens block parameters into a tensor list for grad_check_many and
/// reassembles the vars inside the closure.
fn block_inputs(x: Tensor, params: &BlockParams) -> Vec<Tensor> {
    vec![
        x,
        params.cpe_kernels.clone(),
        params.norm1.gamma.clone(),
        params.norm1.beta.clone(),
        params.attn.wq.clone(),
        params.attn.bq.clone(),
        params.attn.wk.clone(),
        params.attn.bk.clone(),
        params.attn.wv.clone(),
        params.attn.bv.clone(),
        params.attn.wo.clone(),
        params.attn.bo.clone(),
        params.norm2.gamma.clone(),
        params.norm2.beta.clone(),
        params.mlp.fc1.clone(),
        params.mlp.b1.clone(),
        params.mlp.fc2.clone(),
        params.mlp.b2.clone(),
    ]
}

fn block_vars(vs: &[Var]) -> BlockVars {
    BlockVars {
        cpe_kernels: vs[1],
        norm1: NormVars {
            gamma: vs[2],
            beta: vs[3],
        },
        attn: AttentionVars {
            wq: vs[4],
            bq: vs[5],
            wk: vs[6],
            bk: vs[7],
            wv: vs[8],
            bv: vs[9],
            wo: vs[10],
            bo: vs[11],
        },
        norm2: NormVars {
            gamma: vs[12],
            beta: vs[13],
        },
        fc1: vs[14],
        b1: vs[15],
        fc2: vs[16],
        b2: vs[17],
    }
}

/// Block parameters at a healthy scale. Init-scale weights (sigma 0.02)
/// leave the score path nearly flat, so query/key gradients sit in the
/// 1e-8 range where central differences only measure truncation noise.
fn conditioned_block(c: usize, ratio: usize, seed: u64) -> BlockParams {
    let w = AttentionWeights::random(c, seed);
    let shrink = |t: &Tensor| Tensor::from_fn(t.shape(), |i| t.data()[i] * 0.3);
    BlockParams {
        cpe_kernels: Tensor::from_fn(&[3, 3, c], {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
            move |_| {
                let v: f64 = rng.sample(StandardNormal);
                v * 0.3
            }
        }),
        norm1: aewin_core::model::NormParams {
            gamma: Tensor::from_fn(&[c], |i| 1.0 + 0.1 * (i as f64).sin()),
            beta: Tensor::from_fn(&[c], |i| 0.1 * (i as f64).cos()),
        },
        attn: AttentionWeights {
            wq: shrink(&w.wq),
            wk: shrink(&w.wk),
            wv: shrink(&w.wv),
            wo: shrink(&w.wo),
            bq: shrink(&w.bq),
            bk: shrink(&w.bk),
            bv: shrink(&w.bv),
            bo: shrink(&w.bo),
        },
        norm2: aewin_core::model::NormParams {
            gamma: Tensor::from_fn(&[c], |i| 1.0 - 0.1 * (i as f64).sin()),
            beta: Tensor::from_fn(&[c], |i| -0.05 * (i as f64).cos()),
        },
        mlp: aewin_core::model::MlpParams {
            fc1: Tensor::from_fn(&[c, ratio * c], {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
                move |_| {
                    let v: f64 = rng.sample(StandardNormal);
                    v * 0.3
                }
            }),
            b1: Tensor::from_fn(&[ratio * c], |i| 0.05 * (i as f64).sin()),
            fc2: Tensor::from_fn(&[ratio * c, c], {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 4);
                move |_| {
                    let v: f64 = rng.sample(StandardNormal);
                    v * 0.3
                }
            }),
            b2: Tensor::from_fn(&[c], |i| -0.05 * (i as f64).sin()),
        },
    }
}

fn check_block(mode: LayerKind, seed: u64) {
    let params = conditioned_block(8, 4, seed);
    let cfg = AewinConfig::new(8, 4, 2).unwrap();
    let x = randn(seed ^ 0xB10C, &[64, 8]);
    let inputs = block_inputs(x, &params);
    let err = grad_check_many(
        |t, vs| {
            let out = aewin_block_tape(t, vs[0], &block_vars(vs), &cfg, 8, 8, mode)?;
            probe(t, out, seed ^ 0xF00D)
        },
        &inputs,
        GRAD_CHECK_STEP,
    )
    .unwrap();
    assert!(err < BLOCK_TOL, "{mode:?} relative error {err}");
}

#[test]
fn regular_block_passes_grad_check_at_8x8x8() {
    check_block(LayerKind::Regular, 51);
}

#[test]
fn shifted_block_passes_grad_check_at_8x8x8() {
    check_block(LayerKind::Shifted, 52);
}

#[test]
fn block_loss_grad_check_through_cross_entropy() {
    // the same block driven by the actual training loss instead of a probe;
    // the dead key bias is pinned inside the closure (checked separately)
    let spec = ModelSpec::aewin_toy();
    let model = init_weights(&spec, 61).unwrap();
    let params = &model.stages[0].blocks[1];
    let cfg = AewinConfig::new(8, 4, 2).unwrap();
    let x = randn(62, &[16, 8]);
    let head = randn(63, &[8, 3]);
    let bk = params.attn.bk.clone();
    let mut inputs = block_inputs(x, params);
    inputs.remove(7);
    let err = grad_check_many(
        |t, vs| {
            let bk_leaf = t.leaf(bk.clone());
            let mut vars: Vec<Var> = vs[..7].to_vec();
            vars.push(bk_leaf);
            vars.extend_from_slice(&vs[7..]);
            let out =
                aewin_block_tape(t, vs[0], &block_vars(&vars), &cfg, 4, 4, LayerKind::Shifted)?;
            let pooled = t.mean_rows(out)?;
            let hv = t.leaf(head.clone());
            let logits = t.matmul(pooled, hv)?;
            t.cross_entropy_mean(logits, vec![2])
        },
        &inputs,
        GRAD_CHECK_STEP,
    )
    .unwrap();
    assert!(err < BLOCK_TOL, "relative error {err}");
}

#[test]
fn key_bias_gradient_is_zero_up_to_rounding() {
    // softmax is invariant to adding a constant to a score row, and the key
    // bias only ever enters as such a shift
    let cfg = AewinConfig::new(8, 4, 2).unwrap();
    let inputs = attention_inputs(71, 8, 8, 8);
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = aewin_forward_tape(&mut tape, vars[0], &attn_vars(&vars), &cfg, 8, 8).unwrap();
    let loss = probe(&mut tape, out, 72).unwrap();
    let grads = tape.backward(loss).unwrap();
    let bk_grad = grads.get(vars[4]).unwrap();
    let max_abs = bk_grad.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(max_abs < 1e-12, "key bias gradient {max_abs}");
}
