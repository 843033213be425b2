//! Command implementations. Each returns structured rows the front end
//! renders as an aligned table or CSV; tolerance breaches flip the process
//! exit code to 1.

use std::ops::Range;
use std::path::Path;

use aewin_core::analysis::{flops_aewin, flops_global, flops_model, measured_flops_check};
use aewin_core::attention::{
    aewin_forward, aewin_forward_tape, attention_reachability, horizontal_axis_attention,
    psw_aewin_forward, psw_aewin_forward_tape, psw_window_attention, vertical_axis_attention,
    window_attention, window_partition, window_reverse, AewinConfig, AttentionVars,
    AttentionWeights, LayerKind,
};
use aewin_core::model::{
    aewin_block_tape, model_forward, param_count, BlockParams, BlockVars, MlpParams, NormParams,
    NormVars,
};
use aewin_core::oracle::{
    col_mask, masked_global_attention, row_mask, shifted_window_mask, window_mask, AttentionMask,
};
use aewin_core::tape::{grad_check_many, Tape, Var, GRAD_CHECK_STEP};
use aewin_core::tensor::{self, Tensor};
use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::container;
use crate::train::{train_toy, TrainConfig};

pub const ORACLE_TOL: f64 = 1e-10;
pub const OP_GRAD_TOL: f64 = 1e-6;
pub const BLOCK_GRAD_TOL: f64 = 1e-4;

/// One named check with its observed value and threshold.
#[derive(Debug, Clone)]
pub struct CheckRow {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
}

impl CheckRow {
    pub fn pass(&self) -> bool {
        self.value < self.threshold
    }
}

pub fn render_rows(rows: &[CheckRow], csv: bool) -> String {
    let mut out = String::new();
    if csv {
        out.push_str("check,value,threshold,pass\n");
        for r in rows {
            out.push_str(&format!(
                "{},{:.3e},{:.1e},{}\n",
                r.name,
                r.value,
                r.threshold,
                r.pass()
            ));
        }
    } else {
        for r in rows {
            out.push_str(&format!(
                "{} {:<58} {:>12.3e}  (tol {:.0e})\n",
                if r.pass() { "PASS" } else { "FAIL" },
                r.name,
                r.value,
                r.threshold
            ));
        }
    }
    out
}

fn randn(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.sample(StandardNormal))
}

fn flat(x: &Tensor) -> Tensor {
    let (h, w, c) = x.dims3().expect("rank-3");
    x.reshape(&[h * w, c]).expect("reshape")
}

/// Per-head masked oracle outputs concatenated over a head range.
fn oracle_heads(
    tokens: &Tensor,
    weights: &AttentionWeights,
    cfg: &AewinConfig,
    heads: Range<usize>,
    mask: &AttentionMask,
) -> Result<Tensor> {
    let d = cfg.head_dim();
    let n = tokens.shape()[0];
    let width = (heads.end - heads.start) * d;
    let mut out = Tensor::zeros(&[n, width]);
    for (slot, head) in heads.enumerate() {
        let hp = weights.head_projection(head, d);
        let part =
            masked_global_attention(tokens, &hp, mask).map_err(|e| anyhow::anyhow!("{e}"))?;
        for r in 0..n {
            for c in 0..d {
                out.data_mut()[r * width + slot * d + c] = part.at(&[r, c]);
            }
        }
    }
    Ok(out)
}

fn slice_diff(got: &Tensor, expect: &Tensor, col_offset: usize) -> f64 {
    let (n, width) = expect.dims2().expect("rank-2");
    let got_width = got.dims2().expect("rank-2").1;
    let mut diff = 0.0f64;
    for r in 0..n {
        for c in 0..width {
            diff = diff.max(
                (got.data()[r * got_width + col_offset + c] - expect.data()[r * width + c]).abs(),
            );
        }
    }
    diff
}

pub fn parse_sizes(arg: &str) -> Result<Vec<(usize, usize)>> {
    arg.split(',')
        .map(|part| {
            let (h, w) = part
                .trim()
                .split_once('x')
                .with_context(|| format!("size {part:?} is not HxW"))?;
            Ok((h.trim().parse()?, w.trim().parse()?))
        })
        .collect()
}

/// Oracle-equivalence, round-trip, degeneracy, and reachability suites over
/// a size grid. Returns one row per (check, shape, window) with the maximum
/// difference across seeds.
pub fn cmd_verify(seed: u64, sizes: &[(usize, usize)], seeds: u64) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    let c = 8usize;
    let heads = 4usize;

    for &(h, w) in sizes {
        for m in [2usize, 4] {
            if h % m != 0 || w % m != 0 || h < m || w < m {
                continue;
            }
            let cfg = AewinConfig::new(c, heads, m).map_err(|e| anyhow::anyhow!("{e}"))?;
            let s = cfg.shift();
            let mut d_h = 0.0f64;
            let mut d_v = 0.0f64;
            let mut d_w = 0.0f64;
            let mut d_pa = 0.0f64;
            let mut d_pb = 0.0f64;
            let mut d_full = 0.0f64;
            let mut d_pfull = 0.0f64;
            for trial in 0..seeds {
                let key = seed
                    .wrapping_mul(0x1000_0000)
                    .wrapping_add((h as u64) << 20 | (w as u64) << 12 | (m as u64) << 8 | trial);
                let x = randn(key, &[h, w, c]);
                let weights = AttentionWeights::random(c, key ^ 0xDEAD);
                let tokens = flat(&x);
                let d = cfg.head_dim();

                let horiz = horizontal_axis_attention(&x, &weights, &cfg)
                    .map_err(|e| anyhow::anyhow!("{e}"))?;
                let expect = oracle_heads(&tokens, &weights, &cfg, 0..1, &row_mask(h, w))?;
                d_h = d_h.max(flat(&horiz).max_abs_diff(&expect));

                let vert = vertical_axis_attention(&x, &weights, &cfg)
                    .map_err(|e| anyhow::anyhow!("{e}"))?;
                let expect = oracle_heads(&tokens, &weights, &cfg, 1..2, &col_mask(h, w))?;
                d_v = d_v.max(flat(&vert).max_abs_diff(&expect));

                let win =
                    window_attention(&x, &weights, &cfg).map_err(|e| anyhow::anyhow!("{e}"))?;
                let wmask = window_mask(h, w, m).map_err(|e| anyhow::anyhow!("{e}"))?;
                let expect = oracle_heads(&tokens, &weights, &cfg, 2..4, &wmask)?;
                d_w = d_w.max(flat(&win).max_abs_diff(&expect));

                let psw =
                    psw_window_attention(&x, &weights, &cfg).map_err(|e| anyhow::anyhow!("{e}"))?;
                let right =
                    shifted_window_mask(h, w, m, 0, s).map_err(|e| anyhow::anyhow!("{e}"))?;
                let down =
                    shifted_window_mask(h, w, m, s, 0).map_err(|e| anyhow::anyhow!("{e}"))?;
                let ea = oracle_heads(&tokens, &weights, &cfg, 2..3, &right)?;
                let eb = oracle_heads(&tokens, &weights, &cfg, 3..4, &down)?;
                let got = flat(&psw);
                d_pa = d_pa.max(slice_diff(&got, &ea, 0));
                d_pb = d_pb.max(slice_diff(&got, &eb, d));

                let assemble = |masks: [&AttentionMask; 4]| -> Result<Tensor> {
                    let mut cat = Tensor::zeros(&[h * w, c]);
                    for head in 0..4 {
                        let hp = weights.head_projection(head, d);
                        let part = masked_global_attention(&tokens, &hp, masks[head])
                            .map_err(|e| anyhow::anyhow!("{e}"))?;
                        for r in 0..h * w {
                            for ch in 0..d {
                                cat.data_mut()[r * c + head * d + ch] = part.at(&[r, ch]);
                            }
                        }
                    }
                    let o =
                        tensor::matmul(&cat, &weights.wo).map_err(|e| anyhow::anyhow!("{e}"))?;
                    tensor::add_bias(&o, &weights.bo).map_err(|e| anyhow::anyhow!("{e}"))
                };
                let rows_mask = row_mask(h, w);
                let cols_mask = col_mask(h, w);
                let expect = assemble([&rows_mask, &cols_mask, &wmask, &wmask])?;
                let full = aewin_forward(&x, &weights, &cfg).map_err(|e| anyhow::anyhow!("{e}"))?;
                d_full = d_full.max(flat(&full).max_abs_diff(&expect));

                let expect = assemble([&rows_mask, &cols_mask, &right, &down])?;
                let pfull =
                    psw_aewin_forward(&x, &weights, &cfg).map_err(|e| anyhow::anyhow!("{e}"))?;
                d_pfull = d_pfull.max(flat(&pfull).max_abs_diff(&expect));
            }
            let tag = format!("{h}x{w} m={m}");
            rows.push(CheckRow {
                name: format!("horizontal vs row mask        {tag}"),
                value: d_h,
                threshold: ORACLE_TOL,
            });
            rows.push(CheckRow {
                name: format!("vertical vs column mask       {tag}"),
                value: d_v,
                threshold: ORACLE_TOL,
            });
            rows.push(CheckRow {
                name: format!("window vs block mask          {tag}"),
                value: d_w,
                threshold: ORACLE_TOL,
            });
            rows.push(CheckRow {
                name: format!("psw right vs shifted mask     {tag}"),
                value: d_pa,
                threshold: ORACLE_TOL,
            });
            rows.push(CheckRow {
                name: format!("psw down vs shifted mask      {tag}"),
                value: d_pb,
                threshold: ORACLE_TOL,
            });
            rows.push(CheckRow {
                name: format!("aewin vs assembled oracle     {tag}"),
                value: d_full,
                threshold: ORACLE_TOL,
            });
            rows.push(CheckRow {
                name: format!("psw aewin vs composite oracle {tag}"),
                value: d_pfull,
                threshold: ORACLE_TOL,
            });
        }
    }

    // round trips and degeneracies
    {
        let x = randn(seed ^ 0x0FF5, &[8, 4, 8]);
        let parts = window_partition(&x, 2).map_err(|e| anyhow::anyhow!("{e}"))?;
        let back = window_reverse(&parts, 8, 4, 2).map_err(|e| anyhow::anyhow!("{e}"))?;
        let exact = if back == x { 0.0 } else { 1.0 };
        rows.push(CheckRow {
            name: "window partition round trip (bitwise)".into(),
            value: exact,
            threshold: f64::MIN_POSITIVE,
        });

        let rolled = tensor::cyclic_roll(&x, 3, -2).map_err(|e| anyhow::anyhow!("{e}"))?;
        let unrolled = tensor::cyclic_roll(&rolled, -3, 2).map_err(|e| anyhow::anyhow!("{e}"))?;
        let exact = if unrolled == x { 0.0 } else { 1.0 };
        rows.push(CheckRow {
            name: "cyclic roll inverse (bitwise)".into(),
            value: exact,
            threshold: f64::MIN_POSITIVE,
        });

        let cfg = AewinConfig::new(8, 4, 2)
            .map_err(|e| anyhow::anyhow!("{e}"))?
            .with_shift(0);
        let weights = AttentionWeights::random(8, seed ^ 0xABCD);
        let reg = window_attention(&x, &weights, &cfg).map_err(|e| anyhow::anyhow!("{e}"))?;
        let psw = psw_window_attention(&x, &weights, &cfg).map_err(|e| anyhow::anyhow!("{e}"))?;
        let exact = if reg == psw { 0.0 } else { 1.0 };
        rows.push(CheckRow {
            name: "zero-shift psw is regular (bitwise)".into(),
            value: exact,
            threshold: f64::MIN_POSITIVE,
        });

        let cfg1 = AewinConfig::new(8, 4, 1).map_err(|e| anyhow::anyhow!("{e}"))?;
        let out = window_attention(&x, &weights, &cfg1).map_err(|e| anyhow::anyhow!("{e}"))?;
        let tokens = flat(&x);
        let mut diff = 0.0f64;
        for (slot, head) in (2..4).enumerate() {
            let hp = weights.head_projection(head, 2);
            let v = tensor::add_bias(
                &tensor::matmul(&tokens, &hp.wv).map_err(|e| anyhow::anyhow!("{e}"))?,
                &hp.bv,
            )
            .map_err(|e| anyhow::anyhow!("{e}"))?;
            diff = diff.max(slice_diff(&flat(&out), &v, slot * 2));
        }
        rows.push(CheckRow {
            name: "unit window is a v-projection".into(),
            value: diff,
            threshold: ORACLE_TOL,
        });
    }

    // reachability: one-layer corner counts and two-layer closure
    {
        let mut worst = 0.0f64;
        let mut closure_fail = 0.0f64;
        for h in 1..=8usize {
            for w in 1..=8usize {
                for m in [1usize, 2, 4] {
                    if h % m != 0 || w % m != 0 {
                        continue;
                    }
                    let s = m / 2;
                    let reach = attention_reachability(h, w, m, s, &[LayerKind::Regular])
                        .map_err(|e| anyhow::anyhow!("{e}"))?;
                    let count = (0..h * w).filter(|&q| reach.allowed(0, q)).count();
                    // corner token: its row, its column, and the (m-1)^2
                    // window tokens off its row/column
                    let expect = w + (h - 1) + (m - 1) * (m - 1);
                    if count != expect {
                        worst = worst.max((count as f64 - expect as f64).abs());
                    }
                    for kinds in [
                        [LayerKind::Regular, LayerKind::Regular],
                        [LayerKind::Regular, LayerKind::Shifted],
                    ] {
                        let reach = attention_reachability(h, w, m, s, &kinds)
                            .map_err(|e| anyhow::anyhow!("{e}"))?;
                        if !reach.is_all_true() {
                            closure_fail += 1.0;
                        }
                    }
                }
            }
        }
        rows.push(CheckRow {
            name: "one-layer corner reach matches enumeration (H,W<=8)".into(),
            value: worst,
            threshold: 0.5,
        });
        rows.push(CheckRow {
            name: "two-layer closure complete (H,W<=8)".into(),
            value: closure_fail,
            threshold: 0.5,
        });
    }

    Ok(rows)
}

/// Healthy-scale block parameters for gradient checking. Init-scale
/// weights leave the score path nearly flat, pushing query/key gradients
/// into the range where central differences only measure truncation noise.
fn conditioned_block(c: usize, ratio: usize, seed: u64) -> BlockParams {
    let w = AttentionWeights::random(c, seed);
    let shrink = |t: &Tensor| Tensor::from_fn(t.shape(), |i| t.data()[i] * 0.3);
    let dense = |shape: &[usize], s: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        Tensor::from_fn(shape, |_| {
            let v: f64 = rng.sample(StandardNormal);
            v * 0.3
        })
    };
    BlockParams {
        cpe_kernels: dense(&[3, 3, c], seed ^ 2),
        norm1: NormParams {
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
        norm2: NormParams {
            gamma: Tensor::from_fn(&[c], |i| 1.0 - 0.1 * (i as f64).sin()),
            beta: Tensor::from_fn(&[c], |i| -0.05 * (i as f64).cos()),
        },
        mlp: MlpParams {
            fc1: dense(&[c, ratio * c], seed ^ 3),
            b1: Tensor::from_fn(&[ratio * c], |i| 0.05 * (i as f64).sin()),
            fc2: dense(&[ratio * c, c], seed ^ 4),
            b2: Tensor::from_fn(&[c], |i| -0.05 * (i as f64).sin()),
        },
    }
}

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

fn attn_vars(vs: &[Var]) -> AttentionVars {
    AttentionVars {
        wq: vs[1],
        bq: vs[2],
        wk: vs[3],
        bk: vs[4],
        wv: vs[5],
        bv: vs[6],
        wo: vs[7],
        bo: vs[8],
    }
}

fn attention_inputs(seed: u64, h: usize, w: usize, c: usize) -> Vec<Tensor> {
    let weights = AttentionWeights::random(c, seed);
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

/// Per-operation and whole-block central-difference reports.
pub fn cmd_gradcheck(seed: u64) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    let mut push = |name: &str, err: aewin_core::Result<f64>, tol: f64| -> Result<()> {
        let value = err.map_err(|e| anyhow::anyhow!("{e}"))?;
        rows.push(CheckRow {
            name: name.into(),
            value,
            threshold: tol,
        });
        Ok(())
    };

    push(
        "matmul",
        grad_check_many(
            |t, vs| {
                let y = t.matmul(vs[0], vs[1])?;
                probe(t, y, seed ^ 10)
            },
            &[randn(seed ^ 1, &[3, 4]), randn(seed ^ 2, &[4, 2])],
            GRAD_CHECK_STEP,
        ),
        OP_GRAD_TOL,
    )?;
    push(
        "softmax_rows",
        grad_check_many(
            |t, vs| {
                let y = t.softmax_rows(vs[0])?;
                probe(t, y, seed ^ 11)
            },
            &[randn(seed ^ 3, &[4, 5])],
            GRAD_CHECK_STEP,
        ),
        OP_GRAD_TOL,
    )?;
    push(
        "layer_norm",
        grad_check_many(
            |t, vs| {
                let y = t.layer_norm(vs[0], vs[1], vs[2])?;
                probe(t, y, seed ^ 12)
            },
            &[
                randn(seed ^ 4, &[5, 6]),
                randn(seed ^ 5, &[6]),
                randn(seed ^ 6, &[6]),
            ],
            GRAD_CHECK_STEP,
        ),
        OP_GRAD_TOL,
    )?;
    push(
        "gelu",
        grad_check_many(
            |t, vs| {
                let y = t.gelu(vs[0])?;
                probe(t, y, seed ^ 13)
            },
            &[randn(seed ^ 7, &[3, 7])],
            GRAD_CHECK_STEP,
        ),
        OP_GRAD_TOL,
    )?;
    push(
        "depthwise_conv3x3",
        grad_check_many(
            |t, vs| {
                let y = t.depthwise_conv3x3(vs[0], vs[1], 3, 4)?;
                probe(t, y, seed ^ 14)
            },
            &[randn(seed ^ 8, &[12, 2]), randn(seed ^ 9, &[3, 3, 2])],
            GRAD_CHECK_STEP,
        ),
        OP_GRAD_TOL,
    )?;
    push(
        "cyclic_roll",
        grad_check_many(
            |t, vs| {
                let idx = tensor::roll_indices(3, 4, 1, -2);
                let y = t.gather_rows(vs[0], idx)?;
                probe(t, y, seed ^ 15)
            },
            &[randn(seed ^ 16, &[12, 2])],
            GRAD_CHECK_STEP,
        ),
        OP_GRAD_TOL,
    )?;
    push(
        "scaled_dot_attention",
        grad_check_many(
            |t, vs| {
                let kt = t.transpose(vs[1])?;
                let scores = t.matmul(vs[0], kt)?;
                let scaled = t.scale(scores, 1.0 / (2.0f64).sqrt())?;
                let probs = t.softmax_rows(scaled)?;
                let y = t.matmul(probs, vs[2])?;
                probe(t, y, seed ^ 17)
            },
            &[
                randn(seed ^ 18, &[3, 2]),
                randn(seed ^ 19, &[3, 2]),
                randn(seed ^ 20, &[3, 2]),
            ],
            GRAD_CHECK_STEP,
        ),
        OP_GRAD_TOL,
    )?;
    push(
        "cpe",
        grad_check_many(
            |t, vs| {
                let y = aewin_core::model::cpe_tape(t, vs[0], vs[1], 3, 4)?;
                probe(t, y, seed ^ 21)
            },
            &[randn(seed ^ 22, &[12, 3]), randn(seed ^ 23, &[3, 3, 3])],
            GRAD_CHECK_STEP,
        ),
        BLOCK_GRAD_TOL,
    )?;

    let cfg = AewinConfig::new(8, 4, 2).map_err(|e| anyhow::anyhow!("{e}"))?;
    push(
        "aewin_forward (input + weights)",
        grad_check_many(
            |t, vs| {
                let out = aewin_forward_tape(t, vs[0], &attn_vars(vs), &cfg, 8, 8)?;
                probe(t, out, seed ^ 24)
            },
            &attention_inputs(seed ^ 25, 8, 8, 8),
            GRAD_CHECK_STEP,
        ),
        BLOCK_GRAD_TOL,
    )?;
    push(
        "psw_aewin_forward (input + weights)",
        grad_check_many(
            |t, vs| {
                let out = psw_aewin_forward_tape(t, vs[0], &attn_vars(vs), &cfg, 8, 8)?;
                probe(t, out, seed ^ 26)
            },
            &attention_inputs(seed ^ 27, 8, 8, 8),
            GRAD_CHECK_STEP,
        ),
        BLOCK_GRAD_TOL,
    )?;

    for (name, mode) in [
        (
            "aewin_block regular (8x8x8, all params)",
            LayerKind::Regular,
        ),
        (
            "aewin_block shifted (8x8x8, all params)",
            LayerKind::Shifted,
        ),
    ] {
        let params = conditioned_block(8, 4, seed ^ 28);
        let inputs = block_inputs(randn(seed ^ 29, &[64, 8]), &params);
        push(
            name,
            grad_check_many(
                |t, vs| {
                    let out = aewin_block_tape(t, vs[0], &block_vars(vs), &cfg, 8, 8, mode)?;
                    probe(t, out, seed ^ 30)
                },
                &inputs,
                GRAD_CHECK_STEP,
            ),
            BLOCK_GRAD_TOL,
        )?;
    }

    Ok(rows)
}

fn format_count(v: u64) -> String {
    if v >= 1_000_000_000 {
        format!("{:.3}G", v as f64 / 1e9)
    } else if v >= 1_000_000 {
        format!("{:.3}M", v as f64 / 1e6)
    } else {
        v.to_string()
    }
}

pub fn cmd_flops(spec_arg: &str, size: usize, csv: bool, compare_global: bool) -> Result<String> {
    let spec = crate::specfile::resolve_spec(spec_arg)?;
    let report = flops_model(&spec, size).map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut out = String::new();
    if csv {
        out.push_str("layer,mechanism,h,w,c,m,projection,attention,total\n");
        for e in &report.entries {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                e.layer,
                e.mechanism,
                e.height,
                e.width,
                e.channels,
                e.window,
                e.projection,
                e.attention,
                e.total()
            ));
        }
        out.push_str(&format!("total,,,,,,,,{}\n", report.total));
    } else {
        out.push_str(&format!(
            "{:<22} {:<9} {:>4} {:>4} {:>5} {:>3} {:>16} {:>14} {:>16}\n",
            "layer", "mechanism", "H", "W", "C", "M", "projection", "attention", "total"
        ));
        for e in &report.entries {
            out.push_str(&format!(
                "{:<22} {:<9} {:>4} {:>4} {:>5} {:>3} {:>16} {:>14} {:>16}\n",
                e.layer,
                e.mechanism,
                e.height,
                e.width,
                e.channels,
                e.window,
                e.projection,
                e.attention,
                e.total()
            ));
        }
        out.push_str(&format!(
            "\n{} at {size}x{size}: {} flops ({})\n",
            spec.name,
            report.total,
            format_count(report.total)
        ));
    }
    if compare_global {
        let h = size / 32;
        let c = spec.stages[3].dim;
        out.push_str(&format!(
            "global attention at the final stage ({h}x{h}x{c}): {} vs aewin {}\n",
            format_count(flops_global(h, h, c)),
            format_count(flops_aewin(h, h, c, spec.stages[3].window.min(h))),
        ));
    }
    Ok(out)
}

pub fn cmd_params(spec_arg: &str, csv: bool) -> Result<String> {
    let spec = crate::specfile::resolve_spec(spec_arg)?;
    let report = param_count(&spec).map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut out = String::new();
    if csv {
        out.push_str("component,parameters\n");
        for e in &report.entries {
            out.push_str(&format!("{},{}\n", e.name, e.count));
        }
        out.push_str(&format!("total,{}\n", report.total));
    } else {
        for e in &report.entries {
            out.push_str(&format!("{:<24} {:>12}\n", e.name, e.count));
        }
        out.push_str(&format!(
            "\n{}: {} parameters ({})\n",
            spec.name,
            report.total,
            format_count(report.total)
        ));
    }
    Ok(out)
}

pub struct TrainArgs {
    pub spec: Option<String>,
    pub seed: u64,
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub out: Option<std::path::PathBuf>,
    pub csv: bool,
}

pub fn cmd_train_toy(args: &TrainArgs) -> Result<String> {
    let spec = crate::specfile::resolve_spec(args.spec.as_deref().unwrap_or("aewin-toy"))?;
    let cfg = TrainConfig {
        seed: args.seed,
        steps: args.steps,
        lr: args.lr,
        batch: args.batch,
        ..TrainConfig::default()
    };
    let outcome = train_toy(&spec, &cfg)?;
    let mut out = String::new();
    if args.csv {
        out.push_str("step,loss,accuracy\n");
        for log in &outcome.logs {
            match log.accuracy {
                Some(acc) => out.push_str(&format!("{},{:.6},{:.4}\n", log.step, log.loss, acc)),
                None => out.push_str(&format!("{},{:.6},\n", log.step, log.loss)),
            }
        }
    } else {
        for log in &outcome.logs {
            match log.accuracy {
                Some(acc) => out.push_str(&format!(
                    "step {:>4}  loss {:.6}  train-acc {:.3}\n",
                    log.step, log.loss, acc
                )),
                None => out.push_str(&format!("step {:>4}  loss {:.6}\n", log.step, log.loss)),
            }
        }
    }
    out.push_str(&format!(
        "initial loss {:.6}, final training accuracy {:.3} over {} examples\n",
        outcome.initial_loss, outcome.final_accuracy, cfg.pool
    ));
    if let Some(path) = &args.out {
        container::save_model(path, &outcome.params)?;
        out.push_str(&format!("weights written to {}\n", path.display()));
    }
    Ok(out)
}

pub fn cmd_infer(weights: &Path, image: &Path, spec_arg: Option<&str>) -> Result<String> {
    let spec = crate::specfile::resolve_spec(spec_arg.unwrap_or("aewin-toy"))?;
    let params = container::load_model(weights, &spec)?;
    let image = container::load_image(image)?;
    let (logits, _) = model_forward(&params, &image).map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut best = 0usize;
    for c in 1..logits.numel() {
        if logits.data()[c] > logits.data()[best] {
            best = c;
        }
    }
    let formatted: Vec<String> = logits.data().iter().map(|v| format!("{v:.6}")).collect();
    Ok(format!("class {best}\nlogits [{}]\n", formatted.join(", ")))
}

/// Quick measured-vs-formula complexity validation used by tests and docs.
pub fn measured_ratio(
    h: usize,
    w: usize,
    c: usize,
    heads: usize,
    m: usize,
    seed: u64,
) -> Result<f64> {
    let cfg = AewinConfig::new(c, heads, m).map_err(|e| anyhow::anyhow!("{e}"))?;
    let check = measured_flops_check(&cfg, h, w, seed).map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(check.ratio())
}
