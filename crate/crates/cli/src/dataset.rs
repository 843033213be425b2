//! Synthetic orientation dataset for the toy training loop.
//!
//! Three classes, each a +-1 pattern over a 32x32 RGB image plus seeded
//! Gaussian noise (sigma 0.3): horizontal stripes, vertical stripes, and a
//! checkerboard whose blocks span one attention window at token granularity
//! (8x8 pixels = 2x2 tokens after the patch embedding). The classes line up
//! with the three head groups - rows, columns, windows - so ablations have
//! interpretable effects.
//!
//! The generator is a pure function of (seed, index).

use aewin_core::tape::Tape;
use aewin_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const IMAGE_SIZE: usize = 32;
pub const NUM_CLASSES: usize = 3;
pub const NOISE_STD: f64 = 0.3;
/// Pixel band width of the stripe patterns (one patch row/column).
const BAND: usize = 4;
/// Pixel extent of one checkerboard block (one window of 2x2 tokens).
const BLOCK: usize = 8;

fn mix(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn pattern(class: usize, y: usize, x: usize) -> f64 {
    let bit = match class {
        0 => (y / BAND) % 2,              // horizontal stripes
        1 => (x / BAND) % 2,              // vertical stripes
        _ => (y / BLOCK + x / BLOCK) % 2, // window-sized checkerboard
    };
    if bit == 0 {
        1.0
    } else {
        -1.0
    }
}

/// The `index`-th example of the stream seeded by `seed`: a `[32,32,3]`
/// image and its class label (`index % 3`).
pub fn example(seed: u64, index: u64) -> (Tensor, usize) {
    let class = (index % NUM_CLASSES as u64) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, index));
    let image = Tensor::from_fn(&[IMAGE_SIZE, IMAGE_SIZE, 3], |flat| {
        let pos = flat / 3;
        let (y, x) = (pos / IMAGE_SIZE, pos % IMAGE_SIZE);
        let noise: f64 = StandardNormal.sample(&mut rng);
        pattern(class, y, x) + NOISE_STD * noise
    });
    (image, class)
}

/// Mean over all 4x4 patches of the flattened 48-value patch vector;
/// spatial pooling destroys exactly the structure that separates the
/// classes, which is what the baseline below demonstrates.
pub fn pooled_features(image: &Tensor) -> Tensor {
    let patches = IMAGE_SIZE / 4;
    let mut acc = vec![0.0f64; 48];
    for pi in 0..patches {
        for pj in 0..patches {
            for di in 0..4 {
                for dj in 0..4 {
                    for ch in 0..3 {
                        let v = image.at(&[pi * 4 + di, pj * 4 + dj, ch]);
                        acc[(di * 4 + dj) * 3 + ch] += v;
                    }
                }
            }
        }
    }
    let n = (patches * patches) as f64;
    Tensor::from_fn(&[1, 48], |i| acc[i] / n)
}

/// Multinomial logistic regression on pooled patch features, trained and
/// evaluated on the same pool the toy model trains on. Returns the final
/// training accuracy; the pooled representation is class-blind, so this
/// stays near chance.
pub fn logistic_baseline_accuracy(seed: u64, pool: usize, steps: usize, lr: f64) -> f64 {
    let features: Vec<(Tensor, usize)> = (0..pool as u64)
        .map(|i| {
            let (image, label) = example(seed, i);
            (pooled_features(&image), label)
        })
        .collect();

    let mut w = Tensor::zeros(&[48, NUM_CLASSES]);
    let mut b = Tensor::zeros(&[NUM_CLASSES]);
    for step in 0..steps {
        let (x, label) = &features[step % pool];
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let wv = tape.leaf(w.clone());
        let bv = tape.leaf(b.clone());
        let logits = tape.matmul(xv, wv).unwrap();
        let logits = tape.add_bias(logits, bv).unwrap();
        let loss = tape.cross_entropy_mean(logits, vec![*label]).unwrap();
        let mut grads = tape.backward(loss).unwrap();
        if let Some(g) = grads.take(wv) {
            for (p, gv) in w.data_mut().iter_mut().zip(g.data()) {
                *p -= lr * gv;
            }
        }
        if let Some(g) = grads.take(bv) {
            for (p, gv) in b.data_mut().iter_mut().zip(g.data()) {
                *p -= lr * gv;
            }
        }
    }

    let mut correct = 0usize;
    for (x, label) in &features {
        let mut best = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        for c in 0..NUM_CLASSES {
            let mut v = b.data()[c];
            for j in 0..48 {
                v += x.data()[j] * w.data()[j * NUM_CLASSES + c];
            }
            if v > best_v {
                best_v = v;
                best = c;
            }
        }
        if best == *label {
            correct += 1;
        }
    }
    correct as f64 / pool as f64
}
