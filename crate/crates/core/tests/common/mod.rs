//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

pub mod gradcheck;

use bilm::model::{MaskedBatch, ModelConfig, ModelParams};
use rand::seq::SliceRandom;
use rand::Rng;

/// Naive augmentation: scan the slots of `vy`, keep shared tokens, and hand
/// every other slot to the next x-only token; append whatever is left.
/// Assumes keys (lowercase strings) are unique within each vocabulary.
pub fn oracle_augment(vy: &[String], vx: &[String]) -> Option<Vec<String>> {
    let key = |s: &String| s.to_lowercase();
    let in_x = |y: &String| vx.iter().any(|x| key(x) == key(y));
    let in_y = |x: &String| vy.iter().any(|y| key(x) == key(y));
    if !vy.iter().any(in_x) {
        return None;
    }
    let mut queue: Vec<String> = vx.iter().filter(|x| !in_y(x)).cloned().collect();
    queue.reverse();
    let mut out = Vec::new();
    for y in vy {
        if in_x(y) {
            out.push(y.clone());
        } else if let Some(x) = queue.pop() {
            out.push(x);
        } else {
            out.push(y.clone());
        }
    }
    while let Some(x) = queue.pop() {
        out.push(x);
    }
    Some(out)
}

const WORDS: [&str; 20] = [
    "ab", "school", "dunya", "salam", "kitab", "ghar", "pani", "teacher", "book", "house", "water",
    "main", "hai", "ka", "ki", "se", "par", "the", "of", "and",
];

/// A random vocabulary of 1..=12 distinct words, some capitalized.
pub fn random_vocab<R: Rng>(rng: &mut R) -> Vec<String> {
    let n = rng.random_range(1..=12);
    let mut words: Vec<&str> = WORDS.to_vec();
    words.shuffle(rng);
    words[..n]
        .iter()
        .map(|w| {
            if rng.random_bool(0.2) {
                let mut c = w.chars();
                let first = c.next().unwrap().to_ascii_uppercase();
                std::iter::once(first).chain(c).collect()
            } else {
                w.to_string()
            }
        })
        .collect()
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + 1e-12).sqrt();
    x.iter()
        .zip(gain.iter().zip(bias))
        .map(|(v, (g, b))| (v - mean) * inv * g + b)
        .collect()
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (u + 0.044715 * u.powi(3))).tanh())
}

/// `x · W + b` with `W` stored as `[in × out]`.
fn affine(x: &[f64], w: &ndarray::Array2<f32>, b: &ndarray::Array1<f32>) -> Vec<f64> {
    let (rows, cols) = w.dim();
    assert_eq!(rows, x.len());
    (0..cols)
        .map(|j| (0..rows).map(|i| x[i] * w[[i, j]] as f64).sum::<f64>() + b[j] as f64)
        .collect()
}

fn vec1(a: &ndarray::Array1<f32>) -> Vec<f64> {
    a.iter().map(|&v| v as f64).collect()
}

/// Straight-line forward pass for one sequence of the batch, in f64.
/// Returns `(mlm logits per position, pair logits)`.
pub fn reference_forward(
    params: &ModelParams<f32>,
    config: &ModelConfig,
    batch: &MaskedBatch,
    row: usize,
) -> (Vec<Vec<f64>>, [f64; 2]) {
    let s = batch.seq_len();
    let h = config.hidden;
    let heads = config.heads;
    let dh = h / heads;
    let mut x: Vec<Vec<f64>> = (0..s)
        .map(|p| {
            let id = batch.input_ids[[row, p]] as usize;
            let seg = batch.segment_ids[[row, p]] as usize;
            let sum: Vec<f64> = (0..h)
                .map(|j| {
                    params.token_embeddings[[id, j]] as f64
                        + params.position_embeddings[[p, j]] as f64
                        + params.segment_embeddings[[seg, j]] as f64
                })
                .collect();
            layer_norm(&sum, &vec1(&params.embed_norm_gain), &vec1(&params.embed_norm_bias))
        })
        .collect();

    for lp in &params.layers {
        let q: Vec<Vec<f64>> = x.iter().map(|r| affine(r, &lp.query, &lp.query_bias)).collect();
        let k: Vec<Vec<f64>> = x.iter().map(|r| affine(r, &lp.key, &lp.key_bias)).collect();
        let v: Vec<Vec<f64>> = x.iter().map(|r| affine(r, &lp.value, &lp.value_bias)).collect();
        let mut ctx = vec![vec![0.0; h]; s];
        for head in 0..heads {
            let o = head * dh;
            for i in 0..s {
                let mut scores = vec![f64::NEG_INFINITY; s];
                for j in 0..s {
                    if batch.attention_mask[[row, j]] {
                        let dot: f64 = (0..dh).map(|d| q[i][o + d] * k[j][o + d]).sum();
                        scores[j] = dot / (dh as f64).sqrt();
                    }
                }
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|&sc| (sc - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                for j in 0..s {
                    let w = exps[j] / total;
                    for d in 0..dh {
                        ctx[i][o + d] += w * v[j][o + d];
                    }
                }
            }
        }
        x = (0..s)
            .map(|i| {
                let attn = affine(&ctx[i], &lp.attn_out, &lp.attn_out_bias);
                let r: Vec<f64> = x[i].iter().zip(&attn).map(|(a, b)| a + b).collect();
                let x1 = layer_norm(&r, &vec1(&lp.attn_norm_gain), &vec1(&lp.attn_norm_bias));
                let hidden: Vec<f64> = affine(&x1, &lp.ffn_in, &lp.ffn_in_bias)
                    .into_iter()
                    .map(gelu)
                    .collect();
                let ffn = affine(&hidden, &lp.ffn_out, &lp.ffn_out_bias);
                let r2: Vec<f64> = x1.iter().zip(&ffn).map(|(a, b)| a + b).collect();
                layer_norm(&r2, &vec1(&lp.ffn_norm_gain), &vec1(&lp.ffn_norm_bias))
            })
            .collect();
    }

    let vocab = config.vocab_size;
    let mlm = x
        .iter()
        .map(|r| {
            (0..vocab)
                .map(|t| {
                    (0..h)
                        .map(|j| r[j] * params.token_embeddings[[t, j]] as f64)
                        .sum::<f64>()
                        + params.mlm_bias[t] as f64
                })
                .collect()
        })
        .collect();
    let pair = affine(&x[0], &params.nsp_weight, &params.nsp_bias);
    (mlm, [pair[0], pair[1]])
}
