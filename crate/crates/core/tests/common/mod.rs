//! Dense f64 reference implementations written against plain nested vectors,
//! sharing nothing with the tape code except parameter storage.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vpsn_core::nn::layers::{DecoderLayer, EncoderLayer, FeedForward, LayerNorm, Linear, MultiHeadAttention};
use vpsn_core::nn::{Matrix, ParamStore};

pub type Dense = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_dense(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Dense {
    (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

pub fn to_matrix(d: &Dense) -> Matrix<f64> {
    Matrix::from_rows(d)
}

pub fn dense(m: &Matrix<f64>) -> Dense {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

/// Overwrites every parameter with uniform noise so biases, gains and shifts
/// take part in the comparison.
pub fn scramble(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng, scale: f64) {
    for m in store.values_mut() {
        for v in m.data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

pub fn max_abs_diff(a: &Dense, b: &Dense) -> f64 {
    assert_eq!(a.len(), b.len(), "row count");
    let mut worst: f64 = 0.0;
    for (ra, rb) in a.iter().zip(b) {
        assert_eq!(ra.len(), rb.len(), "column count");
        for (x, y) in ra.iter().zip(rb) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let inner = b.len();
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            assert_eq!(row.len(), inner);
            (0..cols).map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum()).collect()
        })
        .collect()
}

pub fn add(a: &Dense, b: &Dense) -> Dense {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

fn param(store: &ParamStore<f64>, id: usize) -> Dense {
    dense(store.get(id))
}

pub fn linear(x: &Dense, layer: &Linear, store: &ParamStore<f64>) -> Dense {
    let mut y = matmul(x, &param(store, layer.weight));
    if let Some(b) = layer.bias {
        let b = &param(store, b)[0];
        for row in &mut y {
            for (v, bb) in row.iter_mut().zip(b) {
                *v += bb;
            }
        }
    }
    y
}

/// Row softmax where `keep(i, j) == false` forces weight zero.
pub fn masked_softmax(scores: &Dense, keep: &dyn Fn(usize, usize) -> bool) -> Dense {
    scores
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let live: Vec<usize> = (0..row.len()).filter(|&j| keep(i, j)).collect();
            let m = live.iter().map(|&j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = live.iter().map(|&j| (row[j] - m).exp()).sum();
            (0..row.len())
                .map(|j| if keep(i, j) { (row[j] - m).exp() / z } else { 0.0 })
                .collect()
        })
        .collect()
}

pub fn attention(
    q_from: &Dense,
    kv_from: &Dense,
    keep: &dyn Fn(usize, usize) -> bool,
    layer: &MultiHeadAttention,
    store: &ParamStore<f64>,
) -> (Dense, Vec<Dense>) {
    let q = linear(q_from, &layer.query, store);
    let k = linear(kv_from, &layer.key, store);
    let v = linear(kv_from, &layer.value, store);
    let d = layer.hidden / layer.heads;
    let mut context = vec![vec![0.0; layer.hidden]; q.len()];
    let mut weights = Vec::new();
    for h in 0..layer.heads {
        let cols = h * d..(h + 1) * d;
        let scores: Dense = q
            .iter()
            .map(|qi| {
                k.iter()
                    .map(|kj| cols.clone().map(|c| qi[c] * kj[c]).sum::<f64>() / (d as f64).sqrt())
                    .collect()
            })
            .collect();
        let w = masked_softmax(&scores, keep);
        for (i, wi) in w.iter().enumerate() {
            for c in cols.clone() {
                context[i][c] = wi.iter().zip(&v).map(|(a, vj)| a * vj[c]).sum();
            }
        }
        weights.push(w);
    }
    (linear(&context, &layer.output, store), weights)
}

pub fn layer_norm(x: &Dense, ln: &LayerNorm, store: &ParamStore<f64>) -> Dense {
    let g = &param(store, ln.gain)[0];
    let b = &param(store, ln.shift)[0];
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = (var + 1e-5).sqrt();
            row.iter().enumerate().map(|(c, v)| (v - mean) / sd * g[c] + b[c]).collect()
        })
        .collect()
}

pub fn feed_forward(x: &Dense, ff: &FeedForward, store: &ParamStore<f64>) -> Dense {
    let h: Dense = linear(x, &ff.inner, store)
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
        .collect();
    linear(&h, &ff.outer, store)
}

pub fn encoder_layer(x: &Dense, key_mask: &[bool], layer: &EncoderLayer, store: &ParamStore<f64>) -> Dense {
    let keep = |_: usize, j: usize| key_mask[j];
    let (a, _) = attention(x, x, &keep, &layer.attention, store);
    let x = layer_norm(&add(x, &a), &layer.attention_norm, store);
    let f = feed_forward(&x, &layer.feed_forward, store);
    layer_norm(&add(&x, &f), &layer.feed_forward_norm, store)
}

pub fn decoder_layer(y: &Dense, memory: &Dense, memory_mask: &[bool], layer: &DecoderLayer, store: &ParamStore<f64>) -> Dense {
    let causal = |i: usize, j: usize| j <= i;
    let (s, _) = attention(y, y, &causal, &layer.self_attention, store);
    let y = layer_norm(&add(y, &s), &layer.self_attention_norm, store);
    let mem_keep = |_: usize, j: usize| memory_mask[j];
    let (c, _) = attention(&y, memory, &mem_keep, &layer.cross_attention, store);
    let y = layer_norm(&add(&y, &c), &layer.cross_attention_norm, store);
    let f = feed_forward(&y, &layer.feed_forward, store);
    layer_norm(&add(&y, &f), &layer.feed_forward_norm, store)
}

/// Sinusoidal positions: even columns sin, odd columns cos, with the
/// frequency shared by each (2i, 2i+1) pair.
pub fn positions(len: usize, dim: usize) -> Dense {
    (0..len)
        .map(|p| {
            (0..dim)
                .map(|c| {
                    let freq = 1.0 / 10000f64.powf((c - c % 2) as f64 / dim as f64);
                    let a = p as f64 * freq;
                    if c % 2 == 0 {
                        a.sin()
                    } else {
                        a.cos()
                    }
                })
                .collect()
        })
        .collect()
}

/// Table rows for `ids` plus positions (embed width equals hidden width).
pub fn embed(ids: &[usize], table: usize, store: &ParamStore<f64>) -> Dense {
    let t = param(store, table);
    let rows: Dense = ids.iter().map(|&i| t[i].clone()).collect();
    let width = rows.first().map_or(0, Vec::len);
    add(&rows, &positions(ids.len(), width))
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
