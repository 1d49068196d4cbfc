//! Brute-force scoring oracle for tiny models.
//!
//! The forward pass is re-derived from the named weights with plain loops, and
//! every answer token is scored by rerunning the whole prefix and normalizing
//! over the full vocabulary. Nothing here goes through the tape or packing.

#![allow(dead_code)]

use prefopt_core::data::{Dataset, PreferenceExample, Sensor, Task};
use prefopt_core::model::{ModelConfig, ModelParameters, TokenSequence};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const VOCAB: usize = 4;
pub const MAX_LEN: usize = 4;

pub fn oracle_model(seed: u64) -> ModelParameters<f64> {
    let mut p = ModelParameters::<f64>::init(ModelConfig {
        vocab_size: VOCAB,
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        max_seq_len: MAX_LEN,
        init_seed: seed,
    })
    .unwrap();
    // Wider weights keep candidate scores well apart.
    for t in p.tensors_mut() {
        if t.shape.len() == 2 {
            t.values.iter_mut().for_each(|v| *v *= 40.0);
        }
    }
    p
}

fn w<'a>(p: &'a ModelParameters<f64>, name: &str) -> &'a [f64] {
    &p.tensor(name)
        .unwrap_or_else(|| panic!("missing {name}"))
        .values
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter()
        .enumerate()
        .map(|(j, v)| (v - mean) / (var + 1e-5).sqrt() * gain[j] + bias[j])
        .collect()
}

/// `x · W` for a row vector and a row-major `[x.len() × cols]` matrix.
fn vec_mat(x: &[f64], m: &[f64], cols: usize) -> Vec<f64> {
    (0..cols)
        .map(|c| x.iter().enumerate().map(|(r, v)| v * m[r * cols + c]).sum())
        .collect()
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

/// Logits for the token after `tokens`, computed from scratch.
pub fn next_token_logits(p: &ModelParameters<f64>, tokens: &[u32]) -> Vec<f64> {
    let cfg = p.config();
    let (d, v) = (cfg.d_model, cfg.vocab_size);
    let dh = d / cfg.n_heads;
    let (tok, pos) = (w(p, "tok_emb"), w(p, "pos_emb"));
    let mut xs: Vec<Vec<f64>> = tokens
        .iter()
        .enumerate()
        .map(|(t, &id)| {
            (0..d)
                .map(|j| tok[id as usize * d + j] + pos[t * d + j])
                .collect()
        })
        .collect();
    for l in 0..cfg.n_layers {
        let name = |s: &str| format!("layers.{l}.{s}");
        let hs: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| layer_norm(x, w(p, &name("ln1.gain")), w(p, &name("ln1.bias"))))
            .collect();
        let proj = |m: &str| -> Vec<Vec<f64>> {
            hs.iter().map(|h| vec_mat(h, w(p, &name(m)), d)).collect()
        };
        let (q, k, val) = (proj("attn.wq"), proj("attn.wk"), proj("attn.wv"));
        for i in 0..xs.len() {
            let mut mixed = vec![0.0; d];
            for head in 0..cfg.n_heads {
                let cols = head * dh..(head + 1) * dh;
                let scores: Vec<f64> = (0..=i)
                    .map(|j| {
                        cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt()
                    })
                    .collect();
                let z: f64 = scores.iter().map(|s| s.exp()).sum();
                for (j, s) in scores.iter().enumerate() {
                    for c in cols.clone() {
                        mixed[c] += s.exp() / z * val[j][c];
                    }
                }
            }
            let out = vec_mat(&mixed, w(p, &name("attn.wo")), d);
            xs[i].iter_mut().zip(out).for_each(|(x, o)| *x += o);
        }
        for x in xs.iter_mut() {
            let h = layer_norm(x, w(p, &name("ln2.gain")), w(p, &name("ln2.bias")));
            let mut f = vec_mat(&h, w(p, &name("ff.w1")), 4 * d);
            f.iter_mut()
                .zip(w(p, &name("ff.b1")))
                .for_each(|(a, b)| *a = gelu(*a + b));
            let f = vec_mat(&f, w(p, &name("ff.w2")), d);
            for ((a, b), c) in x.iter_mut().zip(f).zip(w(p, &name("ff.b2"))) {
                *a += b + c;
            }
        }
    }
    let last = layer_norm(xs.last().unwrap(), w(p, "ln_f.gain"), w(p, "ln_f.bias"));
    let mut logits = vec_mat(&last, w(p, "head.w"), v);
    logits
        .iter_mut()
        .zip(w(p, "head.b"))
        .for_each(|(a, b)| *a += b);
    logits
}

/// Mean over answer tokens of `ln p(token | prefix)`, each step normalized by
/// summing `exp` over every vocabulary entry.
pub fn brute_force_avg_log_prob(p: &ModelParameters<f64>, context: &[u32], answer: &[u32]) -> f64 {
    let mut prefix = context.to_vec();
    let mut total = 0.0;
    for &a in answer {
        let logits = next_token_logits(p, &prefix);
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        total += (logits[a as usize].exp() / z).ln();
        prefix.push(a);
    }
    total / answer.len() as f64
}

/// Whether the positive wins each item; ties go to the earlier candidate.
pub fn brute_force_correct(p: &ModelParameters<f64>, data: &Dataset) -> Vec<bool> {
    data.iter()
        .map(|ex| {
            let scores: Vec<f64> = ex
                .candidates()
                .map(|c| brute_force_avg_log_prob(p, ex.context.tokens(), c.tokens()))
                .collect();
            scores[1..].iter().all(|&s| s <= scores[0])
        })
        .collect()
}

/// All token strings of length 1..=max_len over the oracle vocabulary.
fn all_answers(max_len: usize) -> Vec<Vec<u32>> {
    let mut out: Vec<Vec<u32>> = Vec::new();
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let next: Vec<Vec<u32>> = frontier
            .iter()
            .flat_map(|s: &Vec<u32>| {
                (0..VOCAB as u32).map(move |t| {
                    let mut n = s.clone();
                    n.push(t);
                    n
                })
            })
            .collect();
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Four-way items with contexts of 1–2 tokens and answers filling the rest of
/// the length budget.
pub fn oracle_items(seed: u64, n: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = (0..n)
        .map(|i| {
            let ctx_len = rng.random_range(1..=2);
            let context: Vec<u32> = (0..ctx_len)
                .map(|_| rng.random_range(0..VOCAB as u32))
                .collect();
            let mut answers = all_answers(MAX_LEN - ctx_len);
            answers.shuffle(&mut rng);
            let seq = |v: &Vec<u32>| TokenSequence::new(v.clone());
            PreferenceExample {
                id: format!("oracle-{i:04}"),
                sensor: Sensor::ALL[i % Sensor::ALL.len()],
                task: Task::ALL[i % Task::ALL.len()],
                context: TokenSequence::new(context),
                positive: seq(&answers[0]),
                negatives: answers[1..4].iter().map(seq).collect(),
            }
        })
        .collect();
    Dataset::new(examples).unwrap()
}
