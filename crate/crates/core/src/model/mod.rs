//! Tiny pre-norm causal transformer scoring answers given a context.
//!
//! The model only ever scores: every public entry point returns log-probabilities
//! of answer tokens under teacher forcing. Several answers to one context are
//! packed into a single batch that evaluates the context rows once.

mod checkpoint;
mod pack;

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, TensorError, Var};
use crate::scalar::Scalar;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use pack::{PackedBatch, ScoringItem};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;
const TENSORS_PER_LAYER: usize = 12;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    TooLong { len: usize, max: usize },
    #[error("answer must contain at least one token")]
    EmptyAnswer,
    #[error("context must contain at least one token")]
    EmptyContext,
    #[error("token {token} outside vocabulary of size {vocab}")]
    Token { token: u32, vocab: usize },
    #[error("parameter vector has {got} values, manifest needs {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Token ids of a context or an answer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct TokenSequence(pub Vec<u32>);

impl TokenSequence {
    pub fn new(tokens: Vec<u32>) -> Self {
        Self(tokens)
    }

    pub fn tokens(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<u32>> for TokenSequence {
    fn from(tokens: Vec<u32>) -> Self {
        Self(tokens)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            max_seq_len: 48,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ModelError::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    /// Names and shapes of every weight tensor, in storage order.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        let (v, d, l) = (self.vocab_size, self.d_model, self.max_seq_len);
        let mut out = vec![
            ("tok_emb".to_string(), vec![v, d]),
            ("pos_emb".to_string(), vec![l, d]),
        ];
        for i in 0..self.n_layers {
            let p = |s: &str| format!("layers.{i}.{s}");
            out.extend([
                (p("ln1.gain"), vec![d]),
                (p("ln1.bias"), vec![d]),
                (p("attn.wq"), vec![d, d]),
                (p("attn.wk"), vec![d, d]),
                (p("attn.wv"), vec![d, d]),
                (p("attn.wo"), vec![d, d]),
                (p("ln2.gain"), vec![d]),
                (p("ln2.bias"), vec![d]),
                (p("ff.w1"), vec![d, 4 * d]),
                (p("ff.b1"), vec![4 * d]),
                (p("ff.w2"), vec![4 * d, d]),
                (p("ff.b2"), vec![d]),
            ]);
        }
        out.extend([
            ("ln_f.gain".to_string(), vec![d]),
            ("ln_f.bias".to_string(), vec![d]),
            ("head.w".to_string(), vec![d, v]),
            ("head.b".to_string(), vec![v]),
        ]);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<S>,
}

/// All trainable weights, stored in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters<S> {
    config: ModelConfig,
    tensors: Vec<NamedTensor<S>>,
}

impl<S: Scalar> ModelParameters<S> {
    /// Seeded initialization: matrices get `0.02·N(0,1)`, layer-norm gains 1,
    /// every bias 0.
    pub fn init(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let tensors = config
            .manifest()
            .into_iter()
            .map(|(name, shape)| {
                let n = shape.iter().product();
                let values = if shape.len() == 2 {
                    (0..n)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            S::lit(INIT_STD * z)
                        })
                        .collect()
                } else if name.ends_with(".gain") {
                    vec![S::one(); n]
                } else {
                    vec![S::zero(); n]
                };
                NamedTensor {
                    name,
                    shape,
                    values,
                }
            })
            .collect();
        Ok(Self { config, tensors })
    }

    pub fn from_flat(config: ModelConfig, flat: &[S]) -> Result<Self, ModelError> {
        config.validate()?;
        let manifest = config.manifest();
        let expected: usize = manifest
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum();
        if flat.len() != expected {
            return Err(ModelError::ParamCount {
                expected,
                got: flat.len(),
            });
        }
        let mut offset = 0;
        let tensors = manifest
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let values = flat[offset..offset + n].to_vec();
                offset += n;
                NamedTensor {
                    name,
                    shape,
                    values,
                }
            })
            .collect();
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[NamedTensor<S>] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor<S>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut NamedTensor<S>> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.values.len()).sum()
    }

    pub fn flatten(&self) -> Vec<S> {
        self.tensors
            .iter()
            .flat_map(|t| t.values.iter().copied())
            .collect()
    }

    /// Overwrites all weights from a flat vector in manifest order.
    pub fn assign_flat(&mut self, flat: &[S]) -> Result<(), ModelError> {
        if flat.len() != self.num_params() {
            return Err(ModelError::ParamCount {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.values.len();
            t.values.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut NamedTensor<S>> {
        self.tensors.iter_mut()
    }

    /// Records every weight on `tape`, as trainable leaves or as constants.
    pub fn bind(&self, tape: &mut Tape<S>, trainable: bool) -> Result<BoundModel, ModelError> {
        let mut vars = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let v = if trainable {
                tape.param(t.shape.clone(), t.values.clone())?
            } else {
                tape.constant(t.shape.clone(), t.values.clone())?
            };
            vars.push(v);
        }
        Ok(BoundModel {
            config: self.config,
            vars,
        })
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<(), ModelError> {
        if let Some(&token) = tokens
            .iter()
            .find(|&&t| t as usize >= self.config.vocab_size)
        {
            return Err(ModelError::Token {
                token,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Next-token logits at every position of one sequence, `[len × vocab]`.
    pub fn forward_logits(&self, tokens: &TokenSequence) -> Result<Tensor<S>, ModelError> {
        let len = tokens.len();
        if len == 0 {
            return Err(ModelError::EmptyContext);
        }
        if len > self.config.max_seq_len {
            return Err(ModelError::TooLong {
                len,
                max: self.config.max_seq_len,
            });
        }
        self.check_tokens(tokens.tokens())?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false)?;
        let ids: Vec<usize> = tokens.tokens().iter().map(|&t| t as usize).collect();
        let positions: Vec<usize> = (0..len).collect();
        let layout = std::sync::Arc::new(crate::autodiff::AttentionLayout::causal(len));
        let hidden = bound.hidden(&mut tape, &ids, &positions, layout)?;
        let logits = bound.project(&mut tape, hidden)?;
        Ok(tape.tensor(logits).clone())
    }

    /// Teacher-forced log-probabilities, one inner vector per item in answer order.
    pub fn score_items(&self, items: &[ScoringItem<'_>]) -> Result<Vec<Vec<S>>, ModelError> {
        let batch = PackedBatch::new(&self.config, items)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false)?;
        let lp = bound.answer_log_probs(&mut tape, &batch)?;
        let flat = tape.value(lp);
        let mut out = Vec::with_capacity(items.len());
        let mut cursor = 0;
        for item in items {
            out.push(flat[cursor..cursor + item.answers.len()].to_vec());
            cursor += item.answers.len();
        }
        Ok(out)
    }

    /// `log π(answer | context)`: summed log-probabilities of the answer tokens.
    pub fn answer_log_prob(
        &self,
        context: &TokenSequence,
        answer: &TokenSequence,
    ) -> Result<S, ModelError> {
        let item = ScoringItem::new(context.tokens(), vec![answer.tokens()]);
        Ok(self.score_items(&[item])?[0][0])
    }

    /// `log π(answer | context) / |answer|`.
    pub fn avg_log_prob(
        &self,
        context: &TokenSequence,
        answer: &TokenSequence,
    ) -> Result<S, ModelError> {
        let lp = self.answer_log_prob(context, answer)?;
        Ok(lp * inverse_len(answer.len()))
    }
}

/// `1/|y|`, the length-normalization factor shared by every scoring path.
pub fn inverse_len<S: Scalar>(len: usize) -> S {
    S::one() / S::from_usize(len).expect("length fits the scalar type")
}

/// Model weights recorded on a tape.
#[derive(Debug, Clone)]
pub struct BoundModel {
    config: ModelConfig,
    vars: Vec<Var>,
}

impl BoundModel {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn layer(&self, i: usize, slot: usize) -> Var {
        self.vars[2 + i * TENSORS_PER_LAYER + slot]
    }

    fn tail(&self, slot: usize) -> Var {
        self.vars[2 + self.config.n_layers * TENSORS_PER_LAYER + slot]
    }

    /// Final-normalized hidden states for packed rows.
    fn hidden<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        tokens: &[usize],
        positions: &[usize],
        layout: std::sync::Arc<crate::autodiff::AttentionLayout>,
    ) -> Result<Var, ModelError> {
        let eps = S::lit(LN_EPS);
        let tok = tape.gather_rows(self.vars[0], tokens)?;
        let pos = tape.gather_rows(self.vars[1], positions)?;
        let mut x = tape.add(tok, pos)?;
        for i in 0..self.config.n_layers {
            let h = tape.layer_norm(x, self.layer(i, 0), self.layer(i, 1), eps)?;
            let q = tape.matmul(h, self.layer(i, 2))?;
            let k = tape.matmul(h, self.layer(i, 3))?;
            let v = tape.matmul(h, self.layer(i, 4))?;
            let a = tape.attention(q, k, v, self.config.n_heads, layout.clone())?;
            let a = tape.matmul(a, self.layer(i, 5))?;
            x = tape.add(x, a)?;

            let h = tape.layer_norm(x, self.layer(i, 6), self.layer(i, 7), eps)?;
            let f = tape.matmul(h, self.layer(i, 8))?;
            let f = tape.add_row(f, self.layer(i, 9))?;
            let f = tape.gelu(f);
            let f = tape.matmul(f, self.layer(i, 10))?;
            let f = tape.add_row(f, self.layer(i, 11))?;
            x = tape.add(x, f)?;
        }
        Ok(tape.layer_norm(x, self.tail(0), self.tail(1), eps)?)
    }

    fn project<S: Scalar>(&self, tape: &mut Tape<S>, hidden: Var) -> Result<Var, ModelError> {
        let logits = tape.matmul(hidden, self.tail(2))?;
        Ok(tape.add_row(logits, self.tail(3))?)
    }

    /// Summed answer log-probabilities, one entry per packed answer.
    pub fn answer_log_probs<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        batch: &PackedBatch,
    ) -> Result<Var, ModelError> {
        let hidden = self.hidden(tape, &batch.tokens, &batch.positions, batch.layout.clone())?;
        let rows: Vec<usize> = batch.targets.iter().map(|&(row, _)| row).collect();
        let picked_rows = tape.gather_rows(hidden, &rows)?;
        let logits = self.project(tape, picked_rows)?;
        let logp = tape.log_softmax(logits)?;
        let cells: Vec<(usize, usize)> = batch
            .targets
            .iter()
            .enumerate()
            .map(|(i, &(_, token))| (i, token))
            .collect();
        let token_lp = tape.pick(logp, &cells)?;
        Ok(tape.segment_sum(token_lp, &batch.segments)?)
    }

    /// Length-normalized answer log-probabilities, one entry per packed answer.
    pub fn avg_log_probs<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        batch: &PackedBatch,
    ) -> Result<Var, ModelError> {
        let lp = self.answer_log_probs(tape, batch)?;
        let inv: Vec<S> = batch
            .segments
            .iter()
            .map(|s: &Range<usize>| inverse_len(s.len()))
            .collect();
        Ok(tape.mul_const(lp, inv)?)
    }
}
