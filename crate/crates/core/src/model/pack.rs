use std::ops::Range;
use std::sync::Arc;

use crate::autodiff::AttentionLayout;
use crate::model::{ModelConfig, ModelError};

/// One context with the answers to score against it.
#[derive(Debug, Clone)]
pub struct ScoringItem<'a> {
    pub context: &'a [u32],
    pub answers: Vec<&'a [u32]>,
}

impl<'a> ScoringItem<'a> {
    pub fn new(context: &'a [u32], answers: Vec<&'a [u32]>) -> Self {
        Self { context, answers }
    }
}

/// Rows of several items laid out for one forward pass.
///
/// Each item contributes its context rows once, then one row per answer token
/// except the last. Answer rows attend to the context rows and to their own
/// earlier rows only, so every answer sees exactly the prefix it would see as a
/// standalone sequence.
#[derive(Debug, Clone)]
pub struct PackedBatch {
    pub tokens: Vec<usize>,
    pub positions: Vec<usize>,
    pub layout: Arc<AttentionLayout>,
    /// `(row predicting the token, token id)` for every scored answer token.
    pub targets: Vec<(usize, usize)>,
    /// Range of `targets` belonging to each answer, in item then answer order.
    pub segments: Vec<Range<usize>>,
}

impl PackedBatch {
    pub fn new(config: &ModelConfig, items: &[ScoringItem<'_>]) -> Result<Self, ModelError> {
        let mut tokens = Vec::new();
        let mut positions = Vec::new();
        let mut keys: Vec<Vec<usize>> = Vec::new();
        let mut targets = Vec::new();
        let mut segments = Vec::new();
        let check = |t: u32| -> Result<usize, ModelError> {
            if (t as usize) < config.vocab_size {
                Ok(t as usize)
            } else {
                Err(ModelError::Token {
                    token: t,
                    vocab: config.vocab_size,
                })
            }
        };
        for item in items {
            if item.context.is_empty() {
                return Err(ModelError::EmptyContext);
            }
            let base = tokens.len();
            let ctx_len = item.context.len();
            for (t, &tok) in item.context.iter().enumerate() {
                tokens.push(check(tok)?);
                positions.push(t);
                keys.push((base..=base + t).collect());
            }
            let ctx_rows: Vec<usize> = (base..base + ctx_len).collect();
            let last_ctx = base + ctx_len - 1;
            for answer in &item.answers {
                if answer.is_empty() {
                    return Err(ModelError::EmptyAnswer);
                }
                let total = ctx_len + answer.len();
                if total > config.max_seq_len {
                    return Err(ModelError::TooLong {
                        len: total,
                        max: config.max_seq_len,
                    });
                }
                let start = targets.len();
                let mut own = ctx_rows.clone();
                let mut predictor = last_ctx;
                for (j, &tok) in answer.iter().enumerate() {
                    let id = check(tok)?;
                    targets.push((predictor, id));
                    if j + 1 < answer.len() {
                        let row = tokens.len();
                        tokens.push(id);
                        positions.push(ctx_len + j);
                        own.push(row);
                        keys.push(own.clone());
                        predictor = row;
                    }
                }
                segments.push(start..targets.len());
            }
        }
        Ok(Self {
            tokens,
            positions,
            layout: Arc::new(AttentionLayout::new(keys)?),
            targets,
            segments,
        })
    }

    pub fn rows(&self) -> usize {
        self.tokens.len()
    }

    pub fn answers(&self) -> usize {
        self.segments.len()
    }
}
