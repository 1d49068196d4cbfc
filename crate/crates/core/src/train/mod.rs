//! Minibatch training with AdamW and probe-set trajectory tracing.

mod trace;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, TensorError};
use crate::data::{DataError, Dataset, PreferenceExample};
use crate::model::{inverse_len, ModelError, ModelParameters, ScoringItem};
use crate::objectives::{batch_loss, FrozenReference, Method, ObjectiveConfig, ObjectiveError};
use crate::scalar::Scalar;

pub use trace::{TraceRow, TrainingTrace};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },
    #[error("optimizer state holds {state} values, parameters have {params}")]
    StateShape { state: usize, params: usize },
    #[error("trace line {line}: {message}")]
    TraceParse { line: usize, message: String },
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub m: Vec<S>,
    pub v: Vec<S>,
    pub t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![S::zero(); n],
            v: vec![S::zero(); n],
            t: 0,
        }
    }
}

/// One AdamW update: `θ ← θ − η·(m̂/(√v̂ + ε) + wd·θ)`.
pub fn adamw_step<S: Scalar>(
    params: &mut [S],
    grads: &[S],
    state: &mut AdamState<S>,
    learning_rate: f64,
    config: &AdamWConfig,
) -> Result<(), TrainError> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len()
    {
        return Err(TrainError::StateShape {
            state: state.m.len().min(state.v.len()).min(grads.len()),
            params: params.len(),
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let lit = S::lit;
    let (b1, b2) = (lit(config.beta1), lit(config.beta2));
    let c1 = S::one() - b1.powi(t);
    let c2 = S::one() - b2.powi(t);
    let (lr, eps, wd) = (
        lit(learning_rate),
        lit(config.eps),
        lit(config.weight_decay),
    );
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (S::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (S::one() - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] = params[i] - lr * (m_hat / (v_hat.sqrt() + eps) + wd * params[i]);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: ObjectiveConfig,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub adamw: AdamWConfig,
    pub seed: u64,
    pub probe_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: ObjectiveConfig::default(),
            learning_rate: 3e-4,
            steps: 600,
            batch_size: 8,
            adamw: AdamWConfig::default(),
            seed: 0,
            probe_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.objective.validate()?;
        let a = &self.adamw;
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(TrainError::Config(
                "learning_rate must be finite and >= 0".into(),
            ));
        }
        if self.steps == 0 {
            return Err(TrainError::Config("steps must be at least 1".into()));
        }
        if self.batch_size == 0 || self.probe_every == 0 {
            return Err(TrainError::Config(
                "batch_size and probe_every must be positive".into(),
            ));
        }
        if !(a.beta1 > 0.0 && a.beta1 < 1.0 && a.beta2 > 0.0 && a.beta2 < 1.0) {
            return Err(TrainError::Config("adam betas must lie in (0, 1)".into()));
        }
        if !(a.eps > 0.0 && a.weight_decay >= 0.0 && a.weight_decay.is_finite()) {
            return Err(TrainError::Config(
                "eps must be positive and weight_decay >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Immutable copy of `params` used as `π_ref`.
pub fn make_reference<S: Scalar>(params: &ModelParameters<S>) -> FrozenReference<S> {
    FrozenReference::new(params.clone())
}

/// Mean length-normalized log-probability of positives and of all negatives.
pub fn probe_means<S: Scalar>(
    params: &ModelParameters<S>,
    probe: &Dataset,
) -> Result<(S, S), TrainError> {
    const CHUNK: usize = 16;
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for chunk in probe.examples().chunks(CHUNK) {
        let items: Vec<ScoringItem<'_>> = chunk
            .iter()
            .map(|ex| {
                ScoringItem::new(
                    ex.context.tokens(),
                    ex.candidates().map(|a| a.tokens()).collect(),
                )
            })
            .collect();
        let scores = params.score_items(&items)?;
        for (ex, lps) in chunk.iter().zip(scores) {
            for (i, (lp, answer)) in lps.into_iter().zip(ex.candidates()).enumerate() {
                let avg = lp * inverse_len::<S>(answer.len());
                if i == 0 {
                    pos.push(avg);
                } else {
                    neg.push(avg);
                }
            }
        }
    }
    let mean = |v: Vec<S>| -> S {
        if v.is_empty() {
            S::zero()
        } else {
            let n = S::from_usize(v.len()).expect("count fits");
            v.into_iter().fold(S::zero(), |a, b| a + b) / n
        }
    };
    Ok((mean(pos), mean(neg)))
}

/// Example order for every step: per-epoch seeded shuffles cut into batches.
struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
}

impl BatchSampler {
    fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        let mut s = Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            cursor: n,
            batch_size,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order.sort_unstable();
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            self.reshuffle();
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }
}

/// Trains `params` for `config.steps` AdamW updates.
///
/// Trace rows are written at step 0, every `probe_every` steps and at the
/// final step. A row holds the minibatch loss evaluated at that step's
/// parameters and the probe-set means for the same parameters.
pub fn train<S: Scalar>(
    mut params: ModelParameters<S>,
    dataset: &Dataset,
    probe: &Dataset,
    reference: Option<&FrozenReference<S>>,
    config: &TrainConfig,
) -> Result<(ModelParameters<S>, TrainingTrace), TrainError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::Config("training dataset is empty".into()));
    }
    let method = config.objective.method;
    if method.needs_reference() && reference.is_none() {
        return Err(ObjectiveError::MissingReference { method }.into());
    }
    dataset.require_negatives(config.objective.negatives_used())?;
    dataset.validate_for(params.config())?;
    probe.validate_for(params.config())?;

    let mut sampler = BatchSampler::new(dataset.len(), config.batch_size, config.seed);
    let mut state = AdamState::new(params.num_params());
    let mut trace = TrainingTrace::default();
    let mut flat = params.flatten();

    for step in 0..=config.steps {
        let indices = sampler.next_batch();
        let batch: Vec<&PreferenceExample> =
            indices.iter().map(|&i| &dataset.examples()[i]).collect();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, true)?;
        let loss = batch_loss(&mut tape, &bound, reference, &batch, &config.objective).map_err(
            |e| match e {
                ObjectiveError::Model(ModelError::Tensor(TensorError::NonFinite { .. })) => {
                    TrainError::NonFinite { step }
                }
                other => other.into(),
            },
        )?;
        let total = tape.item(loss.total);
        if !total.is_finite() {
            return Err(TrainError::NonFinite { step });
        }
        let record = step % config.probe_every == 0 || step == config.steps;
        if record {
            let (pos, neg) = probe_means(&params, probe)?;
            trace.rows.push(TraceRow {
                step,
                total_loss: total.to_f64_lossless(),
                sft_loss: tape.item(loss.sft).to_f64_lossless(),
                pref_loss: loss.pref.map_or(0.0, |v| tape.item(v).to_f64_lossless()),
                probe_pos_alp: pos.to_f64_lossless(),
                probe_neg_alp: neg.to_f64_lossless(),
            });
        }
        if step == config.steps {
            break;
        }
        tape.backward(loss.total).map_err(ModelError::from)?;
        let grads: Vec<S> = bound
            .vars()
            .iter()
            .flat_map(|&v| tape.grad(v).iter().copied())
            .collect();
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFinite { step });
        }
        adamw_step(
            &mut flat,
            &grads,
            &mut state,
            config.learning_rate,
            &config.adamw,
        )?;
        params.assign_flat(&flat)?;
    }
    Ok((params, trace))
}

/// Trains with an automatic reference: an SFT phase of `ref_steps` produces
/// `π_ref`, then the preference objective runs for the remaining steps.
/// Other methods train normally.
pub fn train_with_auto_reference<S: Scalar>(
    params: ModelParameters<S>,
    dataset: &Dataset,
    probe: &Dataset,
    config: &TrainConfig,
    ref_steps: usize,
) -> Result<(ModelParameters<S>, TrainingTrace), TrainError> {
    let method = config.objective.method;
    if !method.needs_reference() {
        return train(params, dataset, probe, None, config);
    }
    if ref_steps == 0 || ref_steps >= config.steps {
        return Err(TrainError::Config(format!(
            "ref_steps must lie in 1..{}, got {ref_steps}",
            config.steps
        )));
    }
    let sft_config = TrainConfig {
        steps: ref_steps,
        objective: ObjectiveConfig {
            method: Method::Sft,
            ..config.objective
        },
        ..*config
    };
    let (sft_params, mut trace) = train(params, dataset, probe, None, &sft_config)?;
    let reference = make_reference(&sft_params);
    let pref_config = TrainConfig {
        steps: config.steps - ref_steps,
        seed: config.seed.wrapping_add(1),
        ..*config
    };
    let (final_params, tail) = train(sft_params, dataset, probe, Some(&reference), &pref_config)?;
    // The first row of the second phase repeats the last row of the first.
    trace.rows.pop();
    trace.rows.extend(tail.rows.into_iter().map(|mut r| {
        r.step += ref_steps;
        r
    }));
    Ok((final_params, trace))
}
