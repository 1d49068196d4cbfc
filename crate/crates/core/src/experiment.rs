//! Seeded end-to-end runs: generate a corpus, train one method, evaluate.
//!
//! Ablations and method comparisons are lists of [`RunSpec`]s. Every run owns
//! its data, model and optimizer, so runs can execute on separate threads and
//! still produce the same bytes as a sequential sweep.

use std::thread;

use crate::data::{generate, Dataset, GeneratorConfig};
use crate::eval::{evaluate, EvalError, EvaluationReport};
use crate::model::{ModelConfig, ModelError, ModelParameters};
use crate::objectives::{Method, ObjectiveConfig};
use crate::train::{train_with_auto_reference, TrainConfig, TrainError, TrainingTrace};

/// Steps used by the sweeps unless overridden.
pub const DEFAULT_STEPS: usize = 600;
/// Held-out records whose scores are traced during training.
pub const PROBE_SIZE: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl From<ModelError> for RunError {
    fn from(e: ModelError) -> Self {
        RunError::Train(e.into())
    }
}

impl From<crate::data::DataError> for RunError {
    fn from(e: crate::data::DataError) -> Self {
        RunError::Train(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSpec {
    pub data: GeneratorConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// SFT steps that produce the reference for methods that need one.
    pub ref_steps: usize,
}

impl RunSpec {
    /// Defaults everywhere; `seed` drives the corpus, the initialization and
    /// the batch order. `k` is the number of negatives the objective uses, and
    /// the corpus always stores the full set so evaluation stays 4-way.
    pub fn new(method: Method, seed: u64, n_per_sensor: usize, k: usize) -> Self {
        let steps = DEFAULT_STEPS;
        Self {
            data: GeneratorConfig {
                seed,
                n_per_sensor,
                ..GeneratorConfig::default()
            },
            model: ModelConfig {
                init_seed: seed,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                objective: ObjectiveConfig {
                    k,
                    ..ObjectiveConfig::with_method(method)
                },
                steps,
                seed,
                probe_every: steps / 20,
                ..TrainConfig::default()
            },
            ref_steps: steps / 2,
        }
    }

    pub fn method(&self) -> Method {
        self.train.objective.method
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub spec: RunSpec,
    pub params: ModelParameters<f64>,
    pub trace: TrainingTrace,
    pub eval: EvaluationReport,
    pub neutral: EvaluationReport,
}

/// The fixed probe set: the first records of the evaluation split.
pub fn probe_set(eval: &Dataset) -> Dataset {
    eval.head(PROBE_SIZE)
}

pub fn run(spec: &RunSpec) -> Result<RunOutcome, RunError> {
    let corpus = generate(&spec.data)?;
    let probe = probe_set(&corpus.eval);
    let init = ModelParameters::<f64>::init(spec.model)?;
    let (params, trace) =
        train_with_auto_reference(init, &corpus.train, &probe, &spec.train, spec.ref_steps)?;
    let eval = evaluate(&params, &corpus.eval)?;
    let neutral = evaluate(&params, &corpus.neutral)?;
    Ok(RunOutcome {
        spec: *spec,
        params,
        trace,
        eval,
        neutral,
    })
}

/// Runs every spec on up to `workers` threads; results keep the input order.
pub fn run_all(specs: &[RunSpec], workers: usize) -> Vec<Result<RunOutcome, RunError>> {
    let workers = workers.clamp(1, specs.len().max(1));
    let mut slots: Vec<Option<Result<RunOutcome, RunError>>> = specs.iter().map(|_| None).collect();
    thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    specs
                        .iter()
                        .enumerate()
                        .skip(w)
                        .step_by(workers)
                        .map(|(i, s)| (i, run(s)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("run thread panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every spec ran"))
        .collect()
}

/// Worker count from the machine's available parallelism.
pub fn default_workers() -> usize {
    thread::available_parallelism().map_or(1, |n| n.get())
}
