//! Finite-difference checks of whole training objectives.

use crate::autodiff::suite::FD_STEP;
use crate::autodiff::{
    finite_diff_check, CoordinateSample, Differentiable, GradCheckReport, OpKind, Tape, Var,
};
use crate::data::{generate, GeneratorConfig, PreferenceExample};
use crate::model::{ModelConfig, ModelParameters};
use crate::objectives::{batch_loss, FrozenReference, Method, ObjectiveConfig, ObjectiveError};

pub use crate::autodiff::suite::{check_ops, OpCheck, FD_TOLERANCE};

/// Model used by objective checks: full vocabulary, narrow width.
pub fn tiny_model_config(init_seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size: 64,
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        max_seq_len: 10,
        init_seed,
    }
}

/// Seeded init with matrices scaled up so the checked point is far from uniform.
pub fn spread_params(
    config: ModelConfig,
    scale: f64,
) -> Result<ModelParameters<f64>, ObjectiveError> {
    let mut p = ModelParameters::<f64>::init(config)?;
    for t in p.tensors_mut() {
        if t.shape.len() == 2 {
            t.values.iter_mut().for_each(|v| *v *= scale);
        }
    }
    Ok(p)
}

/// Four seeded training examples with three negatives each.
pub fn check_batch(seed: u64) -> Result<Vec<PreferenceExample>, ObjectiveError> {
    let corpus = generate(&GeneratorConfig {
        seed,
        n_per_sensor: 2,
        n_eval_per_sensor: 1,
        max_seq_len: 10,
        ..GeneratorConfig::default()
    })?;
    Ok(corpus.train.examples()[..4].to_vec())
}

#[derive(Debug, Clone)]
pub struct ObjectiveCheck {
    pub method: Method,
    pub report: GradCheckReport,
}

impl ObjectiveCheck {
    pub fn passed(&self) -> bool {
        self.report.passes(FD_TOLERANCE)
    }
}

/// Compares the analytic gradient of a 4-example minibatch loss with central
/// differences over every parameter of a tiny model.
pub fn check_objective(
    method: Method,
    seed: u64,
    fault: Option<OpKind>,
) -> Result<ObjectiveCheck, ObjectiveError> {
    let params = spread_params(tiny_model_config(seed), 4.0)?;
    let reference = FrozenReference::new(spread_params(tiny_model_config(seed + 1), 4.0)?);
    let examples = check_batch(seed)?;
    let refs: Vec<&PreferenceExample> = examples.iter().collect();
    let config = ObjectiveConfig::with_method(method);

    let mut objective = BatchObjective {
        model_config: *params.config(),
        reference: &reference,
        examples: &refs,
        config: &config,
        fault,
    };
    let report = finite_diff_check(
        &mut objective,
        &params.flatten(),
        FD_STEP,
        CoordinateSample::All,
    )?;
    Ok(ObjectiveCheck { method, report })
}

struct BatchObjective<'a> {
    model_config: ModelConfig,
    reference: &'a FrozenReference<f64>,
    examples: &'a [&'a PreferenceExample],
    config: &'a ObjectiveConfig,
    fault: Option<OpKind>,
}

impl BatchObjective<'_> {
    fn record(&self, flat: &[f64]) -> Result<(Tape<f64>, Vec<Var>, Var), ObjectiveError> {
        let p = ModelParameters::from_flat(self.model_config, flat)?;
        let mut tape = Tape::new();
        if let Some(kind) = self.fault {
            tape.corrupt_backward(kind);
        }
        let bound = p.bind(&mut tape, true)?;
        let loss = batch_loss(
            &mut tape,
            &bound,
            Some(self.reference),
            self.examples,
            self.config,
        )?;
        Ok((tape, bound.vars().to_vec(), loss.total))
    }
}

impl Differentiable<f64> for BatchObjective<'_> {
    type Error = ObjectiveError;

    fn value(&mut self, flat: &[f64]) -> Result<f64, ObjectiveError> {
        let (tape, _, root) = self.record(flat)?;
        Ok(tape.item(root))
    }

    fn gradient(&mut self, flat: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
        let (mut tape, vars, root) = self.record(flat)?;
        tape.backward(root)?;
        Ok(vars.iter().flat_map(|&v| tape.grad(v).to_vec()).collect())
    }
}

/// Runs [`check_objective`] for every method.
pub fn check_objectives(
    seed: u64,
    fault: Option<OpKind>,
) -> Result<Vec<ObjectiveCheck>, ObjectiveError> {
    Method::ALL
        .into_iter()
        .map(|m| check_objective(m, seed, fault))
        .collect()
}
