//! Preference objectives.
//!
//! Rewards are length-normalized, scaled log-probabilities
//! `r(x, y) = α · log π(y|x) / |y|`. The multi-negative loss averages a
//! margin-shifted logistic loss over `k` negatives,
//! `−(1/k) Σᵢ log σ(r⁺ − r⁻ᵢ − β)`, and the combined objective adds it to the
//! supervised term. DPO, IPO and SimPO baselines consume the same `k`
//! negatives by averaging their pairwise losses.
//!
//! Every loss exists twice: as a plain scalar function (used for reporting and
//! as an independent check) and as a tape graph over a packed minibatch (used
//! for training).

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, TensorError, Var};
use crate::data::{DataError, PreferenceExample};
use crate::model::{
    inverse_len, BoundModel, ModelError, ModelParameters, PackedBatch, ScoringItem, TokenSequence,
};
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum ObjectiveError {
    #[error("negative set is empty")]
    NoNegatives,
    #[error("{method} needs a frozen reference model")]
    MissingReference { method: Method },
    #[error("invalid objective config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<TensorError> for ObjectiveError {
    fn from(e: TensorError) -> Self {
        ObjectiveError::Model(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "sft")]
    Sft,
    #[serde(rename = "saft")]
    Saft,
    #[serde(rename = "sft-dpo")]
    SftDpo,
    #[serde(rename = "sft-ipo")]
    SftIpo,
    #[serde(rename = "sft-simpo")]
    SftSimpo,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Sft,
        Method::Saft,
        Method::SftDpo,
        Method::SftIpo,
        Method::SftSimpo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sft => "sft",
            Method::Saft => "saft",
            Method::SftDpo => "sft-dpo",
            Method::SftIpo => "sft-ipo",
            Method::SftSimpo => "sft-simpo",
        }
    }

    pub fn needs_reference(self) -> bool {
        matches!(self, Method::SftDpo | Method::SftIpo)
    }

    pub fn uses_negatives(self) -> bool {
        self != Method::Sft
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = ObjectiveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| ObjectiveError::Config(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub method: Method,
    /// Reward scale α.
    pub alpha: f64,
    /// Margin β inside the sigmoid.
    pub beta_margin: f64,
    /// Negatives consumed per example.
    pub k: usize,
    pub dpo_beta: f64,
    pub ipo_tau: f64,
    pub simpo_beta: f64,
    pub simpo_gamma: f64,
    /// Weight of the preference term relative to the supervised term.
    pub pref_weight: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            method: Method::Saft,
            alpha: 2.0,
            beta_margin: 0.2,
            k: 3,
            dpo_beta: 0.1,
            ipo_tau: 0.1,
            simpo_beta: 2.0,
            simpo_gamma: 0.2,
            pref_weight: 1.0,
        }
    }
}

impl ObjectiveConfig {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        let positive = [
            ("alpha", self.alpha),
            ("dpo_beta", self.dpo_beta),
            ("ipo_tau", self.ipo_tau),
            ("simpo_beta", self.simpo_beta),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(ObjectiveError::Config(format!(
                "{name} must be positive, got {v}"
            )));
        }
        let nonneg = [
            ("beta_margin", self.beta_margin),
            ("simpo_gamma", self.simpo_gamma),
            ("pref_weight", self.pref_weight),
        ];
        if let Some((name, v)) = nonneg.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(ObjectiveError::Config(format!(
                "{name} must be nonnegative, got {v}"
            )));
        }
        if self.k == 0 {
            return Err(ObjectiveError::Config("k must be at least 1".into()));
        }
        Ok(())
    }

    /// Negatives actually read per example.
    pub fn negatives_used(&self) -> usize {
        if self.method.uses_negatives() {
            self.k
        } else {
            0
        }
    }
}

/// A reward together with the quantities it was computed from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardValue<S> {
    pub value: S,
    pub log_prob: S,
    pub len: usize,
}

impl<S: Scalar> RewardValue<S> {
    pub fn from_log_prob(log_prob: S, len: usize, alpha: S) -> Self {
        Self {
            value: alpha * (log_prob * inverse_len::<S>(len)),
            log_prob,
            len,
        }
    }

    pub fn avg_log_prob(&self) -> S {
        self.log_prob * inverse_len::<S>(self.len)
    }
}

/// `α · log π(y|x) / |y|`.
pub fn reward<S: Scalar>(
    params: &ModelParameters<S>,
    x: &TokenSequence,
    y: &TokenSequence,
    alpha: S,
) -> Result<RewardValue<S>, ObjectiveError> {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail too
    if !(alpha > S::zero()) {
        return Err(ObjectiveError::Config("alpha must be positive".into()));
    }
    if y.is_empty() {
        return Err(ModelError::EmptyAnswer.into());
    }
    let lp = params.answer_log_prob(x, y)?;
    Ok(RewardValue::from_log_prob(lp, y.len(), alpha))
}

/// Bradley–Terry probability that the positive is preferred, `σ(r⁺ − r⁻)`.
pub fn preference_probability<S: Scalar>(r_pos: S, r_neg: S) -> S {
    (r_pos - r_neg).sigmoid()
}

/// `−log σ(r⁺ − r⁻)`.
pub fn pairwise_loss<S: Scalar>(r_pos: S, r_neg: S) -> S {
    -(r_pos - r_neg).log_sigmoid()
}

/// Mean whose value does not depend on the order of `terms`.
fn symmetric_mean<S: Scalar>(mut terms: Vec<S>) -> S {
    terms.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = S::from_usize(terms.len()).expect("length fits");
    terms.into_iter().fold(S::zero(), |acc, t| acc + t) / n
}

/// `−(1/k) Σᵢ log σ(r⁺ − r⁻ᵢ − β)`.
pub fn dna_loss<S: Scalar>(r_pos: S, r_negs: &[S], beta_margin: S) -> Result<S, ObjectiveError> {
    if r_negs.is_empty() {
        return Err(ObjectiveError::NoNegatives);
    }
    let terms = r_negs
        .iter()
        .map(|&r_neg| -((r_pos - r_neg) - beta_margin).log_sigmoid())
        .collect();
    Ok(symmetric_mean(terms))
}

/// DPO log-ratio difference `(π⁺ − ref⁺) − (π⁻ − ref⁻)` on summed log-probs.
pub fn dpo_margin<S: Scalar>(policy_pos: S, ref_pos: S, policy_neg: S, ref_neg: S) -> S {
    (policy_pos - ref_pos) - (policy_neg - ref_neg)
}

/// `mean −log σ(β_d · hᵢ)` over the supplied log-ratio differences.
pub fn dpo_from_margins<S: Scalar>(margins: &[S], dpo_beta: S) -> Result<S, ObjectiveError> {
    if margins.is_empty() {
        return Err(ObjectiveError::NoNegatives);
    }
    Ok(symmetric_mean(
        margins
            .iter()
            .map(|&h| -(dpo_beta * h).log_sigmoid())
            .collect(),
    ))
}

/// `mean (hᵢ − 1/(2τ))²`.
pub fn ipo_from_margins<S: Scalar>(margins: &[S], ipo_tau: S) -> Result<S, ObjectiveError> {
    if margins.is_empty() {
        return Err(ObjectiveError::NoNegatives);
    }
    let target = S::one() / (ipo_tau + ipo_tau);
    Ok(symmetric_mean(
        margins
            .iter()
            .map(|&h| {
                let d = h - target;
                d * d
            })
            .collect(),
    ))
}

/// `mean −log σ(β_s·ā⁺ − β_s·ā⁻ᵢ − γ)` over length-normalized log-probs.
pub fn simpo_from_avg<S: Scalar>(
    avg_pos: S,
    avg_negs: &[S],
    simpo_beta: S,
    simpo_gamma: S,
) -> Result<S, ObjectiveError> {
    if avg_negs.is_empty() {
        return Err(ObjectiveError::NoNegatives);
    }
    Ok(symmetric_mean(
        avg_negs
            .iter()
            .map(|&a| -((simpo_beta * avg_pos - simpo_beta * a) - simpo_gamma).log_sigmoid())
            .collect(),
    ))
}

/// Mean per-token negative log-likelihood of the positive answer.
pub fn sft_loss<S: Scalar>(
    params: &ModelParameters<S>,
    x: &TokenSequence,
    y_pos: &TokenSequence,
) -> Result<S, ObjectiveError> {
    Ok(-params.avg_log_prob(x, y_pos)?)
}

/// Frozen copy of a policy used as `π_ref`.
#[derive(Debug, Clone)]
pub struct FrozenReference<S> {
    params: Arc<ModelParameters<S>>,
}

impl<S: Scalar> FrozenReference<S> {
    pub fn new(params: ModelParameters<S>) -> Self {
        Self {
            params: Arc::new(params),
        }
    }

    pub fn params(&self) -> &ModelParameters<S> {
        &self.params
    }
}

/// Per-example loss decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms<S> {
    pub total: S,
    pub sft: S,
    pub pref: S,
}

fn first_k(example: &PreferenceExample, k: usize) -> Result<&[TokenSequence], ObjectiveError> {
    if example.negatives.len() < k {
        return Err(DataError::Validation {
            id: example.id.clone(),
            reason: format!(
                "has {} negatives, objective needs {k}",
                example.negatives.len()
            ),
        }
        .into());
    }
    Ok(&example.negatives[..k])
}

/// Scores the positive and the first `k` negatives of one example.
fn example_log_probs<S: Scalar>(
    params: &ModelParameters<S>,
    example: &PreferenceExample,
    negatives: &[TokenSequence],
) -> Result<Vec<S>, ObjectiveError> {
    let answers = std::iter::once(&example.positive)
        .chain(negatives)
        .map(|a| a.tokens())
        .collect();
    let item = ScoringItem::new(example.context.tokens(), answers);
    Ok(params.score_items(&[item])?.remove(0))
}

/// Loss of a single example under any method, computed with scalar functions.
pub fn example_loss<S: Scalar>(
    params: &ModelParameters<S>,
    reference: Option<&FrozenReference<S>>,
    example: &PreferenceExample,
    config: &ObjectiveConfig,
) -> Result<LossTerms<S>, ObjectiveError> {
    config.validate()?;
    let negatives = first_k(example, config.negatives_used())?;
    let lps = example_log_probs(params, example, negatives)?;
    let lens: Vec<usize> = std::iter::once(&example.positive)
        .chain(negatives)
        .map(|a| a.len())
        .collect();
    let avg: Vec<S> = lps
        .iter()
        .zip(&lens)
        .map(|(&lp, &n)| lp * inverse_len::<S>(n))
        .collect();
    let sft = -avg[0];
    let lit = S::lit;
    let pref = match config.method {
        Method::Sft => S::zero(),
        Method::Saft => {
            let alpha = lit(config.alpha);
            let rewards: Vec<S> = lps
                .iter()
                .zip(&lens)
                .map(|(&lp, &n)| RewardValue::from_log_prob(lp, n, alpha).value)
                .collect();
            dna_loss(rewards[0], &rewards[1..], lit(config.beta_margin))?
        }
        Method::SftSimpo => simpo_from_avg(
            avg[0],
            &avg[1..],
            lit(config.simpo_beta),
            lit(config.simpo_gamma),
        )?,
        Method::SftDpo | Method::SftIpo => {
            let reference = reference.ok_or(ObjectiveError::MissingReference {
                method: config.method,
            })?;
            let ref_lps = example_log_probs(reference.params(), example, negatives)?;
            let margins: Vec<S> = (1..lps.len())
                .map(|i| dpo_margin(lps[0], ref_lps[0], lps[i], ref_lps[i]))
                .collect();
            if config.method == Method::SftDpo {
                dpo_from_margins(&margins, lit(config.dpo_beta))?
            } else {
                ipo_from_margins(&margins, lit(config.ipo_tau))?
            }
        }
    };
    let pref = pref * lit(config.pref_weight);
    Ok(LossTerms {
        total: sft + pref,
        sft,
        pref,
    })
}

/// Supervised plus multi-negative preference loss for one example.
pub fn saft_loss<S: Scalar>(
    params: &ModelParameters<S>,
    example: &PreferenceExample,
    config: &ObjectiveConfig,
) -> Result<LossTerms<S>, ObjectiveError> {
    if config.method != Method::Saft {
        return Err(ObjectiveError::Config(format!(
            "saft_loss called with method {}",
            config.method
        )));
    }
    example_loss(params, None, example, config)
}

/// DPO against a frozen reference, averaged over the given negatives.
pub fn dpo_loss<S: Scalar>(
    params: &ModelParameters<S>,
    reference: Option<&FrozenReference<S>>,
    x: &TokenSequence,
    y_pos: &TokenSequence,
    y_negs: &[TokenSequence],
    dpo_beta: S,
) -> Result<S, ObjectiveError> {
    let margins = pair_margins(params, reference, Method::SftDpo, x, y_pos, y_negs)?;
    dpo_from_margins(&margins, dpo_beta)
}

/// IPO against a frozen reference, averaged over the given negatives.
pub fn ipo_loss<S: Scalar>(
    params: &ModelParameters<S>,
    reference: Option<&FrozenReference<S>>,
    x: &TokenSequence,
    y_pos: &TokenSequence,
    y_negs: &[TokenSequence],
    ipo_tau: S,
) -> Result<S, ObjectiveError> {
    let margins = pair_margins(params, reference, Method::SftIpo, x, y_pos, y_negs)?;
    ipo_from_margins(&margins, ipo_tau)
}

/// Reference-free SimPO, averaged over the given negatives.
pub fn simpo_loss<S: Scalar>(
    params: &ModelParameters<S>,
    x: &TokenSequence,
    y_pos: &TokenSequence,
    y_negs: &[TokenSequence],
    simpo_beta: S,
    simpo_gamma: S,
) -> Result<S, ObjectiveError> {
    let avg_pos = params.avg_log_prob(x, y_pos)?;
    let avg_negs = y_negs
        .iter()
        .map(|y| params.avg_log_prob(x, y))
        .collect::<Result<Vec<_>, _>>()?;
    simpo_from_avg(avg_pos, &avg_negs, simpo_beta, simpo_gamma)
}

fn pair_margins<S: Scalar>(
    params: &ModelParameters<S>,
    reference: Option<&FrozenReference<S>>,
    method: Method,
    x: &TokenSequence,
    y_pos: &TokenSequence,
    y_negs: &[TokenSequence],
) -> Result<Vec<S>, ObjectiveError> {
    let reference = reference.ok_or(ObjectiveError::MissingReference { method })?;
    if y_negs.is_empty() {
        return Err(ObjectiveError::NoNegatives);
    }
    let score = |p: &ModelParameters<S>| -> Result<Vec<S>, ObjectiveError> {
        let answers = std::iter::once(y_pos)
            .chain(y_negs)
            .map(|a| a.tokens())
            .collect();
        Ok(p.score_items(&[ScoringItem::new(x.tokens(), answers)])?
            .remove(0))
    };
    let (pol, refs) = (score(params)?, score(reference.params())?);
    Ok((1..pol.len())
        .map(|i| dpo_margin(pol[0], refs[0], pol[i], refs[i]))
        .collect())
}

/// Minibatch loss recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BatchLoss {
    pub total: Var,
    pub sft: Var,
    /// Weighted preference term; absent for plain SFT.
    pub pref: Option<Var>,
}

/// Builds the mean minibatch loss `mean(sft) + λ·mean(pref)` on `tape`.
pub fn batch_loss<S: Scalar>(
    tape: &mut Tape<S>,
    model: &BoundModel,
    reference: Option<&FrozenReference<S>>,
    examples: &[&PreferenceExample],
    config: &ObjectiveConfig,
) -> Result<BatchLoss, ObjectiveError> {
    config.validate()?;
    let k = config.negatives_used();
    let mut items = Vec::with_capacity(examples.len());
    for ex in examples {
        let negatives = first_k(ex, k)?;
        let answers = std::iter::once(&ex.positive)
            .chain(negatives)
            .map(|a| a.tokens())
            .collect();
        items.push(ScoringItem::new(ex.context.tokens(), answers));
    }
    let batch = PackedBatch::new(model.config(), &items)?;
    let group = k + 1;
    let pos_idx: Vec<usize> = (0..examples.len()).map(|e| e * group).collect();
    let lit = S::lit;

    let lp = model.answer_log_probs(tape, &batch)?;
    let inv: Vec<S> = batch
        .segments
        .iter()
        .map(|s| inverse_len(s.len()))
        .collect();
    let avg = tape.mul_const(lp, inv)?;
    let avg_pos = tape.select(avg, &pos_idx)?;
    let mean_pos = tape.mean(avg_pos);
    let sft = tape.scale(mean_pos, -S::one());
    if config.method == Method::Sft {
        return Ok(BatchLoss {
            total: sft,
            sft,
            pref: None,
        });
    }

    let pair_pos: Vec<usize> = pos_idx
        .iter()
        .flat_map(|&p| std::iter::repeat_n(p, k))
        .collect();
    let pair_neg: Vec<usize> = pos_idx.iter().flat_map(|&p| (p + 1)..(p + group)).collect();
    let pairwise = |tape: &mut Tape<S>, scores: Var| -> Result<Var, ObjectiveError> {
        let a = tape.select(scores, &pair_pos)?;
        let b = tape.select(scores, &pair_neg)?;
        Ok(tape.sub(a, b)?)
    };
    let neg_log_sigmoid_mean = |tape: &mut Tape<S>, z: Var| -> Var {
        let ls = tape.log_sigmoid(z);
        let m = tape.mean(ls);
        tape.scale(m, -S::one())
    };

    let pref = match config.method {
        Method::Sft => unreachable!(),
        Method::Saft => {
            let rewards = tape.scale(avg, lit(config.alpha));
            let diff = pairwise(tape, rewards)?;
            let shifted = tape.add_scalar(diff, -lit(config.beta_margin));
            neg_log_sigmoid_mean(tape, shifted)
        }
        Method::SftSimpo => {
            let scaled = tape.scale(avg, lit(config.simpo_beta));
            let diff = pairwise(tape, scaled)?;
            let shifted = tape.add_scalar(diff, -lit(config.simpo_gamma));
            neg_log_sigmoid_mean(tape, shifted)
        }
        Method::SftDpo | Method::SftIpo => {
            let reference = reference.ok_or(ObjectiveError::MissingReference {
                method: config.method,
            })?;
            let ref_scores: Vec<S> = reference.params().score_items(&items)?.concat();
            let ref_lp = tape.constant(vec![ref_scores.len()], ref_scores)?;
            let ratio = tape.sub(lp, ref_lp)?;
            let h = pairwise(tape, ratio)?;
            if config.method == Method::SftDpo {
                let z = tape.scale(h, lit(config.dpo_beta));
                neg_log_sigmoid_mean(tape, z)
            } else {
                let target = S::one() / (lit(config.ipo_tau) + lit(config.ipo_tau));
                let d = tape.add_scalar(h, -target);
                let sq = tape.mul(d, d)?;
                tape.mean(sq)
            }
        }
    };
    let pref = tape.scale(pref, lit(config.pref_weight));
    let total = tape.add(sft, pref)?;
    Ok(BatchLoss {
        total,
        sft,
        pref: Some(pref),
    })
}
