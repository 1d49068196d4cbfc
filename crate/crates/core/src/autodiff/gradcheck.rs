use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::TensorError;
use crate::scalar::Scalar;

/// Denominator floor of the relative error.
const REL_FLOOR: f64 = 1e-8;

/// A scalar function of a flat parameter vector with an analytic gradient.
pub trait Differentiable<S> {
    type Error: From<TensorError>;

    fn value(&mut self, params: &[S]) -> Result<S, Self::Error>;

    fn gradient(&mut self, params: &[S]) -> Result<Vec<S>, Self::Error>;
}

/// Closures returning `(value, gradient)` are differentiable objectives.
impl<S, E, F> Differentiable<S> for F
where
    F: FnMut(&[S]) -> Result<(S, Vec<S>), E>,
    E: From<TensorError>,
{
    type Error = E;

    fn value(&mut self, params: &[S]) -> Result<S, E> {
        self(params).map(|(v, _)| v)
    }

    fn gradient(&mut self, params: &[S]) -> Result<Vec<S>, E> {
        self(params).map(|(_, g)| g)
    }
}

/// Which coordinates a check perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordinateSample {
    All,
    /// A seeded subsample; falls back to all coordinates when `count` covers them.
    Random {
        count: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares analytic gradients against central differences.
///
/// Relative error per coordinate is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn finite_diff_check<S, D>(
    f: &mut D,
    params: &[S],
    step: f64,
    sample: CoordinateSample,
) -> Result<GradCheckReport, D::Error>
where
    S: Scalar,
    D: Differentiable<S>,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let analytic = f.gradient(params)?;
    assert_eq!(analytic.len(), params.len(), "gradient length mismatch");

    let coords: Vec<usize> = match sample {
        CoordinateSample::Random { count, seed } if count < params.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = index::sample(&mut rng, params.len(), count).into_vec();
            picked.sort_unstable();
            picked
        }
        _ => (0..params.len()).collect(),
    };

    let h = S::lit(step);
    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_coordinate: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: coords.len(),
    };
    for &i in &coords {
        let original = probe[i];
        probe[i] = original + h;
        let up = f.value(&probe)?;
        probe[i] = original - h;
        let down = f.value(&probe)?;
        probe[i] = original;
        if !up.is_finite() || !down.is_finite() {
            return Err(TensorError::NonFiniteObjective.into());
        }
        let numeric = ((up - down) / (h + h)).to_f64_lossless();
        let a = analytic[i].to_f64_lossless();
        let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
        let rel = (a - numeric).abs() / denom;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_coordinate = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}
