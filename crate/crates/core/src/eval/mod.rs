//! Multiple-choice evaluation by length-normalized log-probability.

use std::path::Path;

use crate::data::{DataError, Dataset, Sensor, Task};
use crate::io_util::write_atomic;
use crate::model::{inverse_len, ModelError, ModelParameters, ScoringItem, TokenSequence};
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("an item needs at least 2 candidates, got {0}")]
    TooFewCandidates(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Average log-probability of every candidate, in the given order.
pub fn score_candidates<S: Scalar>(
    params: &ModelParameters<S>,
    context: &TokenSequence,
    candidates: &[TokenSequence],
) -> Result<Vec<S>, EvalError> {
    if candidates.len() < 2 {
        return Err(EvalError::TooFewCandidates(candidates.len()));
    }
    if candidates.iter().any(|c| c.is_empty()) {
        return Err(ModelError::EmptyAnswer.into());
    }
    let item = ScoringItem::new(
        context.tokens(),
        candidates.iter().map(|c| c.tokens()).collect(),
    );
    let lps = params.score_items(&[item])?.remove(0);
    Ok(lps
        .into_iter()
        .zip(candidates)
        .map(|(lp, c)| lp * inverse_len::<S>(c.len()))
        .collect())
}

/// Index of the highest score; the lowest index wins ties.
pub fn predict<S: Scalar>(scores: &[S]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellCount {
    pub sensor: Sensor,
    pub task: Task,
    pub n_items: usize,
    pub n_correct: usize,
}

impl CellCount {
    pub fn accuracy(&self) -> Option<f64> {
        percent(self.n_correct, self.n_items)
    }
}

fn percent(correct: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| 100.0 * correct as f64 / total as f64)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    /// One cell per (sensor, task), sensors outermost.
    pub cells: Vec<CellCount>,
    /// Mean of positive score minus best negative score.
    pub margin_mean: f64,
    pub margin_min: f64,
}

impl EvaluationReport {
    fn empty() -> Self {
        let cells = Sensor::ALL
            .iter()
            .flat_map(|&sensor| {
                Task::ALL.iter().map(move |&task| CellCount {
                    sensor,
                    task,
                    n_items: 0,
                    n_correct: 0,
                })
            })
            .collect();
        Self {
            cells,
            margin_mean: 0.0,
            margin_min: 0.0,
        }
    }

    pub fn cell(&self, sensor: Sensor, task: Task) -> &CellCount {
        &self.cells[sensor.index() * Task::ALL.len() + task.index()]
    }

    fn group_avg(&self, sensor: Sensor, tasks: &[Task]) -> Option<f64> {
        mean(
            tasks
                .iter()
                .filter_map(|&t| self.cell(sensor, t).accuracy()),
        )
    }

    /// Mean accuracy of the four perception tasks present for `sensor`.
    pub fn perception_avg(&self, sensor: Sensor) -> Option<f64> {
        self.group_avg(sensor, &Task::PERCEPTION)
    }

    /// Mean accuracy of the two understanding tasks present for `sensor`.
    pub fn understanding_avg(&self, sensor: Sensor) -> Option<f64> {
        self.group_avg(sensor, &Task::UNDERSTANDING)
    }

    pub fn n_items(&self) -> usize {
        self.cells.iter().map(|c| c.n_items).sum()
    }

    pub fn n_correct(&self) -> usize {
        self.cells.iter().map(|c| c.n_correct).sum()
    }

    /// Item-level accuracy in percent; 0 for an empty report.
    pub fn overall(&self) -> f64 {
        percent(self.n_correct(), self.n_items()).unwrap_or(0.0)
    }

    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|a| format!("{a:.6}")).unwrap_or_default();
        let mut out = String::from("sensor,task,n_items,n_correct,accuracy_pct\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.sensor,
                c.task.name(),
                c.n_items,
                c.n_correct,
                fmt(c.accuracy())
            ));
        }
        for s in Sensor::ALL {
            out.push_str(&format!(
                "{s},perception_avg,,,{}\n",
                fmt(self.perception_avg(s))
            ));
            out.push_str(&format!(
                "{s},understanding_avg,,,{}\n",
                fmt(self.understanding_avg(s))
            ));
        }
        out.push_str(&format!(
            "overall,all,{},{},{:.6}\n",
            self.n_items(),
            self.n_correct(),
            self.overall()
        ));
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        Ok(write_atomic(path, self.to_csv().as_bytes())?)
    }
}

/// Scores every item's candidates (positive first) and tallies whether the
/// positive wins.
pub fn evaluate<S: Scalar>(
    params: &ModelParameters<S>,
    dataset: &Dataset,
) -> Result<EvaluationReport, EvalError> {
    const CHUNK: usize = 16;
    dataset.validate_for(params.config())?;
    let mut report = EvaluationReport::empty();
    let mut margins = Vec::with_capacity(dataset.len());
    for chunk in dataset.examples().chunks(CHUNK) {
        let items: Vec<ScoringItem<'_>> = chunk
            .iter()
            .map(|ex| {
                ScoringItem::new(
                    ex.context.tokens(),
                    ex.candidates().map(|a| a.tokens()).collect(),
                )
            })
            .collect();
        let all = params.score_items(&items)?;
        for (ex, lps) in chunk.iter().zip(all) {
            let scores: Vec<S> = lps
                .into_iter()
                .zip(ex.candidates())
                .map(|(lp, a)| lp * inverse_len::<S>(a.len()))
                .collect();
            let idx = ex.sensor.index() * Task::ALL.len() + ex.task.index();
            let cell = &mut report.cells[idx];
            cell.n_items += 1;
            if predict(&scores) == 0 {
                cell.n_correct += 1;
            }
            let best_neg =
                scores[1..]
                    .iter()
                    .copied()
                    .fold(S::neg_infinity(), |a, b| if b > a { b } else { a });
            margins.push((scores[0] - best_neg).to_f64_lossless());
        }
    }
    if !margins.is_empty() {
        // Sorted so the mean does not depend on record order.
        margins.sort_by(f64::total_cmp);
        report.margin_mean = margins.iter().sum::<f64>() / margins.len() as f64;
        report.margin_min = margins.iter().copied().fold(f64::INFINITY, f64::min);
    }
    Ok(report)
}

#[cfg(test)]
mod tests;
