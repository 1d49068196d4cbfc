use std::path::Path;

use crate::io_util::write_atomic;
use crate::train::TrainError;

pub const TRACE_HEADER: &str = "step,total_loss,sft_loss,pref_loss,probe_pos_alp,probe_neg_alp";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub total_loss: f64,
    pub sft_loss: f64,
    pub pref_loss: f64,
    pub probe_pos_alp: f64,
    pub probe_neg_alp: f64,
}

impl TraceRow {
    /// Positive minus negative probe mean.
    pub fn margin(&self) -> f64 {
        self.probe_pos_alp - self.probe_neg_alp
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainingTrace {
    pub fn first(&self) -> Option<&TraceRow> {
        self.rows.first()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step, r.total_loss, r.sft_loss, r.pref_loss, r.probe_pos_alp, r.probe_neg_alp
            ));
        }
        out
    }

    /// Parses a trace CSV; errors carry 1-based line numbers.
    pub fn from_csv(text: &str) -> Result<Self, TrainError> {
        let err = |line: usize, message: String| TrainError::TraceParse { line, message };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == TRACE_HEADER => {}
            Some((_, h)) => return Err(err(1, format!("unexpected header '{h}'"))),
            None => return Err(err(1, "missing header".into())),
        }
        let mut rows: Vec<TraceRow> = Vec::new();
        for (i, line) in lines {
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 6 {
                return Err(err(n, format!("expected 6 fields, found {}", fields.len())));
            }
            let step = fields[0]
                .parse::<usize>()
                .map_err(|e| err(n, format!("step: {e}")))?;
            let mut vals = [0.0; 5];
            for (v, f) in vals.iter_mut().zip(&fields[1..]) {
                *v = f
                    .parse::<f64>()
                    .map_err(|e| err(n, format!("'{f}': {e}")))?;
                if !v.is_finite() {
                    return Err(err(n, format!("non-finite value '{f}'")));
                }
            }
            if rows.last().is_some_and(|r| r.step >= step) {
                return Err(err(n, "step indices must increase".into()));
            }
            rows.push(TraceRow {
                step,
                total_loss: vals[0],
                sft_loss: vals[1],
                pref_loss: vals[2],
                probe_pos_alp: vals[3],
                probe_neg_alp: vals[4],
            });
        }
        Ok(Self { rows })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        Ok(write_atomic(path, self.to_csv().as_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}
