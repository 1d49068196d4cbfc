//! Preference records, dataset files, and the synthetic sensor-QA corpus.

mod generate;
mod io;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{ModelConfig, TokenSequence};

pub use generate::{generate, vocab, Corpus, GeneratorConfig};
pub use io::{load, parse, save, to_canonical_string};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("record {id}: {reason}")]
    Validation { id: String, reason: String },
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sensor {
    Thermal,
    Depth,
    Xray,
}

impl Sensor {
    pub const ALL: [Sensor; 3] = [Sensor::Thermal, Sensor::Depth, Sensor::Xray];

    pub fn name(self) -> &'static str {
        match self {
            Sensor::Thermal => "thermal",
            Sensor::Depth => "depth",
            Sensor::Xray => "xray",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Sensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Existence,
    Counting,
    Position,
    GeneralDescription,
    ContextualUnderstanding,
    SensorUnderstanding,
}

impl Task {
    pub const ALL: [Task; 6] = [
        Task::Existence,
        Task::Counting,
        Task::Position,
        Task::GeneralDescription,
        Task::ContextualUnderstanding,
        Task::SensorUnderstanding,
    ];

    /// Tasks averaged into the perception score.
    pub const PERCEPTION: [Task; 4] = [
        Task::Existence,
        Task::Counting,
        Task::Position,
        Task::GeneralDescription,
    ];

    /// Tasks averaged into the understanding score.
    pub const UNDERSTANDING: [Task; 2] = [Task::ContextualUnderstanding, Task::SensorUnderstanding];

    pub fn name(self) -> &'static str {
        match self {
            Task::Existence => "existence",
            Task::Counting => "counting",
            Task::Position => "position",
            Task::GeneralDescription => "general_description",
            Task::ContextualUnderstanding => "contextual_understanding",
            Task::SensorUnderstanding => "sensor_understanding",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One question with its correct answer and a set of incorrect ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceExample {
    pub id: String,
    pub sensor: Sensor,
    pub task: Task,
    pub context: TokenSequence,
    pub positive: TokenSequence,
    pub negatives: Vec<TokenSequence>,
}

impl PreferenceExample {
    fn invalid(&self, reason: impl Into<String>) -> DataError {
        DataError::Validation {
            id: self.id.clone(),
            reason: reason.into(),
        }
    }

    /// Checks the record-level invariants that hold independent of any model.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.id.is_empty() {
            return Err(self.invalid("empty id"));
        }
        if self.context.is_empty() {
            return Err(self.invalid("empty context"));
        }
        if self.positive.is_empty() {
            return Err(self.invalid("empty positive answer"));
        }
        if self.negatives.is_empty() {
            return Err(self.invalid("no negative answers"));
        }
        for (i, neg) in self.negatives.iter().enumerate() {
            if neg.is_empty() {
                return Err(self.invalid(format!("negative {i} is empty")));
            }
            if *neg == self.positive {
                return Err(self.invalid(format!("negative {i} duplicates the positive answer")));
            }
        }
        Ok(())
    }

    /// Checks vocabulary and length limits of `config`.
    pub fn validate_for(&self, config: &ModelConfig) -> Result<(), DataError> {
        for seq in std::iter::once(&self.positive).chain(&self.negatives) {
            let len = self.context.len() + seq.len();
            if len > config.max_seq_len {
                return Err(self.invalid(format!(
                    "context plus answer has {len} tokens, max_seq_len is {}",
                    config.max_seq_len
                )));
            }
        }
        let all = std::iter::once(&self.context)
            .chain(std::iter::once(&self.positive))
            .chain(&self.negatives);
        for seq in all {
            if let Some(&t) = seq
                .tokens()
                .iter()
                .find(|&&t| t as usize >= config.vocab_size)
            {
                return Err(self.invalid(format!(
                    "token {t} outside vocabulary of size {}",
                    config.vocab_size
                )));
            }
        }
        Ok(())
    }

    /// Positive first, then negatives in stored order.
    pub fn candidates(&self) -> impl Iterator<Item = &TokenSequence> {
        std::iter::once(&self.positive).chain(&self.negatives)
    }
}

/// An ordered collection of validated preference records.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    examples: Vec<PreferenceExample>,
}

impl Dataset {
    pub fn new(examples: Vec<PreferenceExample>) -> Result<Self, DataError> {
        let mut seen = HashSet::new();
        for ex in &examples {
            ex.validate()?;
            if !seen.insert(ex.id.as_str()) {
                return Err(ex.invalid("duplicate id"));
            }
        }
        Ok(Self { examples })
    }

    pub fn examples(&self) -> &[PreferenceExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, PreferenceExample> {
        self.examples.iter()
    }

    pub fn validate_for(&self, config: &ModelConfig) -> Result<(), DataError> {
        self.examples
            .iter()
            .try_for_each(|ex| ex.validate_for(config))
    }

    /// Fails on the first record with fewer than `k` negatives.
    pub fn require_negatives(&self, k: usize) -> Result<(), DataError> {
        match self.examples.iter().find(|ex| ex.negatives.len() < k) {
            Some(ex) => Err(ex.invalid(format!(
                "has {} negatives, objective needs {k}",
                ex.negatives.len()
            ))),
            None => Ok(()),
        }
    }

    /// The first `n` records, in stored order.
    pub fn head(&self, n: usize) -> Dataset {
        Dataset {
            examples: self.examples.iter().take(n).cloned().collect(),
        }
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a PreferenceExample;
    type IntoIter = std::slice::Iter<'a, PreferenceExample>;

    fn into_iter(self) -> Self::IntoIter {
        self.examples.iter()
    }
}
