//! Synthetic sensor question answering with sensor-mismatched negatives.
//!
//! A context reads `[BOS, sensor, task, cue, object, region, hint, SEP]`. The
//! cue is a raw appearance level; what it means depends on the sensor. The
//! correct answer is `[object, attribute]` where the attribute comes from the
//! sensor's own reading of the cue. Negatives use the attribute another sensor
//! (or a plain camera) would assign to the same cue. Each task keeps a Latin
//! square of readings, so all four readings of a cue are distinct.
//!
//! The hint is how the scene looks to a plain camera. With probability
//! `bias_strength` it shows the camera reading, which is also the attribute of
//! one negative; otherwise it shows the correct attribute. Copying the hint is
//! a shortcut that likelihood training picks up, and it inflates the
//! camera-reading negative.
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{DataError, Dataset, PreferenceExample, Sensor, Task};
use crate::model::TokenSequence;

/// Fixed symbolic vocabulary of the corpus.
pub mod vocab {
    pub const BOS: u32 = 0;
    pub const SEP: u32 = 1;
    // 2 is unused.
    pub const SENSOR_BASE: u32 = 3;
    pub const TASK_BASE: u32 = 6;
    pub const CUE_BASE: u32 = 12;
    pub const CUES: u32 = 4;
    pub const OBJECT_BASE: u32 = 16;
    pub const OBJECTS: u32 = 8;
    pub const REGION_BASE: u32 = 24;
    pub const REGIONS: u32 = 4;
    pub const ATTRIBUTE_BASE: u32 = 28;
    /// Smallest vocabulary that holds every token the generator emits.
    pub const MIN_VOCAB: usize = (ATTRIBUTE_BASE + 6 * CUES) as usize;
    pub const CONTEXT_LEN: usize = 8;
    pub const ANSWER_LEN: usize = 2;
}

use vocab::*;

/// Reading offsets per task: columns are thermal, depth, xray, plain camera.
const READINGS: [[u32; 4]; 6] = [
    [0, 1, 2, 3],
    [1, 3, 0, 2],
    [2, 0, 3, 1],
    [3, 2, 1, 0],
    [1, 0, 3, 2],
    [2, 3, 0, 1],
];
const CAMERA: usize = 3;
/// Mismatched readings available per question (two other sensors + camera).
pub const MAX_NEGATIVES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorConfig {
    pub seed: u64,
    /// Training records per sensor.
    pub n_per_sensor: usize,
    /// Evaluation and neutral records per sensor.
    pub n_eval_per_sensor: usize,
    /// Negatives stored per record.
    pub k: usize,
    /// Probability that the context hint shows the camera reading, a negative.
    pub bias_strength: f64,
    pub vocab_size: usize,
    pub max_seq_len: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_per_sensor: 200,
            n_eval_per_sensor: 100,
            k: 3,
            bias_strength: 0.8,
            vocab_size: 64,
            max_seq_len: 48,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |m: String| Err(DataError::Config(m));
        if self.n_per_sensor == 0 || self.n_eval_per_sensor == 0 {
            return fail("record counts must be positive".into());
        }
        if self.k == 0 || self.k > MAX_NEGATIVES {
            return fail(format!("k must be in 1..={MAX_NEGATIVES}, got {}", self.k));
        }
        if !(0.0..=1.0).contains(&self.bias_strength) {
            return fail(format!(
                "bias_strength {} outside [0, 1]",
                self.bias_strength
            ));
        }
        if self.vocab_size < MIN_VOCAB {
            return fail(format!(
                "vocab_size {} below the {MIN_VOCAB} tokens the corpus uses",
                self.vocab_size
            ));
        }
        if self.max_seq_len < CONTEXT_LEN + ANSWER_LEN {
            return fail(format!(
                "max_seq_len {} below the {} tokens of context plus answer",
                self.max_seq_len,
                CONTEXT_LEN + ANSWER_LEN
            ));
        }
        Ok(())
    }
}

/// Train, held-out evaluation, and neutral splits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub train: Dataset,
    pub eval: Dataset,
    pub neutral: Dataset,
}

fn attribute(task: Task, reader: usize, cue: u32) -> u32 {
    ATTRIBUTE_BASE + task.index() as u32 * CUES + (cue + READINGS[task.index()][reader]) % CUES
}

fn other_object(rng: &mut ChaCha8Rng, object: u32, taken: &[u32]) -> u32 {
    loop {
        let o = rng.random_range(0..OBJECTS);
        if o != object && !taken.contains(&o) {
            return o;
        }
    }
}

struct Scene {
    sensor: Sensor,
    task: Task,
    cue: u32,
    object: u32,
    context: TokenSequence,
}

impl Scene {
    fn answer(&self, object: u32, reader: usize) -> TokenSequence {
        TokenSequence::new(vec![
            OBJECT_BASE + object,
            attribute(self.task, reader, self.cue),
        ])
    }

    fn positive(&self) -> TokenSequence {
        self.answer(self.object, self.sensor.index())
    }
}

fn scene(rng: &mut ChaCha8Rng, sensor: Sensor, task: Task, cfg: &GeneratorConfig) -> Scene {
    let cue = rng.random_range(0..CUES);
    let object = rng.random_range(0..OBJECTS);
    let region = rng.random_range(0..REGIONS);
    let hint_reader = if rng.random_bool(cfg.bias_strength) {
        CAMERA
    } else {
        sensor.index()
    };
    let context = TokenSequence::new(vec![
        BOS,
        SENSOR_BASE + sensor.index() as u32,
        TASK_BASE + task.index() as u32,
        CUE_BASE + cue,
        OBJECT_BASE + object,
        REGION_BASE + region,
        attribute(task, hint_reader, cue),
        SEP,
    ]);
    Scene {
        sensor,
        task,
        cue,
        object,
        context,
    }
}

fn sensor_question(
    rng: &mut ChaCha8Rng,
    id: String,
    s: Scene,
    cfg: &GeneratorConfig,
) -> PreferenceExample {
    let mut readers: Vec<usize> = (0..=CAMERA).filter(|&r| r != s.sensor.index()).collect();
    readers.shuffle(rng);
    let negatives = readers
        .into_iter()
        .take(cfg.k)
        .map(|reader| s.answer(s.object, reader))
        .collect();
    PreferenceExample {
        id,
        sensor: s.sensor,
        task: s.task,
        positive: s.positive(),
        context: s.context,
        negatives,
    }
}

/// Same question format, but every candidate carries the correct attribute and
/// only the object differs; negatives name objects absent from the context.
fn completion_item(
    rng: &mut ChaCha8Rng,
    id: String,
    s: Scene,
    cfg: &GeneratorConfig,
) -> PreferenceExample {
    let mut used = Vec::new();
    let negatives = (0..cfg.k)
        .map(|_| {
            let o = other_object(rng, s.object, &used);
            used.push(o);
            s.answer(o, s.sensor.index())
        })
        .collect();
    PreferenceExample {
        id,
        sensor: s.sensor,
        task: s.task,
        positive: s.positive(),
        context: s.context,
        negatives,
    }
}

fn split(
    cfg: &GeneratorConfig,
    stream: u64,
    prefix: &str,
    per_sensor: usize,
    make: fn(&mut ChaCha8Rng, String, Scene, &GeneratorConfig) -> PreferenceExample,
) -> Result<Dataset, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let mut examples = Vec::with_capacity(per_sensor * Sensor::ALL.len());
    for i in 0..per_sensor {
        for sensor in Sensor::ALL {
            let task = Task::ALL[i % Task::ALL.len()];
            let id = format!("{prefix}-{:06}", examples.len());
            let s = scene(&mut rng, sensor, task, cfg);
            examples.push(make(&mut rng, id, s, cfg));
        }
    }
    Dataset::new(examples)
}

/// Builds all three splits. Each split draws from its own random stream, so the
/// evaluation and neutral splits do not depend on `n_per_sensor`.
pub fn generate(cfg: &GeneratorConfig) -> Result<Corpus, DataError> {
    cfg.validate()?;
    Ok(Corpus {
        train: split(cfg, 0, "train", cfg.n_per_sensor, sensor_question)?,
        eval: split(cfg, 1, "eval", cfg.n_eval_per_sensor, sensor_question)?,
        neutral: split(cfg, 2, "neutral", cfg.n_eval_per_sensor, completion_item)?,
    })
}
