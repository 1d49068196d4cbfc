use proptest::prelude::*;

use super::*;
use crate::data::{generate, GeneratorConfig, PreferenceExample};
use crate::model::ModelConfig;

fn seq(t: &[u32]) -> TokenSequence {
    TokenSequence::new(t.to_vec())
}

fn model(seed: u64) -> ModelParameters<f64> {
    ModelParameters::init(ModelConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        max_seq_len: 12,
        init_seed: seed,
        ..ModelConfig::default()
    })
    .unwrap()
}

fn uniform() -> ModelParameters<f64> {
    let mut p = model(0);
    p.tensor_mut("head.w").unwrap().values.fill(0.0);
    p
}

fn eval_set(seed: u64) -> Dataset {
    generate(&GeneratorConfig {
        seed,
        n_per_sensor: 1,
        n_eval_per_sensor: 30,
        ..GeneratorConfig::default()
    })
    .unwrap()
    .eval
}

#[test]
fn predict_examples() {
    assert_eq!(predict(&[-1.2, -0.7, -3.0]), 1);
    assert_eq!(predict(&[-1.0, -1.0]), 0);
    assert_eq!(predict(&[-2.0, -1.0, -1.0]), 1);
}

#[test]
fn uniform_model_scores_minus_log_vocab() {
    let p = uniform();
    let scores = score_candidates(
        &p,
        &seq(&[0, 3]),
        &[seq(&[5]), seq(&[6, 7, 8]), seq(&[9, 9])],
    )
    .unwrap();
    for s in scores {
        assert!((s + 64f64.ln()).abs() < 1e-12, "{s}");
    }
}

#[test]
fn scores_match_single_calls() {
    let p = model(1);
    let x = seq(&[0, 3, 6, 12]);
    let cands = [seq(&[30, 16, 2]), seq(&[31, 2]), seq(&[40, 17, 2])];
    let scores = score_candidates(&p, &x, &cands).unwrap();
    for (s, c) in scores.iter().zip(&cands) {
        assert_eq!(*s, p.avg_log_prob(&x, c).unwrap());
    }
}

#[test]
fn candidate_contract() {
    let p = model(1);
    assert!(matches!(
        score_candidates(&p, &seq(&[0]), &[seq(&[1])]),
        Err(EvalError::TooFewCandidates(1))
    ));
    assert!(score_candidates(&p, &seq(&[0]), &[seq(&[1]), seq(&[])]).is_err());
}

#[test]
fn group_averages_are_plain_means() {
    let mut r = EvaluationReport::empty();
    let counts = [(5, 4), (5, 2), (5, 3), (5, 5)];
    for (task, (n, c)) in Task::PERCEPTION.iter().zip(counts) {
        let i = Sensor::Thermal.index() * Task::ALL.len() + task.index();
        r.cells[i].n_items = n;
        r.cells[i].n_correct = c;
    }
    assert!((r.perception_avg(Sensor::Thermal).unwrap() - 70.0).abs() < 1e-12);
    assert_eq!(r.understanding_avg(Sensor::Thermal), None);
    assert_eq!(r.perception_avg(Sensor::Depth), None);
    assert!((r.overall() - 70.0).abs() < 1e-12);
}

#[test]
fn positive_highest_everywhere_gives_100() {
    let ex = PreferenceExample {
        id: "a".into(),
        sensor: Sensor::Xray,
        task: Task::SensorUnderstanding,
        context: seq(&[0, 3]),
        positive: seq(&[10, 2]),
        negatives: vec![seq(&[11, 2]), seq(&[12, 2])],
    };
    let mut p = uniform();
    p.tensor_mut("head.b").unwrap().values[10] = 5.0;
    let r = evaluate(&p, &Dataset::new(vec![ex]).unwrap()).unwrap();
    assert_eq!(r.overall(), 100.0);
    assert_eq!(r.understanding_avg(Sensor::Xray), Some(100.0));
    assert_eq!(r.cell(Sensor::Xray, Task::SensorUnderstanding).n_correct, 1);
}

#[test]
fn untrained_model_is_near_chance() {
    let data = eval_set(4);
    let r = evaluate(&model(5), &data).unwrap();
    assert!(r.n_items() >= 90);
    assert!((r.overall() - 25.0).abs() <= 15.0, "{}", r.overall());
}

#[test]
fn report_csv_layout() {
    let data = eval_set(6);
    let r = evaluate(&model(7), &data).unwrap();
    let csv = r.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "sensor,task,n_items,n_correct,accuracy_pct");
    assert_eq!(lines.len(), 1 + 18 + 6 + 1);
    assert!(lines[1].starts_with("thermal,existence,"));
    assert!(lines
        .last()
        .unwrap()
        .starts_with(&format!("overall,all,{},", data.len())));
    assert_eq!(csv, evaluate(&model(7), &data).unwrap().to_csv());
}

#[test]
fn vocabulary_mismatch_is_rejected() {
    let small = ModelParameters::<f64>::init(ModelConfig {
        vocab_size: 20,
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        max_seq_len: 12,
        init_seed: 0,
    })
    .unwrap();
    assert!(matches!(
        evaluate(&small, &eval_set(1)),
        Err(EvalError::Data(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn predict_ignores_constant_shift(
        scores in prop::collection::vec(-10.0..0.0f64, 2..6),
        c in -5.0..5.0f64,
    ) {
        let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
        // Shifting can merge nearly equal scores; compare against a tie-aware argmax.
        let best = predict(&scores);
        let b2 = predict(&shifted);
        prop_assert!(b2 == best || (shifted[b2] - shifted[best]).abs() < 1e-9);
    }

    #[test]
    fn predict_tracks_permutations(
        scores in prop::collection::vec(-10.0..0.0f64, 2..6),
        rot in 0usize..6,
    ) {
        let n = scores.len();
        let r = rot % n;
        let mut permuted = scores.clone();
        permuted.rotate_left(r);
        let best = predict(&scores);
        let winner = predict(&permuted);
        prop_assert_eq!(permuted[winner], scores[best]);
    }

    #[test]
    fn evaluate_ignores_record_order(seed in 0u64..4, rot in 0usize..90) {
        let data = eval_set(seed);
        let mut records = data.examples().to_vec();
        let n = records.len();
        records.rotate_left(rot % n);
        records.reverse();
        let p = model(seed);
        let a = evaluate(&p, &data).unwrap();
        let b = evaluate(&p, &Dataset::new(records).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }
}
