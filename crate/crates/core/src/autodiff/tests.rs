use std::sync::Arc;

use proptest::prelude::*;

use super::suite::{check_ops, FD_STEP, FD_TOLERANCE};
use super::*;

fn matrix(tape: &mut Tape<f64>, rows: usize, cols: usize, values: &[f64]) -> Var {
    tape.param(vec![rows, cols], values.to_vec()).unwrap()
}

#[test]
fn matmul_identity_and_projector() {
    let mut tape = Tape::new();
    let eye = matrix(&mut tape, 2, 2, &[1.0, 0.0, 0.0, 1.0]);
    let b = matrix(&mut tape, 2, 2, &[1.0, 2.0, 3.0, 4.0]);
    let y = tape.matmul(eye, b).unwrap();
    assert_eq!(tape.value(y), &[1.0, 2.0, 3.0, 4.0]);

    let proj = matrix(&mut tape, 2, 2, &[1.0, 0.0, 0.0, 0.0]);
    let c = matrix(&mut tape, 2, 2, &[5.0, 6.0, 7.0, 8.0]);
    let y = tape.matmul(proj, c).unwrap();
    assert_eq!(tape.value(y), &[5.0, 6.0, 0.0, 0.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::new();
    let a = matrix(&mut tape, 2, 3, &[0.0; 6]);
    let b = matrix(&mut tape, 2, 2, &[0.0; 4]);
    let err = tape.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        TensorError::Shape {
            op: "matmul",
            left: vec![2, 3],
            right: vec![2, 2]
        }
    );
    assert!(err.to_string().contains("[2, 3]") && err.to_string().contains("[2, 2]"));
}

#[test]
fn matmul_gradient_of_sum_matches_finite_differences() {
    let params: Vec<f64> = (0..20)
        .map(|i| ((i * 37 % 17) as f64 / 4.25) - 2.0)
        .collect();
    let mut f = |p: &[f64]| -> Result<(f64, Vec<f64>), TensorError> {
        let mut tape = Tape::new();
        let a = tape.param(vec![3, 4], p[..12].to_vec())?;
        let b = tape.param(vec![4, 2], p[12..].to_vec())?;
        let y = tape.matmul(a, b)?;
        let s = tape.sum(y);
        tape.backward(s)?;
        let mut g = tape.grad(a).to_vec();
        g.extend_from_slice(tape.grad(b));
        Ok((tape.item(s), g))
    };
    let report = finite_diff_check(&mut f, &params, FD_STEP, CoordinateSample::All).unwrap();
    assert!(report.max_rel_error < FD_TOLERANCE, "{report:?}");
}

#[test]
fn log_softmax_closed_forms() {
    let mut tape = Tape::new();
    let x = tape.constant(vec![1, 16], vec![0.0; 16]).unwrap();
    let y = tape.log_softmax(x).unwrap();
    for &v in tape.value(y) {
        assert!((v + 16f64.ln()).abs() < 1e-15);
        assert!((v + 2.772589).abs() < 1e-6);
    }
    let x = tape.constant(vec![2], vec![0.0, 3f64.ln()]).unwrap();
    let y = tape.log_softmax(x).unwrap();
    assert!((tape.value(y)[0] + 4f64.ln()).abs() < 1e-15);
    assert!((tape.value(y)[1] - 0.75f64.ln()).abs() < 1e-15);
}

#[test]
fn log_softmax_rejects_non_finite() {
    let mut tape = Tape::new();
    let x = tape.constant(vec![2], vec![0.0, f64::NAN]).unwrap();
    assert!(matches!(
        tape.log_softmax(x),
        Err(TensorError::NonFinite { op: "log_softmax" })
    ));
}

#[test]
fn elementwise_closed_forms() {
    let mut tape = Tape::new();
    let x = tape.constant(vec![3], vec![0.0, -50.0, 50.0]).unwrap();
    let s = tape.sigmoid(x);
    assert_eq!(tape.value(s)[0], 0.5);
    let ls = tape.log_sigmoid(x);
    let v = tape.value(ls).to_vec();
    assert!((v[0] + std::f64::consts::LN_2).abs() < 1e-15);
    assert!(v[1].is_finite() && (v[1] + 50.0).abs() < 1e-12);
    assert!(v[2] <= 0.0 && v[2] > -1e-20);
}

#[test]
fn backward_of_sum_and_mean() {
    let mut tape = Tape::new();
    let x = tape.param(vec![2, 3], vec![0.3; 6]).unwrap();
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x), &[1.0; 6]);

    let mut tape = Tape::new();
    let x = tape.param(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let m = tape.mean(x);
    tape.backward(m).unwrap();
    assert_eq!(tape.grad(x), &[0.25; 4]);
}

#[test]
fn backward_rejects_non_scalar_root() {
    let mut tape = Tape::new();
    let x = tape.param(vec![2], vec![1.0, 2.0]).unwrap();
    let y = tape.scale(x, 2.0);
    assert_eq!(
        tape.backward(y),
        Err(TensorError::NonScalarRoot { shape: vec![2] })
    );
}

#[test]
fn repeated_backward_accumulates() {
    let mut tape = Tape::new();
    let x = tape.param(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
    let y = tape.gelu(x);
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    let once = tape.grad(x).to_vec();
    tape.backward(s).unwrap();
    for (twice, one) in tape.grad(x).iter().zip(&once) {
        assert_eq!(*twice, 2.0 * one);
    }
    tape.zero_grad();
    assert!(tape.grad(x).iter().all(|&g| g == 0.0));
}

#[test]
fn sum_of_two_graph_copies_doubles_gradient() {
    let values = vec![0.4, -1.3, 0.9, 1.7, -0.2, 0.05];
    let single = {
        let mut tape = Tape::new();
        let x = tape.param(vec![2, 3], values.clone()).unwrap();
        let y = tape.log_softmax(x).unwrap();
        let sq = tape_sq(&mut tape, y);
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        tape.grad(x).to_vec()
    };
    let mut tape = Tape::new();
    let x = tape.param(vec![2, 3], values).unwrap();
    let y1 = tape.log_softmax(x).unwrap();
    let sq1 = tape_sq(&mut tape, y1);
    let s1 = tape.sum(sq1);
    let y2 = tape.log_softmax(x).unwrap();
    let sq2 = tape_sq(&mut tape, y2);
    let s2 = tape.sum(sq2);
    let root = tape.add(s1, s2).unwrap();
    tape.backward(root).unwrap();
    for (d, s) in tape.grad(x).iter().zip(&single) {
        assert_eq!(*d, 2.0 * s);
    }
}

fn tape_sq(tape: &mut Tape<f64>, v: Var) -> Var {
    tape.mul(v, v).unwrap()
}

#[test]
fn constants_receive_no_gradient_flow() {
    let mut tape = Tape::new();
    let c = tape.constant(vec![2], vec![1.0, 2.0]).unwrap();
    let p = tape.param(vec![2], vec![3.0, 4.0]).unwrap();
    let y = tape.mul(c, p).unwrap();
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(p), &[1.0, 2.0]);
    assert_eq!(tape.grad(c), &[0.0, 0.0]);
}

#[test]
fn every_op_passes_gradient_check() {
    for check in check_ops(11, None).unwrap() {
        assert!(check.passed(), "{} failed: {:?}", check.op, check.report);
    }
}

#[test]
fn corrupted_backward_rule_is_caught_and_named() {
    let checks = check_ops(11, Some(OpKind::LayerNorm)).unwrap();
    let failed: Vec<OpKind> = checks
        .iter()
        .filter(|c| !c.passed())
        .map(|c| c.op)
        .collect();
    assert_eq!(failed, vec![OpKind::LayerNorm]);
}

#[test]
fn gradcheck_quadratic_and_constant() {
    let mut square =
        |p: &[f64]| -> Result<(f64, Vec<f64>), TensorError> { Ok((p[0] * p[0], vec![2.0 * p[0]])) };
    let r = finite_diff_check(&mut square, &[3.0], 1e-4, CoordinateSample::All).unwrap();
    assert!((r.numeric - 6.0).abs() < 1e-7);
    assert!(r.max_rel_error < 1e-6);

    let mut constant =
        |_: &[f64]| -> Result<(f64, Vec<f64>), TensorError> { Ok((4.2, vec![0.0, 0.0])) };
    let r = finite_diff_check(&mut constant, &[1.0, 2.0], 1e-4, CoordinateSample::All).unwrap();
    assert_eq!(r.max_rel_error, 0.0);
}

#[test]
fn gradcheck_rejects_non_finite_objective() {
    let mut bad = |p: &[f64]| -> Result<(f64, Vec<f64>), TensorError> {
        Ok((if p[0] > 1.0 { f64::INFINITY } else { p[0] }, vec![1.0]))
    };
    let err = finite_diff_check(&mut bad, &[1.0], 1e-4, CoordinateSample::All).unwrap_err();
    assert_eq!(err, TensorError::NonFiniteObjective);
}

#[test]
fn gradcheck_subsample_is_seeded() {
    let mut f = |p: &[f64]| -> Result<(f64, Vec<f64>), TensorError> {
        Ok((
            p.iter().map(|x| x * x).sum(),
            p.iter().map(|x| 2.0 * x).collect(),
        ))
    };
    let params: Vec<f64> = (0..200).map(|i| i as f64 * 0.01).collect();
    let sample = CoordinateSample::Random { count: 64, seed: 3 };
    let a = finite_diff_check(&mut f, &params, 1e-4, sample).unwrap();
    let b = finite_diff_check(&mut f, &params, 1e-4, sample).unwrap();
    assert_eq!(a.checked, 64);
    assert_eq!(a, b);
}

#[test]
fn shared_prefix_attention_matches_separate_sequences() {
    // Rows 0..3 are a shared prefix; rows 3 and 4 belong to two continuations.
    let d = 4;
    let q: Vec<f64> = (0..5 * d)
        .map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0)
        .collect();
    let k: Vec<f64> = (0..5 * d)
        .map(|i| ((i * 5 % 13) as f64 - 6.0) / 4.0)
        .collect();
    let v: Vec<f64> = (0..5 * d)
        .map(|i| ((i * 3 % 7) as f64 - 3.0) / 2.0)
        .collect();
    let mut tape = Tape::new();
    let layout = AttentionLayout::new(vec![
        vec![0],
        vec![0, 1],
        vec![0, 1, 2],
        vec![0, 1, 2, 3],
        vec![0, 1, 2, 4],
    ])
    .unwrap();
    let (qv, kv, vv) = (
        tape.constant(vec![5, d], q.clone()).unwrap(),
        tape.constant(vec![5, d], k.clone()).unwrap(),
        tape.constant(vec![5, d], v.clone()).unwrap(),
    );
    let packed = tape.attention(qv, kv, vv, 2, Arc::new(layout)).unwrap();
    let packed = tape.value(packed).to_vec();

    let rows = |sel: &[usize], src: &[f64]| -> Vec<f64> {
        sel.iter()
            .flat_map(|&r| src[r * d..(r + 1) * d].to_vec())
            .collect()
    };
    let seq = [0, 1, 2, 4];
    let (qs, ks, vs) = (
        tape.constant(vec![4, d], rows(&seq, &q)).unwrap(),
        tape.constant(vec![4, d], rows(&seq, &k)).unwrap(),
        tape.constant(vec![4, d], rows(&seq, &v)).unwrap(),
    );
    let plain = tape
        .attention(qs, ks, vs, 2, Arc::new(AttentionLayout::causal(4)))
        .unwrap();
    assert_eq!(&packed[4 * d..5 * d], &tape.value(plain)[3 * d..4 * d]);
}

#[test]
fn layout_rejects_non_causal_rows() {
    assert!(AttentionLayout::new(vec![vec![0], vec![1, 0]]).is_err());
    assert!(AttentionLayout::new(vec![vec![0], vec![0]]).is_err());
}

proptest! {
    #[test]
    fn exp_log_softmax_rows_sum_to_one(row in proptest::collection::vec(-30.0f64..30.0, 1..40)) {
        let mut tape = Tape::new();
        let n = row.len();
        let x = tape.constant(vec![1, n], row).unwrap();
        let y = tape.log_softmax(x).unwrap();
        let total: f64 = tape.value(y).iter().map(|v| v.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn op_suite_passes_for_any_seed(seed in 0u64..1000) {
        for check in check_ops(seed, None).unwrap() {
            prop_assert!(check.passed(), "{} failed: {:?}", check.op, check.report);
        }
    }
}
