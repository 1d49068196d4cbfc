//! Per-operation finite-difference checks on seeded random inputs.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{
    finite_diff_check, AttentionLayout, CoordinateSample, GradCheckReport, OpKind, Tape,
    TensorError, Var,
};

/// Step used by every gradient check in the crate.
pub const FD_STEP: f64 = 1e-4;
/// Pass threshold on the maximum relative error.
pub const FD_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct OpCheck {
    pub op: OpKind,
    pub report: GradCheckReport,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.report.passes(FD_TOLERANCE)
    }
}

type Build = fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>;

fn cases() -> Vec<(OpKind, Vec<Vec<usize>>, Build)> {
    vec![
        (OpKind::MatMul, vec![vec![3, 4], vec![4, 2]], |t, v| {
            t.matmul(v[0], v[1])
        }),
        (OpKind::Add, vec![vec![2, 3], vec![2, 3]], |t, v| {
            t.add(v[0], v[1])
        }),
        (OpKind::Sub, vec![vec![2, 3], vec![2, 3]], |t, v| {
            t.sub(v[0], v[1])
        }),
        (OpKind::Mul, vec![vec![2, 3], vec![2, 3]], |t, v| {
            t.mul(v[0], v[1])
        }),
        (OpKind::AddRow, vec![vec![3, 4], vec![4]], |t, v| {
            t.add_row(v[0], v[1])
        }),
        (OpKind::Scale, vec![vec![5]], |t, v| Ok(t.scale(v[0], 0.7))),
        (OpKind::AddScalar, vec![vec![5]], |t, v| {
            let shifted = t.add_scalar(v[0], 0.3);
            t.mul(shifted, shifted)
        }),
        (OpKind::MulConst, vec![vec![4]], |t, v| {
            t.mul_const(v[0], vec![0.5, -1.5, 2.0, 0.25])
        }),
        (OpKind::Sigmoid, vec![vec![6]], |t, v| Ok(t.sigmoid(v[0]))),
        (OpKind::LogSigmoid, vec![vec![6]], |t, v| {
            Ok(t.log_sigmoid(v[0]))
        }),
        (OpKind::Gelu, vec![vec![6]], |t, v| Ok(t.gelu(v[0]))),
        (OpKind::GatherRows, vec![vec![4, 3]], |t, v| {
            t.gather_rows(v[0], &[2, 0, 2])
        }),
        (OpKind::Select, vec![vec![6]], |t, v| {
            t.select(v[0], &[5, 1, 1])
        }),
        (OpKind::SegmentSum, vec![vec![6]], |t, v| {
            t.segment_sum(v[0], &[0..2, 2..6, 3..4])
        }),
        (OpKind::Sum, vec![vec![2, 3]], |t, v| {
            let s = t.sum(v[0]);
            t.mul(s, s)
        }),
        (OpKind::Mean, vec![vec![2, 3]], |t, v| {
            let m = t.mean(v[0]);
            t.mul(m, m)
        }),
        (OpKind::LogSoftmax, vec![vec![2, 5]], |t, v| {
            t.log_softmax(v[0])
        }),
        (
            OpKind::LayerNorm,
            vec![vec![3, 4], vec![4], vec![4]],
            |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5),
        ),
        (
            OpKind::Attention,
            vec![vec![5, 4], vec![5, 4], vec![5, 4]],
            |t, v| {
                let layout = AttentionLayout::new(vec![
                    vec![0],
                    vec![0, 1],
                    vec![0, 1, 2],
                    vec![0, 1, 3],
                    vec![0, 1, 3, 4],
                ])?;
                t.attention(v[0], v[1], v[2], 2, Arc::new(layout))
            },
        ),
    ]
}

/// Runs every differentiable op through a central-difference check.
///
/// Outputs are reduced with fixed random weights so every output element
/// carries a distinct upstream gradient. `fault` corrupts one backward rule.
pub fn check_ops(seed: u64, fault: Option<OpKind>) -> Result<Vec<OpCheck>, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (op, shapes, build) in cases() {
        let sizes: Vec<usize> = shapes.iter().map(|s| s.iter().product()).collect();
        let total: usize = sizes.iter().sum();
        let params: Vec<f64> = (0..total).map(|_| rng.random_range(-2.0..2.0)).collect();
        let weight_seed = rng.random::<u64>();
        let mut objective = |flat: &[f64]| -> Result<(f64, Vec<f64>), TensorError> {
            let mut tape = Tape::new();
            if let Some(kind) = fault {
                tape.corrupt_backward(kind);
            }
            let mut inputs = Vec::with_capacity(shapes.len());
            let mut offset = 0;
            for (shape, &n) in shapes.iter().zip(&sizes) {
                inputs.push(tape.param(shape.clone(), flat[offset..offset + n].to_vec())?);
                offset += n;
            }
            let y = build(&mut tape, &inputs)?;
            let mut wrng = ChaCha8Rng::seed_from_u64(weight_seed);
            let weights = (0..tape.tensor(y).numel())
                .map(|_| wrng.random_range(-1.0..1.0))
                .collect();
            let weighted = tape.mul_const(y, weights)?;
            let root = tape.sum(weighted);
            tape.backward(root)?;
            let grad = inputs.iter().flat_map(|&v| tape.grad(v).to_vec()).collect();
            Ok((tape.item(root), grad))
        };
        let report = finite_diff_check(&mut objective, &params, FD_STEP, CoordinateSample::All)?;
        out.push(OpCheck { op, report });
    }
    Ok(out)
}
