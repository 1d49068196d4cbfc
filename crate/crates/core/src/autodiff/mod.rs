//! Dense tensors, a dynamic reverse-mode tape and a finite-difference checker.

mod gradcheck;
pub mod suite;
mod tape;
mod tensor;

use std::fmt;

pub use gradcheck::{finite_diff_check, CoordinateSample, Differentiable, GradCheckReport};
pub use tape::{AttentionLayout, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("shape {shape:?} does not describe {len} values")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("{op}: index {index} out of bounds for {bound}")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: empty index list")]
    Empty { op: &'static str },
    #[error("{op}: non-finite input")]
    NonFinite { op: &'static str },
    #[error("backward needs a one-element root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("attention layout row {row} must list ascending keys ending at itself")]
    Layout { row: usize },
    #[error("width {width} is not divisible by {heads} heads")]
    Heads { width: usize, heads: usize },
    #[error("objective returned a non-finite value")]
    NonFiniteObjective,
}

/// Identifier of a recorded operation, used in diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    AddRow,
    Scale,
    AddScalar,
    MulConst,
    Sigmoid,
    LogSigmoid,
    Gelu,
    GatherRows,
    Select,
    SegmentSum,
    Sum,
    Mean,
    LogSoftmax,
    LayerNorm,
    Attention,
}

impl OpKind {
    pub const DIFFERENTIABLE: [OpKind; 19] = [
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::AddRow,
        OpKind::Scale,
        OpKind::AddScalar,
        OpKind::MulConst,
        OpKind::Sigmoid,
        OpKind::LogSigmoid,
        OpKind::Gelu,
        OpKind::GatherRows,
        OpKind::Select,
        OpKind::SegmentSum,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::LogSoftmax,
        OpKind::LayerNorm,
        OpKind::Attention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::AddRow => "add_row",
            OpKind::Scale => "scale",
            OpKind::AddScalar => "add_scalar",
            OpKind::MulConst => "mul_const",
            OpKind::Sigmoid => "sigmoid",
            OpKind::LogSigmoid => "log_sigmoid",
            OpKind::Gelu => "gelu",
            OpKind::GatherRows => "gather_rows",
            OpKind::Select => "select",
            OpKind::SegmentSum => "segment_sum",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::LogSoftmax => "log_softmax",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Attention => "attention",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::DIFFERENTIABLE.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests;
