//! Multi-negative preference fine-tuning over a tiny autoregressive model.
//!
//! Everything numeric is generic over [`scalar::Scalar`]; the aliases below fix
//! the scalar to `f64`, which every training and verification path uses.

pub mod autodiff;
pub mod data;
pub mod eval;
pub mod experiment;
pub mod io_util;
pub mod model;
pub mod objectives;
pub mod scalar;
pub mod train;
pub mod verify;

pub type Tensor = autodiff::Tensor<f64>;
pub type Tape = autodiff::Tape<f64>;
pub type ModelParameters = model::ModelParameters<f64>;
pub type FrozenReference = objectives::FrozenReference<f64>;
pub type AdamState = train::AdamState<f64>;
