//! Reverse-mode differentiation over dense `f64` tensors and the classical
//! layers built on it.

mod layers;
mod tape;
mod tensor;

pub use layers::{
    elu, lstm_cell, prenet_apply, softmax, Dense, DenseVars, LstmParams, LstmVars, PreNetParams,
};
pub use tape::{Gradients, OpaqueOp, Tape, Var};
pub use tensor::Tensor;

/// `|a − b| / max(|a|, |b|, floor)`, the comparison used by every gradient check.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
