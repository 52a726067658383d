//! Dense tensors, a reverse-mode autodiff tape with the layer set the models
//! need, ADAM, and the `RVF1` checkpoint container.

mod adam;
mod array;
pub mod checkpoint;
pub mod conv;
mod element;
mod params;
mod tape;

pub use adam::{adam_step, AdamState};
pub use array::Tensor;
pub use element::{gemm, Element, Layout};
pub use params::{Bound, Kind, ParamSet};
pub use tape::{Grads, RunningStats, Tape, Var};


/// Layer behaviour switch for batch norm and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

/// Batch-norm momentum used by every model.
pub const BN_MOMENTUM: f64 = 0.1;
/// Batch-norm variance floor used by every model.
pub const BN_EPS: f64 = 1e-5;
