//! Procedurally generated matrix-reasoning problems, a β-VAE that learns a
//! disentangled panel representation, and a Wild Relation Network that reasons
//! over it.  Everything runs on the small autodiff engine in [`tensor`].

pub mod error;
pub mod eval;
pub mod pgm;
pub mod tensor;
pub mod vae;
pub mod wren;

pub use error::{Error, Result};
