//! Review-based rating prediction with hierarchical attention over words and
//! reviews, guided by latent-factor query vectors.
//!
//! This crate is `no_std` (it needs `alloc`). File formats, the command-line
//! front end and everything else that touches the operating system live in
//! the companion `half` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod tape;
pub mod synthetic;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{CorpusError, KernelError, ModelError, TrainError};
pub use params::{Frozen, ParamGrads, ParamId, ParamStore};
pub use tape::{Fault, FaultRule, Gradients, Tape, Var};
pub use tensor::Tensor;
