//! Distillation machinery for dual-encoder embedding models over
//! precomputed teacher features: score-matrix losses with exact
//! gradients, greedy grounded-corpus construction, a deterministic
//! trainer, and desk-scale evaluation on synthetic worlds.

pub mod corpus;
pub mod error;
pub mod eval;
mod exec;
pub mod losses;
pub mod model;
pub mod store;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Exec;
