//! Progressive local alignment of report words and image pixels.

pub mod align;
pub mod convergence;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod progressive;
pub mod rng;
pub mod synth;
pub mod tensor_io;
pub mod trainer;

pub use error::{Error, Result};
