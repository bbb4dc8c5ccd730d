//! Fiber-diameter modeling and inverse design for electrospinning.

pub mod bundle;
pub mod canon;
pub mod chemistry;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod imc;
pub mod interpret;
pub mod learners;
pub mod matrix;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod sampling;
pub mod stats;
pub mod synth;
pub mod workflow;

pub use error::{Error, Result};
