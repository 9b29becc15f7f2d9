pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod dictionary;
pub mod error;
pub mod gradcheck;
pub mod hsi;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod ops;
pub mod sparse_coding;
pub mod synth;
pub mod tensor;
pub mod train;

pub use autodiff::{Eager, Graph, Parameter, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
