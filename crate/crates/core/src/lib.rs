//! Recurrent stereo matching with a stacked recurrent hourglass aggregator.

pub mod aggregate;
pub mod autodiff;
pub mod checkpoint;
pub mod cost;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod harness;
pub mod head;
pub mod model;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod tensor;

pub use autodiff::{no_grad, Gradients, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
