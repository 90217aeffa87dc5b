//! Algorithms for learned animation degradation and video super-resolution:
//! vector quantization, the multi-scale VQGAN, the degradation pipeline, the
//! recurrent VSR network, dataset preparation and evaluation metrics.

pub mod autograd;
pub mod checkpoint;
pub mod dataset;
pub mod degrade;
pub mod error;
pub mod eval;
pub mod frame;
pub mod gan;
pub mod nn;
pub mod perceptual;
pub mod resample;
pub mod seed;
pub mod tensor;
pub mod vq;
pub mod vqgan;
pub mod vsr;

pub use error::{Error, Result};
pub use frame::{Clip, Frame};
pub use tensor::{Real, Tensor};
