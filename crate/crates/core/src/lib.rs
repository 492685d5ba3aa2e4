//! Multimodal burn-scar segmentation.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod unet;

pub use error::{Error, Result};
pub use tensor::{Element, Tensor};
