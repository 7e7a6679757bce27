//! Depth-aware scene recognition engine: a small-kernel depth CNN with
//! weakly supervised patch pretraining and spatial pyramid pooling, an LSTM
//! temporal embedding for RGB-D video, late RGB-D fusion, and the
//! preprocessing and evaluation procedures around them.

pub mod analysis;
pub mod data;
pub mod error;
pub mod experiments;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Gradients, Tensor};
