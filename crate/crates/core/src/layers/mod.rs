//! Composite layers: spatial pyramid pooling and the gated recurrent cell.

pub mod lstm;
pub mod spp;

pub use lstm::{lstm_step, lstm_unroll, LstmState, LstmTrace, LstmWeights};
pub use spp::{spp_forward, SppSpec};
