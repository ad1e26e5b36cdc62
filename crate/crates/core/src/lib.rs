//! Gait phase estimation: synthetic data, the TCTST network, masked
//! pre-training, fine-tuning, evaluation and a real-time trajectory planner.

mod error;

pub mod checkpoint;
pub mod data;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod phase;
pub mod planner;
pub mod pretrain;
pub mod train;

pub use error::{Error, Result};
