//! Toolkit for deciding when a robot should open a conversation with an
//! approaching visitor: landmark featurization, a block recurrent pose
//! forecaster, wait/speak/listen classifiers, the per-frame timing
//! classifier and a streaming decision service.

pub mod classifier;
pub mod error;
pub mod forecaster;
pub mod frames;
pub mod metrics;
pub mod model_io;
pub mod pipeline;
pub mod serve;
pub mod synthgen;
pub mod windows;
pub mod workflow;

pub use error::{Error, Result};
