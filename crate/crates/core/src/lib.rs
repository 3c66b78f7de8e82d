//! Single-shot object detection for robot-soccer scenes.

pub mod class;
pub mod data;
pub mod detect;
pub mod error;
pub mod eval;
pub mod model;
pub mod perf;
pub mod tensor;
pub mod train;

pub use class::{Class, NUM_CLASSES};
pub use error::{Error, Result};
