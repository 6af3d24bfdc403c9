//! Class-incremental learning with frozen, language-derived multi-prototype
//! classifiers.
//!
//! The pipeline: an agent proposes candidate prompts per class name, the
//! candidates are embedded, filtered, de-duplicated and thinned by
//! farthest-point sampling into a prompt set; the embedded prompt sets form a
//! frozen [`classifier::PrototypeBank`] whose class scores aggregate
//! prototype similarities by LogSumExp; a small [`encoder`] is trained
//! against it task by task under the [`continual`] protocol.

pub mod agent;
pub mod classifier;
pub mod config;
pub mod continual;
pub mod datagen;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod numerics;
pub mod runner;

pub use error::{Error, Result};
