//! Multimodal multi-teacher knowledge distillation for short-text risk
//! classification: text, emotion-graph and synthesized-audio teachers
//! distilled into a text-only student.

pub mod audio;
pub mod checkpoint;
pub mod classifier;
pub mod corpus;
pub mod distill;
pub mod emotion;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod fixtures;
pub mod hparams;
pub mod metrics;
pub mod pca;
pub mod tables;
pub mod teacher;
pub mod text_teacher;
pub mod tokenize;
pub mod train;

pub use error::{Error, Result};
