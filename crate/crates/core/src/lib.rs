//! Stage-wise LoRA fine-tuning for compound expression recognition.
//!
//! The crate is a desk-scale pipeline: a small reverse-mode autodiff engine,
//! low-rank adapters, a feed-forward classifier standing in for a vision
//! language model, two-stage training over basic then compound emotion
//! labels, a rule-based context prompt builder, a parser for the model's
//! structured answers, and an accuracy-table evaluator.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod io;
pub mod labels;
pub mod lora;
pub mod model;
pub mod parser;
pub mod pipeline;
pub mod prompt;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
