//! Sequence labeling with pretrained bidirectional language model transfer.
//!
//! The crate covers the whole pipeline: a small reverse-mode autodiff
//! kernel, a char-CNN token encoder, a biLSTM language model with
//! ELMo-style contextual embeddings, a CNN-BiLSTM-CRF tagger with
//! cross-domain fine-tuning, a multitask baseline, span-level evaluation,
//! diagnostic probing, and an experiment harness with a synthetic
//! two-domain benchmark.

pub mod autodiff;
pub mod bilm;
pub mod corpus;
pub mod crf;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod harness;
pub mod multitask;
pub mod parallel;
pub mod probe;
pub mod tagger;
pub mod train;

pub use error::{Error, Result};
pub use parallel::Parallelism;
