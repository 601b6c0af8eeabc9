//! Cough-sound respiratory disease classification toolkit.
//!
//! The pipeline runs from raw recordings to an AUROC report:
//! onset-based cough segmentation, log-mel features, a small vision
//! transformer trained with teacher-student self-supervision and
//! supervised fine-tuning (optionally with sharpness-aware minimization),
//! and subject-level evaluation.

pub mod audio_io;
pub mod augment;
pub mod config;
pub mod autodiff;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod segmenter;
pub mod ssl;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
