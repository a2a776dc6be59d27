//! Noise-tolerant highlight detection over per-shot visual and audio
//! features: a cross-modal attention block, three recurrent heads, and a
//! trainer that updates the joint head only on shots whose labels either
//! single-modality head finds easy.

pub mod acp;
pub mod autodiff;
pub mod branches;
pub mod checkpoint;
pub mod cleaner;
pub mod config;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod labelgen;
pub mod model;

pub use error::{ClcError, FormatErrorKind, Result};
pub use model::{ClcModel, ModelConfig};
