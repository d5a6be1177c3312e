//! Screening pipeline for picture-description speech: CHAT transcript
//! normalization, contextual-embedding pooling, speaker-embedding ingestion,
//! early fusion, a linear SVM trained by dual coordinate descent, and the
//! per-class evaluation tables.
//!
//! The neural extractors live outside this crate. They hand their output over
//! as `.emb` bundle files (see [`bundle`]), one per subject.

pub mod bundle;
pub mod chat;
pub mod error;
pub mod eval;
pub mod features;
pub mod pipeline;
pub mod pooling;
pub mod svm;

pub use error::{Error, Result};
