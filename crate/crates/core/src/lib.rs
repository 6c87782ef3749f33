//! EEG anomaly detection pipeline: preprocessing, window augmentation,
//! Inception networks with transfer learning, a feature-based baseline and
//! leave-one-subject-out evaluation.

pub mod annotations;
pub mod augment;
pub mod baseline;
pub mod corpus;
pub mod edf;
pub mod error;
pub mod eval;
pub mod inception;
pub mod seeds;
pub mod signal;
pub mod store;
pub mod synthgen;
pub mod transfer;

pub use error::{Error, Result};
