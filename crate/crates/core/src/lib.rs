//! Batch estimation of breast percent density from raw mammographic images.
//!
//! The pipeline composes breast-region segmentation, SLIC superpixel
//! partitioning, texture-feature extraction, an SVM ensemble with majority
//! voting, and a case-control statistical evaluation suite.

pub mod calibration;
pub mod config;
pub mod error;
pub mod features;
pub mod forest;
pub mod image;
pub mod phantom;
pub mod pipeline;
pub mod segmentation;
pub mod selection;
pub mod stats;
pub mod superpixel;
pub mod svm;

pub use error::{Error, Result};
