//! ReLU-based feature fusion (RBFF) for aerial scene classification.
//!
//! The crate runs a MobileNetV2 feature extractor from a portable weight
//! container, ranks its inverted-residual blocks by how much the BN layer
//! between two ReLUs changes their zero volume, fuses globally pooled BN
//! activations of the selected blocks, and classifies the fused features
//! with PCA, LDA and a one-vs-rest linear SVM.

pub mod config;
pub mod container;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod graph;
pub mod pipeline;
pub mod preprocess;
pub mod reduce;
pub mod significance;
pub mod svm;
pub mod tensor;
pub mod toy;

pub use error::{Error, Result};
