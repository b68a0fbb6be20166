//! EfficientSign: an attention-enhanced lightweight CNN for sign-language
//! alphabet recognition, built from scratch.
//!
//! The crate provides:
//! - a dense-tensor reverse-mode autodiff engine (`tensor`),
//! - squeeze-and-excitation and spatial attention gates (`attention`),
//! - MBConv/residual backbone assembly with exact parameter accounting
//!   (`model`),
//! - image loading, augmentation, stratified k-fold splitting, and a
//!   synthetic glyph dataset (`data`),
//! - Adam + cosine-annealing training with best-epoch checkpointing
//!   (`train`),
//! - deep-feature classical classifiers: SMO-trained RBF SVM, KNN, and
//!   L-BFGS logistic regression (`classical`),
//! - a self-describing binary checkpoint container (`checkpoint`),
//! - cross-validation orchestration and Table-style reporting (`report`,
//!   `cv`),
//! - a finite-difference gradient verification suite (`gradcheck`).

pub mod attention;
pub mod checkpoint;
pub mod classical;
pub mod cv;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod report;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
