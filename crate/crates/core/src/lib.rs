//! Multi-instance classification with cardinality potentials.
//!
//! Bags of instances are scored by a hidden-variable model whose clique
//! potential depends only on the number of positive instances. The model's
//! instance marginals then weight a bag-level kernel (the cardinality
//! kernel) that feeds a standard SVM.
//!
//! Layout:
//! - [`model`]: bags, labels, count potentials, the linear instance scorer
//! - [`inference`]: exact partition functions, posteriors, marginals and MAP
//! - [`training`]: regularized maximum-likelihood fitting of the scorer
//! - [`kernel`]: instance kernels, the cardinality kernel and Gram matrices
//! - [`svm`]: SMO dual solver over precomputed kernels, one-vs-all
//! - [`data`]: bag datasets on disk, standardization, synthetic generator
//! - [`cli`]: the `cardkernel` command-line tool

pub mod cli;
pub mod data;
pub mod error;
pub mod fingerprint;
pub mod inference;
pub mod kernel;
pub mod math;
pub mod metrics;
pub mod model;
pub mod svm;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
pub use inference::{BagInference, MarginalSet};
pub use model::{Bag, BagLabel, CardinalitySpec, Instance, InstanceModel};
