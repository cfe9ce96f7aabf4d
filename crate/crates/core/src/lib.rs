//! Sequence classification with hidden conditional random fields that
//! exploit privileged information during training only.
//!
//! The model scores a label through a chain of per-frame hidden states.
//! During training each frame may carry a privileged feature vector that
//! never exists at test time; prediction marginalizes that channel out
//! through a multivariate Student's-t conditional and a codebook
//! quantization of the privileged space. Learning is either maximum
//! likelihood (quasi-Newton) or max-margin (subgradient / bundle), with
//! optional self-adaptive per-sample regularization.
//!
//! Modules:
//! - [`model`]: domain types and the energy function
//! - [`inference`]: exact chain inference, prediction, brute-force oracle
//! - [`robust`]: Student's-t EM, conditional, codebook
//! - [`train`]: maximum-likelihood and max-margin learners
//! - [`fusion`]: ridge-regression modality calibration
//! - [`data`]: dataset formats, normalization, synthesis, bundles
//! - [`harness`]: end-to-end drivers used by the CLI and tests

pub mod data;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod inference;
pub mod model;
pub mod robust;
pub mod train;

pub use error::{Error, Result};
