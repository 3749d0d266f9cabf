//! Multi-view face recognition pipeline.
//!
//! The crate is organized around the stages of the pipeline:
//!
//! - [`imagecore`]: grayscale images, integral images, Gaussian noise
//!   injection and mean-filter denoising
//! - [`surf`]: Hessian interest-point detection and 128-d descriptors
//! - [`template`]: fixed-length per-image feature vectors and labeled
//!   dataset handling
//! - [`classifiers`]: MLP, LVQ and RBF base learners
//! - [`ensemble`]: combined classifiers and decision/rank-level fusion
//!   (majority voting, weighted sum, product, Borda count)
//! - [`evaluation`]: image quality metrics, GAR computation, the three
//!   evaluation cases and the noise sweep
//! - [`datagen`]: deterministic synthetic multi-view face image generator

pub mod classifiers;
pub mod datagen;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod imagecore;
pub mod surf;
pub mod template;

pub use error::{Error, Result};
