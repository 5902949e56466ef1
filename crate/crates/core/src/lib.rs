//! Black-box detection of poisoned (trigger-bearing) inputs to a possibly
//! backdoored classifier.
//!
//! The pipeline probes the classifier with synthetic images built from a
//! tiny clean validation set: patches of the input pasted into validation
//! samples (and vice versa) over a pool of central regions, plus Gaussian
//! perturbations over a pool of variances. The resulting five metric
//! vectors feed per-metric LOF novelty detectors whose confidence scores a
//! meta LOF fuses into one score; inputs scoring below a threshold are
//! flagged as poisoned.
//!
//! Modules follow the pipeline: [`image`]/[`noise`]/[`io`] hold tensors and
//! primitives, [`blackbox`] the classifier boundary and synthetic oracles,
//! [`metrics`] the five behavioral metrics, [`novelty`] the LOF stack,
//! [`detector`] training/detection/threshold search, [`eval`] reporting.

pub mod blackbox;
pub mod detector;
pub mod error;
pub mod eval;
pub mod image;
pub mod io;
pub mod metrics;
pub mod noise;
pub mod novelty;
pub mod scalar;

pub use error::{Error, Result};
pub use image::{ImageTensor, LabelId, PoolConfig, RegionSpec};
pub use noise::Seed;

/// Scalar type the pipeline's analysis layer runs in.
pub type Scalar = f64;

/// LOF model at the pipeline scalar.
pub type Lof = novelty::LofModel<Scalar>;
