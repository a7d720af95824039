//! Certified-radius-guided adversarial attacks on pixel-level classifiers.
//!
//! Randomized-smoothing pixel certification turns per-pixel confidence into
//! certified radii and attack weights; white-box (PGD, FGSM, DAG) and
//! bandit-feedback (PBGD) attacks optimise the weighted loss. A small
//! patch-MLP segmentation model, a synthetic dataset and a convex regret lab
//! make everything runnable on a laptop.

// Config checks use `!(x > 0.0)` so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blackbox;
pub mod error;
pub mod ftz;
pub mod gradest;
pub mod metrics;
pub mod normal;
pub mod oracle;
pub mod projections;
pub mod regretlab;
pub mod results;
pub mod rng;
pub mod smoothing;
pub mod tensor;
pub mod toymodel;
pub mod whitebox;

pub use error::{Error, Result};
pub use oracle::{BlackBoxOracle, WhiteBoxOracle};
pub use rng::RandomSource;
pub use tensor::{ImageShape, ImageTensor, LabelMap, NormKind, Perturbation, ProbMap};
