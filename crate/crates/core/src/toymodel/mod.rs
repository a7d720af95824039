//! The desk-scale target: a trainable per-pixel patch classifier, a
//! synthetic shapes dataset, and (fast) adversarial training.

mod data;
mod linear;
mod net;
mod train;

pub use data::{gen_synthetic_dataset, load_dataset, save_dataset, Sample, ShapeKind, SynthDatasetSpec};
pub use linear::LinearPixelModel;
pub use net::{ModelConfig, ToySegModel};
pub use train::{fast_adt, train, FastAdtConfig, TrainConfig, TrainReport, DIVERGENCE_LOSS};
