//! Same-class neighbor penalization for topology-aware segmentation, with
//! the losses, metrics, model and synthetic data needed to exercise it.

pub mod datagen;
pub mod dataset;
pub mod distance;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod scnp;
pub mod tensor;
pub mod tns;
pub mod train;

pub use error::{Error, Result};
