//! Detection of partially manipulated facial deepfakes on top of a frozen
//! vision-transformer encoder: parameter-efficient fine-tuning, hyperspherical
//! feature regularization, metric-learning losses, slerp latent augmentation,
//! and video-level AUROC evaluation.

pub mod backbone;
pub mod config;
pub mod data;
pub mod error;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod peft;
pub mod plot;
pub mod sphere;
pub mod trainer;
pub mod util;

pub use error::{Error, Result};
