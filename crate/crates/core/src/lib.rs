//! Video frame prediction guided by motion features leaked from a discriminator.
//!
//! A generator predicts each future frame by applying per-pixel adaptive
//! filters to the current frame. The filters are conditioned on a motion
//! feature supplied by a recurrent motion guider, which itself learns from
//! features leaked by the discriminator's convolutional extractor.

pub mod error;
pub mod cli;
pub mod data;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
