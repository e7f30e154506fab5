//! Confidence estimation from training consistency.
//!
//! A classifier is trained while every sample's epoch-to-epoch prediction
//! agreement is tracked; a pairwise ranking loss then pushes the model's
//! maximum-softmax output to order samples the way that consistency does.
//! The crate also ships the selective-risk and calibration metrics used to
//! judge the resulting confidence, plus a checker for the bound linking the
//! ranking loss to the AURC gap.

pub mod active;
pub mod checkpoint;
pub mod cli;
pub mod consistency;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod numerics;
pub mod pipeline;
pub mod theory;

pub use error::{Error, Result};
