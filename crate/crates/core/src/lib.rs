//! High-order paired-ASPP segmentation: the network, its training and
//! inference pipeline, metrics, and the synthetic texture datasets used to
//! exercise it.

pub mod augment;
pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod hr;
pub mod infer;
pub mod metrics;
pub mod model;
pub mod paired_aspp;
pub mod report;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
