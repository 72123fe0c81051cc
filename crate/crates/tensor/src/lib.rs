//! Dense float64 rank-4 tensors, the operator set of a dilated segmentation
//! network, and reverse-mode differentiation through all of it.
//!
//! Graphs are built from reference-counted [`Tensor4`] nodes and are confined
//! to the thread that built them; independent graphs may be built on separate
//! threads. Backward passes are single-threaded.

mod array;
mod error;
mod graph;
mod shape;

pub mod gradcheck;
pub mod layers;
pub mod ops;
pub mod serialize;

pub use array::Array4;
pub use error::{Result, TensorError};
pub use graph::{grad_enabled, no_grad, Tensor4};
pub use layers::{BatchNormParams, Conv2dParams, Module, NamedParam, ParamKind};
pub use shape::{ConvGeometry, Shape4};
