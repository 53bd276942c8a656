//! Recurrent state projection for cell-wise tracking, velocity estimation
//! and grid segmentation on bird's-eye-view rasters.
//!
//! The crate is `no_std` + `alloc`. Enable the `std` feature for runtime
//! SIMD detection in the matrix kernels.

#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod analysis;
pub mod cell;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod projection;
pub mod graph;
pub mod real;
pub mod sim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use real::Real;
pub use tensor::Tensor;
