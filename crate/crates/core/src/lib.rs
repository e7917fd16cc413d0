//! Differentiable photometric-consistency toolkit for self-supervised
//! monocular depth and motion.
//!
//! The crate is `no_std` (it needs `alloc`). It contains:
//!
//! - [`geometry`]: pinhole camera, SE(3) poses, back/forward projection and Jacobians.
//! - [`depth_repr`]: disparity, scaled-disparity and softplus depth decoders, variance regularizer.
//! - [`photometry`]: brightness transform, SSIM, the combined photometric error and depth-error weights.
//! - [`warping`]: inverse-warp view synthesis with bilinear sampling, depth reprojection.
//! - [`losses`]: minimum reprojection, auto-masking, uncertainty, motion sparsity,
//!   depth-consistency gating, smoothness and the named grid configurations.
//! - [`optim`]: Adam over per-pixel depth, pose, motion, uncertainty and brightness parameters.
//! - [`synth`]: procedural ray-cast scene pairs with exact ground truth.
//! - [`metrics`]: depth metrics and scale-consistency reports.
//!
//! Grid convention everywhere: pixel `(i, j)` is `(row, col)`, `u` runs along
//! columns and `v` along rows.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod depth_repr;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod photometry;
pub mod synth;
pub mod warping;

pub use error::{Error, Result};
pub use grid::{DepthMap, Grid, Image, Mask};
