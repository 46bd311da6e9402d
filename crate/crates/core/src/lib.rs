//! Depth-regularized, level-of-detail Gaussian splatting.
//!
//! The crate covers the full pipeline: the splat model, a differentiable
//! CPU rasterizer that renders color and expected depth, an LOD-aware
//! trainer, the multi-resolution point-cloud builder, the two-file octree
//! store, and a budgeted coarse-to-fine render engine.

pub mod dataprep;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod lod;
pub mod model;
pub mod projection;
pub mod ply;
pub mod raster;
pub mod store;
pub mod trainer;

pub use error::{Error, Result};
