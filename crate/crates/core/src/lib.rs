//! Foreground branch segmentation trained purely in simulation.
//!
//! The crate covers the whole pipeline: randomized orchard scenes
//! ([`scenegen`]), a ray-casting renderer with exact ground-truth flow
//! ([`render`]), a coarse-to-fine Horn–Schunck flow estimator ([`optflow`]),
//! color-wheel flow encoding ([`flowviz`]), a small reverse-mode autodiff engine
//! ([`grad`]) driving a pix2pix-style segmenter ([`segnet`]), metrics and
//! Welch's t-test ([`eval`]), and the on-disk formats ([`datasetio`]).
//!
//! Geometry, imaging, flow and statistics are generic over [`Real`] (`f32` or
//! `f64`); the aliases below fix the widths the pipeline actually uses.

pub mod config;
pub mod datasetio;
pub mod error;
pub mod eval;
pub mod flowviz;
pub mod geometry;
pub mod grad;
pub mod optflow;
pub mod pipeline;
pub mod raster;
pub mod render;
pub mod scalar;
pub mod scenegen;
pub mod seed;
pub mod segnet;
pub mod texture;

pub use error::{Error, Result};
pub use scalar::Real;

/// Simulation runs in double precision.
pub type Scene = scenegen::Scene<f64>;
pub type CameraFramePair = scenegen::CameraFramePair<f64>;
pub type Vec3 = geometry::Vec3<f64>;
pub type DepthMap = raster::DepthMap<f64>;
pub type SimImage = raster::Image<f64>;
pub type SimFlow = raster::FlowField<f64>;

/// Network tensors and stored files are single precision.
pub type Image = raster::Image<f32>;
pub type FlowField = raster::FlowField<f32>;
