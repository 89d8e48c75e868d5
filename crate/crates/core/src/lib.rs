//! Desk-scale autolabeling pipeline: 2D boxes + LiDAR + images in, pseudo
//! 3D box labels out.
//!
//! The flow has three learned stages sharing one self-contained reverse-mode
//! autodiff engine: foreground segmentation of the frustum cloud and the
//! image crop, point-cloud enrichment with a multimodal attention generator,
//! and 7-parameter box regression trained with a distance-IoU loss. A
//! synthetic scene generator with KITTI-format output substitutes for
//! full-scale data so the whole pipeline trains and verifies on one CPU.
//!
//! Numeric kernels (tensors, box geometry) are generic over the scalar type
//! via [`scalar::Scalar`]; the pipeline itself runs at f64 (see the aliases
//! at the crate root).

pub mod autodiff;
pub mod boxreg;
pub mod config;
pub mod dataio;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod gradcheck;
pub mod pointgen;
pub mod raster;
pub mod rng;
pub mod scalar;
pub mod segmentation;
pub mod training;

pub use autodiff::{Tensor, Tensor64};
pub use error::{Error, Result};
pub use scalar::Scalar;

/// f64 oriented box used by the pipeline.
pub type Box3D64 = geometry::Box3D<f64>;
/// f32 oriented box.
pub type Box3D32 = geometry::Box3D<f32>;
/// f32 tensor.
pub type Tensor32 = Tensor<f32>;
