//! Distributed Gaussian splatting for isosurface point clouds.
//!
//! The pipeline runs in stages that mirror the modules of this crate:
//!
//! 1. [`iso`] samples a scalar volume and extracts an isosurface point cloud.
//! 2. [`gauss`] builds the orbital camera rig and holds the splat primitives.
//! 3. [`partition`] cuts the cloud into slabs with ghost margins.
//! 4. [`raster`] renders ground truth, masks and trained models, and
//!    differentiates the compositing.
//! 5. [`train`] optimizes one partition's splats against masked views.
//! 6. [`dist`] runs one worker process per partition and merges the results.
//! 7. [`metrics`] scores the merged renders.
//!
//! File formats (PLY, PNG, JSON sidecars) live in [`io`].

pub mod dist;
pub mod error;
pub mod gauss;
pub mod grad;
pub mod io;
pub mod iso;
pub mod metrics;
pub mod partition;
pub mod raster;
pub mod ssim;
pub mod train;

pub use error::{Error, Result};
pub use gauss::{Camera, Gaussian3D, Image, SplatModel};
pub use grad::GradientBuffer;
pub use iso::{PointCloud, Volume, VolumeKind};
pub use partition::Partition;
pub use raster::{RenderConfig, RenderOutput};
pub use train::{TrainConfig, TrainView};
