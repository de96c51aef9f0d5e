//! Non-neural core of a sim-to-real RGBD pose estimation pipeline.
//!
//! The crate covers the pieces around the networks: domain-randomization of
//! synthetic RGBD frames, geometric preprocessing of depth crops, deterministic
//! keypoint voting with an SVD rigid fit, ADD/ADD-S evaluation and reality-gap
//! statistics, and mesh-based grasp generation and selection.
//!
//! All operations are pure functions of their inputs and seeds. Parallel
//! paths (rayon) produce bit-identical results to their sequential order.

pub mod augment;
pub mod bbox;
pub mod camera;
pub mod cloud;
pub mod color;
pub mod error;
pub mod geometry;
pub mod grasp;
pub mod image;
pub mod io;
pub mod mesh;
pub mod metrics;
pub mod noise;
pub mod pose;
pub mod se3;

pub use bbox::BoundingBox2D;
pub use camera::CameraIntrinsics;
pub use cloud::PointCloud;
pub use error::{Error, Result};
pub use image::{DepthImage, Mask, Raster, RgbImage};
pub use mesh::TriangleMesh;
pub use se3::PoseSE3;
