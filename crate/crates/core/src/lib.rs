//! Geometric, probabilistic and evaluation machinery for flexible monocular
//! 3D object detection, runnable end-to-end on synthetic scenes.
//!
//! The crate is organised bottom-up:
//!
//! - [`camera`] – pinhole projection, back-projection, local/global yaw.
//! - [`box3d`] – cuboid corners, the ten projected keypoints, corner loss.
//! - [`represent`] – inside/outside representative points, offsets,
//!   Gaussian heatmap splats, 2D box distances and the edge-fusion data path.
//! - [`depthsolve`] – the four depth estimators and their ensembles.
//! - [`losses`] – scalar reference implementations of every training loss.
//! - [`kitti`] – label/calibration text formats and difficulty levels.
//! - [`eval3d`] – rotated IoU and AP3D at 11 and 40 recall positions.
//! - [`decode`] – dense head maps: ground-truth encoding and detection decoding.
//! - [`synthgen`] – seeded synthetic scenes and head-map noise injection.
//! - [`study`] – per-estimator depth/AP comparisons over many scenes.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod box3d;
pub mod camera;
pub mod decode;
pub mod depthsolve;
mod error;
pub mod eval3d;
pub mod kitti;
pub mod losses;
pub mod represent;
pub mod study;
pub mod synthgen;

pub use box3d::{Box3D, Keypoints10};
pub use camera::{CameraIntrinsics, Point2, Point3};
pub use decode::{DecodeConfig, Detection, HeadConfig, HeadOutputs};
pub use depthsolve::{DepthEstimate, DepthSource};
pub use error::{Error, Result};
pub use eval3d::{ApMode, EvalConfig};
pub use kitti::{Difficulty, ObjectLabel};
pub use represent::{FeatureMap, Representation};
