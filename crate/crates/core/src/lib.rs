//! Sparse multi-scan fusion of hard-class instances and multi-to-single
//! knowledge distillation for LiDAR semantic segmentation.
//!
//! The crate covers the data path (SemanticKITTI formats, poses, synthetic
//! sequences), instance ID generation, ICP registration, hard-class fusion
//! with a copy-paste instance bank, the three distillation losses with
//! analytic gradients, a small per-point teacher/student network, and mIoU
//! evaluation.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod distill;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod gradcheck;
pub mod instance_gen;
pub mod kitti_io;
pub mod metrics;
pub mod registration;
pub mod toynet;
pub mod verify;

pub use error::{Error, Result};
pub use geometry::RigidTransform;
pub use kitti_io::{LabelSet, PointCloud};
