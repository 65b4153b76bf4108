//! Monocular frontal-view to bird's-eye-view vehicle localization.
//!
//! A four-branch network maps an image crop plus its 2D bounding box to a
//! top-view footprint and to the 3D box (location, size, yaw), trained in
//! two stages. The crate also carries the box geometry, a synthetic scene
//! generator, KITTI label I/O and KITTI-style AP evaluation.

pub mod bev;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod kitti;
pub mod model;
pub mod nn;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use geometry::{BevQuad, BevRect, Box2D, Box3D, CameraIntrinsics, TargetVector};
pub use kitti::{Difficulty, LabelRecord};
pub use model::{Branch, BranchConfig, Model};
pub use synth::{Sample, SynthConfig};
pub use train::{TrainConfig, TrainHistory};
