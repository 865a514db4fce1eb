//! SemanticKITTI-format scans, labels, poses and calibration.
//!
//! On disk a scan is a flat array of little-endian `f32` quadruples
//! `(x, y, z, remission)` and a label file a flat array of little-endian
//! `u32` values packing `(instance << 16) | semantic`. In memory coordinates
//! are widened to `f64`; the widening is exact, so every parsed scan writes
//! back to the same bytes.

mod classmap;
mod pose;
mod scan;
mod sequence;
mod synthetic;

use nalgebra::Point3;

pub use classmap::{ClassMap, HARD_TRAIN_CLASSES};
pub use pose::{format_calib, format_poses, parse_calib, parse_poses, POSE_TOLERANCE};
pub use scan::{parse_labels, parse_scan, write_labels, write_scan};
pub use sequence::{Sequence, SequenceIndex};
pub use synthetic::{
    kitti_like_calib, make_synthetic_sequence, ObjectShape, ObjectSpec, ScanTruth, SyntheticConfig,
    SyntheticSequence,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FrameTag {
    #[default]
    Sensor,
    World,
}

/// An ordered point list with per-point remission.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point3<f64>>,
    remission: Vec<f64>,
    frame_tag: FrameTag,
}

impl PointCloud {
    /// Sensor-frame cloud. Fails when lengths differ or a value is not finite.
    pub fn new(points: Vec<Point3<f64>>, remission: Vec<f64>) -> Result<Self> {
        if points.len() != remission.len() {
            return Err(Error::ShapeError(format!(
                "{} points but {} remission values",
                points.len(),
                remission.len()
            )));
        }
        let finite = points
            .iter()
            .all(|p| p.x.is_finite() && p.y.is_finite() && p.z.is_finite())
            && remission.iter().all(|r| r.is_finite());
        if !finite {
            return Err(Error::NumericError("non-finite point or remission".into()));
        }
        Ok(Self {
            points,
            remission,
            frame_tag: FrameTag::Sensor,
        })
    }

    pub(crate) fn from_parts_unchecked(
        points: Vec<Point3<f64>>,
        remission: Vec<f64>,
        frame_tag: FrameTag,
    ) -> Self {
        debug_assert_eq!(points.len(), remission.len());
        Self {
            points,
            remission,
            frame_tag,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn remission(&self) -> &[f64] {
        &self.remission
    }

    pub fn frame_tag(&self) -> FrameTag {
        self.frame_tag
    }

    pub fn set_frame_tag(&mut self, frame: FrameTag) {
        self.frame_tag = frame;
    }

    pub fn push(&mut self, p: Point3<f64>, remission: f64) {
        self.points.push(p);
        self.remission.push(remission);
    }

    pub fn extend_from(&mut self, other: &PointCloud) {
        self.points.extend_from_slice(&other.points);
        self.remission.extend_from_slice(&other.remission);
    }

    /// Sub-cloud in the order of `indices`.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            remission: indices.iter().map(|&i| self.remission[i]).collect(),
            frame_tag: self.frame_tag,
        }
    }

    /// Rounds every value to the nearest `f32`, i.e. what a write/parse
    /// cycle through the scan format produces.
    pub fn quantized(&self) -> PointCloud {
        let q = |v: f64| v as f32 as f64;
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| Point3::new(q(p.x), q(p.y), q(p.z)))
                .collect(),
            remission: self.remission.iter().map(|&r| q(r)).collect(),
            frame_tag: self.frame_tag,
        }
    }

    /// Axis-aligned bounds `(min, max)`, `None` for an empty cloud.
    pub fn bounding_box(&self) -> Option<(Point3<f64>, Point3<f64>)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (
                Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z)),
                Point3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z)),
            )
        }))
    }
}

/// Per-point semantic class and instance ID, parallel to a [`PointCloud`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelSet {
    semantic: Vec<u16>,
    instance: Vec<u16>,
}

impl LabelSet {
    pub fn new(semantic: Vec<u16>, instance: Vec<u16>) -> Result<Self> {
        if semantic.len() != instance.len() {
            return Err(Error::ShapeError(format!(
                "{} semantic but {} instance labels",
                semantic.len(),
                instance.len()
            )));
        }
        Ok(Self { semantic, instance })
    }

    pub fn from_packed(packed: &[u32]) -> Self {
        Self {
            semantic: packed.iter().map(|&v| (v & 0xFFFF) as u16).collect(),
            instance: packed.iter().map(|&v| (v >> 16) as u16).collect(),
        }
    }

    pub fn packed(&self) -> Vec<u32> {
        self.semantic
            .iter()
            .zip(&self.instance)
            .map(|(&s, &i)| ((i as u32) << 16) | s as u32)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.semantic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.semantic.is_empty()
    }

    pub fn semantic(&self) -> &[u16] {
        &self.semantic
    }

    pub fn instance(&self) -> &[u16] {
        &self.instance
    }

    pub fn instance_mut(&mut self) -> &mut [u16] {
        &mut self.instance
    }

    pub fn semantic_mut(&mut self) -> &mut [u16] {
        &mut self.semantic
    }

    pub fn push(&mut self, semantic: u16, instance: u16) {
        self.semantic.push(semantic);
        self.instance.push(instance);
    }

    pub fn extend_from(&mut self, other: &LabelSet) {
        self.semantic.extend_from_slice(&other.semantic);
        self.instance.extend_from_slice(&other.instance);
    }

    pub fn select(&self, indices: &[usize]) -> LabelSet {
        LabelSet {
            semantic: indices.iter().map(|&i| self.semantic[i]).collect(),
            instance: indices.iter().map(|&i| self.instance[i]).collect(),
        }
    }

    pub fn max_instance(&self) -> u16 {
        self.instance.iter().copied().max().unwrap_or(0)
    }

    /// Errors unless `self` has exactly `cloud.len()` entries.
    pub fn check_parallel(&self, cloud: &PointCloud) -> Result<()> {
        if self.len() != cloud.len() {
            return Err(Error::ShapeError(format!(
                "{} labels for {} points",
                self.len(),
                cloud.len()
            )));
        }
        Ok(())
    }
}
