//! Instance IDs for classes whose labels carry none (poles, signs, ...):
//! semantic filter, farthest point sampling with a distance stop, nearest
//! keypoint clustering, then one fresh ID per cluster.

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::geometry::{centroid, distance};
use crate::kitti_io::{LabelSet, PointCloud};

pub const DEFAULT_STOP_DISTANCE: f64 = 2.0;
pub const DEFAULT_MIN_CLUSTER_POINTS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceGenConfig {
    pub target_class: u16,
    /// Sampling stops once the next farthest point is closer than this.
    pub stop_distance: f64,
    /// Smaller clusters are left at instance 0.
    pub min_cluster_points: usize,
}

impl InstanceGenConfig {
    pub fn new(target_class: u16) -> Self {
        Self {
            target_class,
            stop_distance: DEFAULT_STOP_DISTANCE,
            min_cluster_points: DEFAULT_MIN_CLUSTER_POINTS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stop_distance > 0.0 && self.stop_distance.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "stop_distance must be positive, got {}",
                self.stop_distance
            )));
        }
        if self.min_cluster_points == 0 {
            return Err(Error::InvalidConfig(
                "min_cluster_points must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Ascending indices of points labelled `class_id`.
pub fn filter_by_class(labels: &LabelSet, class_id: u16) -> Vec<usize> {
    labels
        .semantic()
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == class_id)
        .map(|(i, _)| i)
        .collect()
}

/// Greedy farthest point sampling seeded at the point farthest from the
/// centroid. Ties go to the lowest index. Returns keypoint indices in
/// selection order; every pair is at least `stop_distance` apart.
pub fn farthest_point_sample(points: &[Point3<f64>], stop_distance: f64) -> Result<Vec<usize>> {
    let center = centroid(points).ok_or(Error::EmptyInput("farthest point sampling"))?;

    let first = argmax(points.iter().map(|p| distance(p, &center)));
    let mut keypoints = vec![first];
    let mut min_dist: Vec<f64> = points.iter().map(|p| distance(p, &points[first])).collect();

    loop {
        let next = argmax(min_dist.iter().copied());
        if min_dist[next] < stop_distance {
            break;
        }
        keypoints.push(next);
        let kp = points[next];
        for (d, p) in min_dist.iter_mut().zip(points) {
            *d = d.min(distance(p, &kp));
        }
    }
    Ok(keypoints)
}

/// Index of the first maximum. NaN never wins.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// Assigns each point to its nearest keypoint; the result holds positions
/// into `keypoints` (not point indices). Ties go to the earlier keypoint.
pub fn cluster_by_keypoints(points: &[Point3<f64>], keypoints: &[usize]) -> Result<Vec<usize>> {
    if keypoints.is_empty() {
        return Err(Error::EmptyInput("keypoint clustering"));
    }
    if let Some(&bad) = keypoints.iter().find(|&&k| k >= points.len()) {
        return Err(Error::ShapeError(format!(
            "keypoint index {bad} out of range for {} points",
            points.len()
        )));
    }
    Ok(points
        .iter()
        .map(|p| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (slot, &k) in keypoints.iter().enumerate() {
                let d = distance(p, &points[k]);
                if d < best_d {
                    best = slot;
                    best_d = d;
                }
            }
            best
        })
        .collect())
}

/// Relabels the instances of `config.target_class`. New IDs are consecutive
/// from `1 + labels.max_instance()` in keypoint selection order; points in
/// clusters below `min_cluster_points` get instance 0. Other classes and all
/// semantic labels are untouched.
pub fn generate_instance_ids(
    cloud: &PointCloud,
    labels: &LabelSet,
    config: &InstanceGenConfig,
) -> Result<LabelSet> {
    config.validate()?;
    labels.check_parallel(cloud)?;

    let members = filter_by_class(labels, config.target_class);
    let mut out = labels.clone();
    if members.is_empty() {
        return Ok(out);
    }

    let points: Vec<Point3<f64>> = members.iter().map(|&i| cloud.points()[i]).collect();
    let keypoints = farthest_point_sample(&points, config.stop_distance)?;
    let assignment = cluster_by_keypoints(&points, &keypoints)?;

    let mut sizes = vec![0usize; keypoints.len()];
    for &c in &assignment {
        sizes[c] += 1;
    }
    let mut next_id = labels.max_instance() as u32 + 1;
    let mut cluster_ids = vec![0u16; keypoints.len()];
    for (slot, &size) in sizes.iter().enumerate() {
        if size >= config.min_cluster_points {
            cluster_ids[slot] = u16::try_from(next_id).map_err(|_| {
                Error::NumericError("instance IDs exhausted the 16-bit range".into())
            })?;
            next_id += 1;
        }
    }

    let instance = out.instance_mut();
    for (&point, &cluster) in members.iter().zip(&assignment) {
        instance[point] = cluster_ids[cluster];
    }
    Ok(out)
}
