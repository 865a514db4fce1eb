//! Synthetic training and evaluation scenes for the toy network.

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{train_targets, TrainBatch};
use crate::error::Result;
use crate::fusion::{fuse_scan, FusedScan, FusionConfig};
use crate::kitti_io::{
    make_synthetic_sequence, ClassMap, ObjectShape, ObjectSpec, PointCloud, Sequence,
    SyntheticConfig,
};

/// Raw class of the hard instance in [`sparse_hard_instance_scene`].
pub const SPARSE_HARD_RAW_CLASS: u16 = 31;

/// Street scene fused at its last scan and turned into a training batch.
pub fn street_batch(
    n_scans: usize,
    seed: u64,
    fusion: &FusionConfig,
) -> Result<(FusedScan, TrainBatch)> {
    let syn = make_synthetic_sequence(&SyntheticConfig::street_scene(n_scans), seed)?;
    let fused = fuse_scan(&syn.sequence, n_scans - 1, fusion)?;
    let batch = TrainBatch::from_fused(&fused, &ClassMap::semantic_kitti(), &fusion.hard_classes)?;
    Ok((fused, batch))
}

/// A training batch plus a full-resolution evaluation scan.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseHardScene {
    pub fused: FusedScan,
    pub batch: TrainBatch,
    pub eval_cloud: PointCloud,
    pub eval_targets: Vec<u32>,
    /// Train ID of the hard instance.
    pub hard_class: u32,
}

/// Road, a parked car and one static bicyclist sampled with 15 points per
/// scan. The current (last) scan keeps 5 of the bicyclist's points, so the
/// fused cloud holds 5 + 3·15 = 50 of them. The evaluation scan is the
/// previous scan at full resolution.
pub fn sparse_hard_instance_scene(seed: u64) -> Result<SparseHardScene> {
    let objects = vec![
        ObjectSpec::new(
            40,
            0,
            ObjectShape::Plane {
                size_x: 14.0,
                size_y: 14.0,
            },
            Vector3::zeros(),
        )
        .with_points(150)
        .with_remission(0.2),
        ObjectSpec::new(
            10,
            1,
            ObjectShape::Box {
                size: Vector3::new(4.0, 1.8, 1.5),
            },
            Vector3::new(3.0, -3.0, 0.0),
        )
        .with_points(60)
        .with_remission(0.6),
        ObjectSpec::new(
            SPARSE_HARD_RAW_CLASS,
            2,
            ObjectShape::Box {
                size: Vector3::new(1.8, 0.6, 1.7),
            },
            Vector3::new(-3.0, 3.0, 0.0),
        )
        .with_points(15)
        .with_remission(0.8),
    ];
    let mut cfg = SyntheticConfig::new(4, objects);
    cfg.sensor_velocity = Vector3::new(0.3, 0.0, 0.0);
    let syn = make_synthetic_sequence(&cfg, seed)?;
    let seq = &syn.sequence;
    let t = seq.len() - 1;

    let hard_object = 2;
    let mut seen = 0;
    let keep: Vec<usize> = syn.truth[t]
        .object
        .iter()
        .enumerate()
        .filter(|(_, &o)| {
            if o != hard_object {
                return true;
            }
            seen += 1;
            seen <= 5
        })
        .map(|(i, _)| i)
        .collect();

    let mut scans = seq.scans().to_vec();
    let mut labels: Vec<_> = (0..seq.len()).map(|i| seq.labels(i).cloned()).collect();
    scans[t] = scans[t].select(&keep);
    labels[t] = labels[t].as_ref().map(|l| l.select(&keep));
    let sparse = Sequence::new(scans, labels, seq.poses().to_vec())?;

    let fusion = FusionConfig {
        window: 3,
        ..FusionConfig::default()
    };
    let fused = fuse_scan(&sparse, t, &fusion)?;
    let class_map = ClassMap::semantic_kitti();
    let batch = TrainBatch::from_fused(&fused, &class_map, &fusion.hard_classes)?;
    let eval_labels = seq.require_labels(t - 1)?;
    Ok(SparseHardScene {
        fused,
        batch,
        eval_cloud: seq.scans()[t - 1].clone(),
        eval_targets: train_targets(eval_labels, &class_map),
        hard_class: class_map.to_train(SPARSE_HARD_RAW_CLASS) as u32,
    })
}

/// `n` points split evenly between class 0 (x < 0) and class 1 (x > 0).
pub fn balanced_two_class_scene(n: usize, seed: u64) -> Result<(PointCloud, Vec<u32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut remission = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for i in 0..n {
        let class = (i % 2) as u32;
        let x = rng.random_range(1.0..8.0) * if class == 0 { -1.0 } else { 1.0 };
        points.push(Point3::new(
            x,
            rng.random_range(-5.0..5.0),
            rng.random_range(-1.0..1.0),
        ));
        remission.push(rng.random_range(0.0..1.0));
        targets.push(class);
    }
    Ok((PointCloud::new(points, remission)?, targets))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_scene_counts() {
        let scene = sparse_hard_instance_scene(1).unwrap();
        let hard = scene.hard_class;
        let cur = scene
            .batch
            .student_targets
            .iter()
            .filter(|&&c| c == hard)
            .count();
        let fused = scene
            .batch
            .teacher_targets
            .iter()
            .filter(|&&c| c == hard)
            .count();
        assert_eq!((cur, fused), (5, 50));
        assert_eq!(scene.batch.student_rows.len(), 5);
        assert_eq!(scene.batch.instances, vec![vec![0, 1, 2, 3, 4]]);
        let eval = scene.eval_targets.iter().filter(|&&c| c == hard).count();
        assert_eq!(eval, 15);
    }

    #[test]
    fn balanced_scene() {
        let (c, t) = balanced_two_class_scene(10, 3).unwrap();
        assert_eq!(c.len(), 10);
        assert_eq!(t.iter().filter(|&&v| v == 1).count(), 5);
    }
}
