use m2s_core::fusion::{build_instance_db, fuse_scan, FusionConfig, InstanceDatabase};
use m2s_core::instance_gen::{generate_instance_ids, InstanceGenConfig};
use m2s_core::kitti_io::{make_synthetic_sequence, SequenceIndex, SyntheticConfig};
use m2s_core::toynet::scenes::street_batch;
use m2s_core::toynet::{evaluate, train_step, TrainConfig, TrainState};

fn sorted_packed(labels: &m2s_core::LabelSet) -> Vec<u32> {
    let mut v = labels.packed();
    v.sort_unstable();
    v
}

#[test]
fn disk_roundtrip_fuses_like_memory() {
    let syn = make_synthetic_sequence(&SyntheticConfig::street_scene(6), 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    syn.sequence
        .write(dir.path(), &syn.calib_velo_to_cam)
        .unwrap();
    let loaded = SequenceIndex::open(dir.path()).unwrap().load().unwrap();
    assert_eq!(loaded.len(), 6);

    let cfg = FusionConfig::default();
    let mem = fuse_scan(&syn.sequence, 5, &cfg).unwrap();
    let disk = fuse_scan(&loaded, 5, &cfg).unwrap();
    assert_eq!(mem.cloud.len(), disk.cloud.len());
    assert_eq!(mem.origin_index, disk.origin_index);
    assert_eq!(sorted_packed(&mem.labels), sorted_packed(&disk.labels));
    let worst = mem
        .cloud
        .points()
        .iter()
        .zip(disk.cloud.points())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    assert!(worst < 1e-3, "{worst}");
}

#[test]
fn generated_instances_feed_fusion() {
    let syn = make_synthetic_sequence(&SyntheticConfig::street_scene(5), 2).unwrap();
    let mut seq = syn.sequence.clone();
    let gen = InstanceGenConfig::new(81);
    for i in 0..seq.len() {
        let labels = seq.require_labels(i).unwrap().clone();
        let relabelled = generate_instance_ids(&seq.scans()[i], &labels, &gen).unwrap();
        assert_eq!(relabelled.semantic(), labels.semantic());
        seq.set_labels(i, relabelled).unwrap();
    }
    let fused = fuse_scan(&seq, 4, &FusionConfig::default()).unwrap();
    fused.validate().unwrap();
    assert!(fused.appended_len() > 0);
    assert!(fused
        .labels
        .semantic()
        .iter()
        .skip(fused.current_len())
        .all(|&c| FusionConfig::default().is_hard(c)));
}

#[test]
fn instance_db_roundtrip() {
    let syn = make_synthetic_sequence(&SyntheticConfig::street_scene(4), 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let db = build_instance_db(&syn.sequence, &FusionConfig::default(), dir.path()).unwrap();
    // bicyclist and traffic sign per scan
    assert_eq!(db.len(), 8);
    let back = InstanceDatabase::load(dir.path()).unwrap();
    assert_eq!(back.len(), db.len());
    for (a, b) in db.entries.iter().zip(&back.entries) {
        assert_eq!(a.key, b.key);
        assert_eq!(a.class_id, b.class_id);
        assert_eq!(a.fused.len(), b.fused.len());
        assert_eq!(a.fused_origin, b.fused_origin);
        assert_eq!(a.fused_labels, b.fused_labels);
    }
}

#[test]
fn street_training_is_seeded() {
    let (_, batch) = street_batch(5, 3, &FusionConfig::default()).unwrap();
    let cfg = TrainConfig {
        steps: 10,
        ..TrainConfig::default()
    };
    let run = || {
        let mut state = TrainState::new(&cfg, 20, 7).unwrap();
        let reports: Vec<_> = (0..cfg.steps)
            .map(|_| train_step(&mut state, &batch).unwrap())
            .collect();
        (reports, state)
    };
    let (ra, sa) = run();
    let (rb, sb) = run();
    assert_eq!(ra, rb);
    assert_eq!(sa.student, sb.student);
    assert!(ra.last().unwrap().total < ra[0].total);
    assert!(ra.iter().all(|r| r.total.is_finite()));

    let syn = make_synthetic_sequence(&SyntheticConfig::street_scene(5), 3).unwrap();
    let targets = m2s_core::toynet::train_targets(
        syn.sequence.require_labels(0).unwrap(),
        &m2s_core::kitti_io::ClassMap::semantic_kitti(),
    );
    let report = evaluate(
        &sa.student,
        &[(&syn.sequence.scans()[0], &targets)],
        &std::collections::BTreeSet::from([0]),
    )
    .unwrap();
    assert_eq!(report.per_class.len(), 20);
    assert!((0.0..=1.0).contains(&report.mean));
}
