//! Bank of paired (single-scan, fused) hard-class instances for copy-paste
//! augmentation. A draw pastes both members of a pair under one shared
//! rigid transform: the single-scan member into the current-scan region of
//! a [`FusedScan`] and the fused member's past points into its appended
//! region.
//!
//! On-disk layout:
//!
//! ```text
//! <db>/manifest.txt                 dir sequence scan instance class
//! <db>/<dir>/single.bin, single.label
//! <db>/<dir>/fused.bin, fused.label, fused.origin
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{format_origin, fuse_scan, hard_instances, parse_origin, FusedScan, FusionConfig};
use crate::error::{Error, Result};
use crate::geometry::{centroid, RigidTransform};
use crate::kitti_io::Sequence;
use crate::kitti_io::{parse_labels, parse_scan, write_labels, write_scan, LabelSet, PointCloud};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InstanceKey {
    pub sequence: String,
    pub scan: usize,
    pub instance: u16,
}

impl InstanceKey {
    fn dir_name(&self) -> String {
        format!("{}_{:06}_{:05}", self.sequence, self.scan, self.instance)
    }
}

/// One instance occurrence. The fused member starts with the single-scan
/// member's points, followed by the points fused in from past scans.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceEntry {
    pub key: InstanceKey,
    pub class_id: u16,
    pub single: PointCloud,
    pub single_labels: LabelSet,
    pub fused: PointCloud,
    pub fused_labels: LabelSet,
    /// Relative source scan of each fused point beyond the single prefix.
    pub fused_origin: Vec<i32>,
}

impl InstanceEntry {
    fn past_range(&self) -> std::ops::Range<usize> {
        self.single.len()..self.fused.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InstanceDatabase {
    pub entries: Vec<InstanceEntry>,
}

impl InstanceDatabase {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let db_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| Error::DbWriteError { path, source }
        };
        fs::create_dir_all(root).map_err(db_err(root))?;
        let mut manifest = String::new();
        for entry in &self.entries {
            let name = entry.key.dir_name();
            let dir = root.join(&name);
            fs::create_dir_all(&dir).map_err(db_err(&dir))?;
            let files: [(&str, Vec<u8>); 5] = [
                ("single.bin", write_scan(&entry.single)),
                ("single.label", write_labels(&entry.single_labels)),
                ("fused.bin", write_scan(&entry.fused)),
                ("fused.label", write_labels(&entry.fused_labels)),
                (
                    "fused.origin",
                    format_origin(&entry.fused_origin).into_bytes(),
                ),
            ];
            for (file, bytes) in files {
                let path = dir.join(file);
                fs::write(&path, bytes).map_err(db_err(&path))?;
            }
            manifest += &format!(
                "{name} {} {} {} {}\n",
                entry.key.sequence, entry.key.scan, entry.key.instance, entry.class_id
            );
        }
        let path = root.join("manifest.txt");
        fs::write(&path, manifest).map_err(db_err(&path))?;
        Ok(())
    }

    pub fn load(root: &Path) -> Result<Self> {
        let read = |path: PathBuf| fs::read(&path).map_err(|e| Error::io(&path, e));
        let manifest_path = root.join("manifest.txt");
        let manifest = String::from_utf8_lossy(&read(manifest_path.clone())?).into_owned();
        let mut entries = Vec::new();
        for line in manifest.lines().filter(|l| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::MalformedConfig(format!("manifest line {line:?}"));
            if fields.len() != 5 {
                return Err(bad());
            }
            let key = InstanceKey {
                sequence: fields[1].to_string(),
                scan: fields[2].parse().map_err(|_| bad())?,
                instance: fields[3].parse().map_err(|_| bad())?,
            };
            let class_id = fields[4].parse().map_err(|_| bad())?;
            let dir = root.join(fields[0]);
            let single = parse_scan(&read(dir.join("single.bin"))?)?;
            let single_labels = parse_labels(&read(dir.join("single.label"))?)?;
            let fused = parse_scan(&read(dir.join("fused.bin"))?)?;
            let fused_labels = parse_labels(&read(dir.join("fused.label"))?)?;
            let origin_text =
                String::from_utf8_lossy(&read(dir.join("fused.origin"))?).into_owned();
            let entry = InstanceEntry {
                key,
                class_id,
                single,
                single_labels,
                fused,
                fused_labels,
                fused_origin: parse_origin(&origin_text)?,
            };
            if entry.fused_origin.len() != entry.past_range().len() {
                return Err(bad());
            }
            entries.push(entry);
        }
        Ok(Self { entries })
    }
}

/// Runs hard-class fusion on every scan and records each hard instance as
/// a pair. Coordinates are rounded to `f32` so the bank is identical to
/// what [`InstanceDatabase::load`] returns after a save.
pub fn collect_instance_db(seq: &Sequence, config: &FusionConfig) -> Result<InstanceDatabase> {
    let mut entries = Vec::new();
    for t in 0..seq.len() {
        let labels = seq.require_labels(t)?;
        let instances = hard_instances(labels, config);
        if instances.is_empty() {
            continue;
        }
        let fused = fuse_scan(seq, t, config)?;
        let n = fused.current_len();
        for instance in instances {
            let single_idx: Vec<usize> = (0..n)
                .filter(|&i| {
                    labels.instance()[i] == instance && config.is_hard(labels.semantic()[i])
                })
                .collect();
            let past_idx: Vec<usize> = (n..fused.cloud.len())
                .filter(|&i| fused.labels.instance()[i] == instance)
                .collect();
            let single = fused.cloud.select(&single_idx).quantized();
            let mut fused_cloud = single.clone();
            fused_cloud.extend_from(&fused.cloud.select(&past_idx).quantized());
            let single_labels = fused.labels.select(&single_idx);
            let mut fused_labels = single_labels.clone();
            fused_labels.extend_from(&fused.labels.select(&past_idx));
            entries.push(InstanceEntry {
                key: InstanceKey {
                    sequence: seq.name.split_whitespace().collect::<Vec<_>>().join("_"),
                    scan: seq.first_scan + t,
                    instance,
                },
                class_id: labels.semantic()[single_idx[0]],
                single,
                single_labels,
                fused: fused_cloud,
                fused_labels,
                fused_origin: past_idx
                    .iter()
                    .map(|&i| fused.origin_index[i - n])
                    .collect(),
            });
        }
    }
    Ok(InstanceDatabase { entries })
}

/// [`collect_instance_db`] followed by a save to `out_path`.
pub fn build_instance_db(
    seq: &Sequence,
    config: &FusionConfig,
    out_path: &Path,
) -> Result<InstanceDatabase> {
    let db = collect_instance_db(seq, config)?;
    db.save(out_path)?;
    Ok(db)
}

/// Planar region pasted instances are centered in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PasteBounds {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Default for PasteBounds {
    fn default() -> Self {
        Self {
            x: (-10.0, 10.0),
            y: (-10.0, 10.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PasteRecord {
    pub entry: usize,
    /// Applied to both members of the pair.
    pub transform: RigidTransform,
    pub instance_id: u16,
}

/// Pastes `n` pairs drawn uniformly (with replacement) from `db`. Each pair
/// is recentered on the single member's planar centroid, turned by a yaw
/// in `[0, 2π)` and moved to a uniform position inside `bounds`.
pub fn sample_and_paste(
    scan: &FusedScan,
    db: &InstanceDatabase,
    n: usize,
    bounds: &PasteBounds,
    seed: u64,
) -> Result<(FusedScan, Vec<PasteRecord>)> {
    if n == 0 {
        return Ok((scan.clone(), Vec::new()));
    }
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    scan.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut records = Vec::with_capacity(n);
    let first_id = scan.labels.max_instance() as u32 + 1;
    for k in 0..n as u32 {
        let entry_idx = rng.random_range(0..db.len());
        let yaw = rng.random_range(0.0..std::f64::consts::TAU);
        let x = uniform(&mut rng, bounds.x);
        let y = uniform(&mut rng, bounds.y);
        let entry = &db.entries[entry_idx];
        let c = centroid(entry.single.points()).unwrap_or_else(Point3::origin);
        let transform = RigidTransform::from_yaw(yaw, Vector3::new(x, y, 0.0)).compose(
            &RigidTransform::from_translation(Vector3::new(-c.x, -c.y, 0.0)),
        );
        let instance_id = u16::try_from(first_id + k)
            .map_err(|_| Error::NumericError("instance IDs exhausted the 16-bit range".into()))?;
        records.push(PasteRecord {
            entry: entry_idx,
            transform,
            instance_id,
        });
    }

    let n_cur = scan.current_len();
    let mut cloud = scan.cloud.select(&scan.current_to_fused);
    let mut labels = scan.labels.select(&scan.current_to_fused);
    let appended: Vec<usize> = (n_cur..scan.cloud.len()).collect();
    let mut tail_cloud = scan.cloud.select(&appended);
    let mut tail_labels = scan.labels.select(&appended);
    let mut origin = scan.origin_index.clone();

    for rec in &records {
        let entry = &db.entries[rec.entry];
        for (p, &r) in entry.single.points().iter().zip(entry.single.remission()) {
            cloud.push(rec.transform.apply(p), r);
        }
        for &c in entry.single_labels.semantic() {
            labels.push(c, rec.instance_id);
        }
        for i in entry.past_range() {
            tail_cloud.push(
                rec.transform.apply(&entry.fused.points()[i]),
                entry.fused.remission()[i],
            );
            tail_labels.push(entry.fused_labels.semantic()[i], rec.instance_id);
        }
        origin.extend_from_slice(&entry.fused_origin);
    }

    let current_len = cloud.len();
    cloud.extend_from(&tail_cloud);
    labels.extend_from(&tail_labels);
    let out = FusedScan {
        cloud,
        labels,
        origin_index: origin,
        current_to_fused: (0..current_len).collect(),
        warnings: scan.warnings.clone(),
    };
    out.validate()?;
    Ok((out, records))
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kitti_io::{make_synthetic_sequence, SyntheticConfig};

    fn db_and_scan() -> (InstanceDatabase, FusedScan) {
        let syn = make_synthetic_sequence(&SyntheticConfig::street_scene(5), 2).unwrap();
        let cfg = FusionConfig::default();
        let db = collect_instance_db(&syn.sequence, &cfg).unwrap();
        let scan = fuse_scan(&syn.sequence, 4, &cfg).unwrap();
        (db, scan)
    }

    #[test]
    fn one_entry_per_hard_instance_occurrence() {
        let (db, _) = db_and_scan();
        // bicyclist and traffic sign in each of 5 scans
        assert_eq!(db.len(), 10);
        for e in &db.entries {
            assert_eq!(&e.fused.points()[..e.single.len()], e.single.points());
            assert_eq!(e.fused_origin.len(), e.fused.len() - e.single.len());
        }
    }

    #[test]
    fn no_hard_points_gives_empty_db() {
        let syn = make_synthetic_sequence(&SyntheticConfig::street_scene(3), 2).unwrap();
        let cfg = FusionConfig {
            hard_classes: [99].into_iter().collect(),
            ..FusionConfig::default()
        };
        assert!(collect_instance_db(&syn.sequence, &cfg).unwrap().is_empty());
    }

    #[test]
    fn save_load_round_trip() {
        let (db, _) = db_and_scan();
        let dir = tempfile::tempdir().unwrap();
        db.save(dir.path()).unwrap();
        assert_eq!(InstanceDatabase::load(dir.path()).unwrap(), db);
    }

    #[test]
    fn save_into_file_path_fails() {
        let (db, _) = db_and_scan();
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("occupied");
        fs::write(&file, b"x").unwrap();
        assert!(matches!(db.save(&file), Err(Error::DbWriteError { .. })));
    }

    #[test]
    fn paste_zero_is_identity_and_empty_db_errors() {
        let (db, scan) = db_and_scan();
        let (out, rec) = sample_and_paste(&scan, &db, 0, &PasteBounds::default(), 1).unwrap();
        assert_eq!(out, scan);
        assert!(rec.is_empty());
        assert!(matches!(
            sample_and_paste(
                &scan,
                &InstanceDatabase::default(),
                1,
                &PasteBounds::default(),
                1
            ),
            Err(Error::EmptyDatabase)
        ));
    }

    #[test]
    fn pasted_members_share_one_transform() {
        let (db, scan) = db_and_scan();
        let (out, rec) = sample_and_paste(&scan, &db, 1, &PasteBounds::default(), 9).unwrap();
        let rec = &rec[0];
        let entry = &db.entries[rec.entry];
        let n0 = scan.current_len();
        let ns = entry.single.len();
        for (k, p) in entry.single.points().iter().enumerate() {
            assert_eq!(out.cloud.points()[n0 + k], rec.transform.apply(p));
        }
        let tail_start = out.current_len() + scan.appended_len();
        for (k, i) in entry.past_range().enumerate() {
            assert_eq!(
                out.cloud.points()[tail_start + k],
                rec.transform.apply(&entry.fused.points()[i])
            );
        }
        assert_eq!(out.current_len(), n0 + ns);
        assert!(out.labels.instance()[n0..n0 + ns]
            .iter()
            .all(|&i| i == rec.instance_id));
        assert!(rec.instance_id > scan.labels.max_instance());
    }

    #[test]
    fn paste_is_deterministic() {
        let (db, scan) = db_and_scan();
        let a = sample_and_paste(&scan, &db, 3, &PasteBounds::default(), 5).unwrap();
        let b = sample_and_paste(&scan, &db, 3, &PasteBounds::default(), 5).unwrap();
        assert_eq!(a, b);
    }
}
