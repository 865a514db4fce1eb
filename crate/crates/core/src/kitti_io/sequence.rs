//! Sequence directories in the SemanticKITTI layout:
//!
//! ```text
//! <seq>/velodyne/000000.bin
//! <seq>/labels/000000.label   (optional, per scan)
//! <seq>/poses.txt
//! <seq>/calib.txt             (identity calibration when absent)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::{format_calib, format_poses, LabelSet, PointCloud};
use super::{parse_calib, parse_labels, parse_poses, parse_scan, write_labels, write_scan};
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;

/// File listing and poses of an on-disk sequence. Scans are read lazily.
#[derive(Debug, Clone)]
pub struct SequenceIndex {
    pub root: PathBuf,
    pub scan_paths: Vec<PathBuf>,
    /// Parallel to `scan_paths`; `None` where a scan has no label file.
    pub label_paths: Vec<Option<PathBuf>>,
    /// Sensor-to-world pose per scan.
    pub poses: Vec<RigidTransform>,
    pub calib_velo_to_cam: RigidTransform,
}

pub fn scan_file_name(i: usize) -> String {
    format!("{i:06}.bin")
}

pub fn label_file_name(i: usize) -> String {
    format!("{i:06}.label")
}

impl SequenceIndex {
    pub fn open(root: &Path) -> Result<Self> {
        let velo_dir = root.join("velodyne");
        let mut scan_paths: Vec<PathBuf> = fs::read_dir(&velo_dir)
            .map_err(|e| Error::io(&velo_dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "bin"))
            .collect();
        scan_paths.sort();

        let label_dir = root.join("labels");
        let label_paths = scan_paths
            .iter()
            .map(|scan| {
                let stem = scan.file_stem().expect("listed file has a stem");
                let path = label_dir.join(stem).with_extension("label");
                path.is_file().then_some(path)
            })
            .collect();

        let calib_path = root.join("calib.txt");
        let calib_velo_to_cam = if calib_path.is_file() {
            let text = fs::read_to_string(&calib_path).map_err(|e| Error::io(&calib_path, e))?;
            parse_calib(&text)?
        } else {
            RigidTransform::identity()
        };

        let pose_path = root.join("poses.txt");
        let text = fs::read_to_string(&pose_path).map_err(|e| Error::io(&pose_path, e))?;
        let poses = parse_poses(&text, &calib_velo_to_cam)?;
        if poses.len() != scan_paths.len() {
            return Err(Error::MalformedPose(format!(
                "{} poses for {} scans",
                poses.len(),
                scan_paths.len()
            )));
        }

        Ok(Self {
            root: root.to_path_buf(),
            scan_paths,
            label_paths,
            poses,
            calib_velo_to_cam,
        })
    }

    pub fn len(&self) -> usize {
        self.scan_paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scan_paths.is_empty()
    }

    pub fn name(&self) -> String {
        self.root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "seq".into())
    }

    pub fn load_scan(&self, i: usize) -> Result<PointCloud> {
        let path = self.scan_path(i)?;
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        parse_scan(&bytes).map_err(|e| match e {
            Error::MalformedScan(msg) => Error::MalformedScan(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn load_labels(&self, i: usize) -> Result<Option<LabelSet>> {
        self.scan_path(i)?;
        let Some(path) = &self.label_paths[i] else {
            return Ok(None);
        };
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        parse_labels(&bytes).map(Some)
    }

    fn scan_path(&self, i: usize) -> Result<&PathBuf> {
        self.scan_paths.get(i).ok_or(Error::ScanOutOfRange {
            scan: i,
            len: self.len(),
        })
    }

    pub fn load(&self) -> Result<Sequence> {
        self.load_range(0, self.len())
    }

    /// Loads scans `[t - window, t]` (clamped at 0) and returns the window
    /// together with the position of `t` inside it.
    pub fn load_window(&self, t: usize, window: usize) -> Result<(Sequence, usize)> {
        self.scan_path(t)?;
        let start = t.saturating_sub(window);
        Ok((self.load_range(start, t + 1)?, t - start))
    }

    fn load_range(&self, start: usize, end: usize) -> Result<Sequence> {
        let mut scans = Vec::with_capacity(end - start);
        let mut labels = Vec::with_capacity(end - start);
        for i in start..end {
            scans.push(self.load_scan(i)?);
            labels.push(self.load_labels(i)?);
        }
        let mut seq = Sequence::new(scans, labels, self.poses[start..end].to_vec())?;
        seq.name = self.name();
        seq.first_scan = start;
        Ok(seq)
    }
}

/// An in-memory sequence of scans with sensor-to-world poses.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    scans: Vec<PointCloud>,
    labels: Vec<Option<LabelSet>>,
    poses: Vec<RigidTransform>,
    pub name: String,
    /// Index of `scans[0]` in the originating sequence.
    pub first_scan: usize,
}

impl Sequence {
    pub fn new(
        scans: Vec<PointCloud>,
        labels: Vec<Option<LabelSet>>,
        poses: Vec<RigidTransform>,
    ) -> Result<Self> {
        if poses.len() != scans.len() || labels.len() != scans.len() {
            return Err(Error::ShapeError(format!(
                "{} scans, {} label entries, {} poses",
                scans.len(),
                labels.len(),
                poses.len()
            )));
        }
        for (scan, lab) in scans.iter().zip(&labels) {
            if let Some(lab) = lab {
                lab.check_parallel(scan)?;
            }
        }
        Ok(Self {
            scans,
            labels,
            poses,
            name: "seq".into(),
            first_scan: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.scans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scans.is_empty()
    }

    pub fn scans(&self) -> &[PointCloud] {
        &self.scans
    }

    pub fn scan(&self, i: usize) -> Result<&PointCloud> {
        self.scans.get(i).ok_or(Error::ScanOutOfRange {
            scan: i,
            len: self.len(),
        })
    }

    pub fn labels(&self, i: usize) -> Option<&LabelSet> {
        self.labels.get(i).and_then(Option::as_ref)
    }

    /// Labels of scan `i`, or `MissingLabels`.
    pub fn require_labels(&self, i: usize) -> Result<&LabelSet> {
        self.scan(i)?;
        self.labels(i)
            .ok_or(Error::MissingLabels(self.first_scan + i))
    }

    pub fn set_labels(&mut self, i: usize, labels: LabelSet) -> Result<()> {
        labels.check_parallel(self.scan(i)?)?;
        self.labels[i] = Some(labels);
        Ok(())
    }

    pub fn poses(&self) -> &[RigidTransform] {
        &self.poses
    }

    pub fn pose(&self, i: usize) -> &RigidTransform {
        &self.poses[i]
    }

    /// Writes the SemanticKITTI directory layout under `root`.
    pub fn write(&self, root: &Path, calib_velo_to_cam: &RigidTransform) -> Result<()> {
        let velo_dir = root.join("velodyne");
        let label_dir = root.join("labels");
        fs::create_dir_all(&velo_dir).map_err(|e| Error::io(&velo_dir, e))?;
        for (i, scan) in self.scans.iter().enumerate() {
            let path = velo_dir.join(scan_file_name(i));
            fs::write(&path, write_scan(scan)).map_err(|e| Error::io(&path, e))?;
        }
        if self.labels.iter().any(Option::is_some) {
            fs::create_dir_all(&label_dir).map_err(|e| Error::io(&label_dir, e))?;
        }
        for (i, labels) in self.labels.iter().enumerate() {
            if let Some(labels) = labels {
                let path = label_dir.join(label_file_name(i));
                fs::write(&path, write_labels(labels)).map_err(|e| Error::io(&path, e))?;
            }
        }
        let pose_path = root.join("poses.txt");
        fs::write(&pose_path, format_poses(&self.poses, calib_velo_to_cam))
            .map_err(|e| Error::io(&pose_path, e))?;
        let calib_path = root.join("calib.txt");
        fs::write(&calib_path, format_calib(calib_velo_to_cam))
            .map_err(|e| Error::io(&calib_path, e))?;
        Ok(())
    }
}
