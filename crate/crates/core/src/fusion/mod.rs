//! Hard-class sparse fusion of past scans into the current scan.
//!
//! Only points of instances whose class is in `hard_classes` are carried
//! over from the `window` previous scans. Static instances are moved with
//! the pose chain; moving ones are additionally aligned onto the current
//! observation with centroid initialization plus ICP. The current scan is
//! always the unmodified prefix of the fused cloud, so row `i` of a student
//! (single-scan) pass and row `i` of a teacher (fused) pass see the same
//! physical point.

mod augdb;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use nalgebra::Point3;

pub use augdb::{
    build_instance_db, collect_instance_db, sample_and_paste, InstanceDatabase, InstanceEntry,
    InstanceKey, PasteBounds, PasteRecord,
};

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::geometry::{centroid, RigidTransform};
use crate::kitti_io::{write_labels, write_scan, ClassMap, LabelSet, PointCloud, Sequence};
use crate::registration::{centroid_align, icp_register, RegistrationConfig};

pub const DEFAULT_WINDOW: usize = 4;
pub const DEFAULT_MOVING_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    /// Raw class IDs whose instances are fused.
    pub hard_classes: BTreeSet<u16>,
    /// Number of past scans K.
    pub window: usize,
    /// Per-scan world centroid displacement above which an instance moves.
    pub moving_threshold: f64,
    pub registration: RegistrationConfig,
    /// When false, moving instances use the pose chain only (the naive path).
    pub register_moving: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            hard_classes: ClassMap::semantic_kitti().hard_raw_classes(),
            window: DEFAULT_WINDOW,
            moving_threshold: DEFAULT_MOVING_THRESHOLD,
            registration: RegistrationConfig::default(),
            register_moving: true,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::InvalidConfig("window must be >= 1".into()));
        }
        if !(self.moving_threshold >= 0.0) {
            return Err(Error::InvalidConfig("moving_threshold must be >= 0".into()));
        }
        if self.hard_classes.is_empty() {
            return Err(Error::InvalidConfig("hard_classes must be nonempty".into()));
        }
        self.registration.validate()
    }

    /// Reads `window`, `moving_threshold`, `hard_classes`, `register_moving`
    /// and `icp.*` keys; missing keys keep their current value.
    pub fn apply_kv(mut self, kv: &KvConfig) -> Result<Self> {
        if let Some(v) = kv.get("window")? {
            self.window = v;
        }
        if let Some(v) = kv.get("moving_threshold")? {
            self.moving_threshold = v;
        }
        if let Some(v) = kv.get_list::<u16>("hard_classes")? {
            self.hard_classes = v.into_iter().collect();
        }
        if let Some(v) = kv.get("register_moving")? {
            self.register_moving = v;
        }
        if let Some(v) = kv.get("icp.max_iterations")? {
            self.registration.max_iterations = v;
        }
        if let Some(v) = kv.get("icp.convergence_tol")? {
            self.registration.convergence_tol = v;
        }
        if let Some(v) = kv.get("icp.max_correspondence_dist")? {
            self.registration.max_correspondence_dist = v;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn is_hard(&self, class: u16) -> bool {
        self.hard_classes.contains(&class)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackEntry {
    pub scan: usize,
    pub indices: Vec<usize>,
}

/// Points of one instance across the window, oldest scan first; the last
/// entry is the current scan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceTrack {
    pub instance_id: u16,
    pub class_id: u16,
    pub entries: Vec<TrackEntry>,
}

impl InstanceTrack {
    pub fn current(&self) -> &TrackEntry {
        self.entries
            .last()
            .expect("track always holds the current scan")
    }

    pub fn observed_scans(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| !e.indices.is_empty())
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motion {
    Moving,
    Static,
}

pub fn gather_instance_track(
    seq: &Sequence,
    scan_t: usize,
    instance_id: u16,
    window: usize,
) -> Result<InstanceTrack> {
    let current = seq.require_labels(scan_t)?;
    let first = current
        .instance()
        .iter()
        .position(|&i| i == instance_id)
        .ok_or(Error::InstanceNotFound {
            instance_id,
            scan: seq.first_scan + scan_t,
        })?;
    let class_id = current.semantic()[first];

    let mut entries = Vec::with_capacity(window + 1);
    for scan in scan_t.saturating_sub(window)..=scan_t {
        let labels = seq.require_labels(scan)?;
        let indices = labels
            .instance()
            .iter()
            .enumerate()
            .filter(|(_, &i)| i == instance_id)
            .map(|(k, _)| k)
            .collect();
        entries.push(TrackEntry { scan, indices });
    }
    Ok(InstanceTrack {
        instance_id,
        class_id,
        entries,
    })
}

fn world_centroid(seq: &Sequence, entry: &TrackEntry) -> Option<Point3<f64>> {
    let cloud = &seq.scans()[entry.scan];
    let pose = seq.pose(entry.scan);
    let pts: Vec<Point3<f64>> = entry
        .indices
        .iter()
        .map(|&i| pose.apply(&cloud.points()[i]))
        .collect();
    centroid(&pts)
}

/// Moving iff the largest per-scan world-centroid displacement between
/// consecutive observations exceeds `threshold`. A gap of several scans
/// divides the displacement by the gap.
pub fn classify_motion(seq: &Sequence, track: &InstanceTrack, threshold: f64) -> Motion {
    let observed: Vec<(usize, Point3<f64>)> = track
        .entries
        .iter()
        .filter_map(|e| world_centroid(seq, e).map(|c| (e.scan, c)))
        .collect();
    let max_step = observed
        .windows(2)
        .map(|w| (w[1].1 - w[0].1).norm() / (w[1].0 - w[0].0) as f64)
        .fold(0.0, f64::max);
    if max_step > threshold {
        Motion::Moving
    } else {
        Motion::Static
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarningKind {
    /// ICP found no correspondences; the centroid alignment was used.
    NoOverlap,
    /// The past points were too few or collinear for ICP.
    DegenerateSource,
    /// ICP ran out of iterations.
    NotConverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionWarning {
    pub instance_id: u16,
    /// Relative scan, -1 ... -K.
    pub origin: i32,
    pub kind: WarningKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedScan {
    /// Current scan points first, then the appended points.
    pub cloud: PointCloud,
    pub labels: LabelSet,
    /// Relative source scan (-1 ... -K) of each appended point.
    pub origin_index: Vec<i32>,
    /// Position in `cloud` of each current-scan point.
    pub current_to_fused: Vec<usize>,
    pub warnings: Vec<FusionWarning>,
}

impl FusedScan {
    /// The current scan by itself, with no appended points.
    pub fn from_current(cloud: PointCloud, labels: LabelSet) -> Result<Self> {
        labels.check_parallel(&cloud)?;
        let n = cloud.len();
        Ok(Self {
            cloud,
            labels,
            origin_index: Vec::new(),
            current_to_fused: (0..n).collect(),
            warnings: Vec::new(),
        })
    }

    pub fn current_len(&self) -> usize {
        self.current_to_fused.len()
    }

    pub fn appended_len(&self) -> usize {
        self.cloud.len() - self.current_len()
    }

    pub fn current_cloud(&self) -> PointCloud {
        self.cloud.select(&self.current_to_fused)
    }

    pub fn current_labels(&self) -> LabelSet {
        self.labels.select(&self.current_to_fused)
    }

    /// Checks the index map and the parallel arrays.
    pub fn validate(&self) -> Result<()> {
        self.labels.check_parallel(&self.cloud)?;
        if self.origin_index.len() != self.appended_len() {
            return Err(Error::ShapeError(format!(
                "{} origin entries for {} appended points",
                self.origin_index.len(),
                self.appended_len()
            )));
        }
        if self
            .current_to_fused
            .iter()
            .enumerate()
            .any(|(i, &j)| i != j)
        {
            return Err(Error::ShapeError(
                "current_to_fused must be the identity on the current prefix".into(),
            ));
        }
        Ok(())
    }

    /// Writes `<stem>.bin`, `<stem>.label` and `<stem>.origin` (one appended
    /// point's relative scan per line).
    pub fn write(&self, path: &Path) -> Result<()> {
        let bin = path.with_extension("bin");
        let label = path.with_extension("label");
        let origin = path.with_extension("origin");
        if let Some(dir) = bin.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&bin, write_scan(&self.cloud)).map_err(|e| Error::io(&bin, e))?;
        fs::write(&label, write_labels(&self.labels)).map_err(|e| Error::io(&label, e))?;
        fs::write(&origin, format_origin(&self.origin_index)).map_err(|e| Error::io(&origin, e))?;
        Ok(())
    }
}

pub(crate) fn format_origin(origin: &[i32]) -> String {
    origin.iter().map(|o| format!("{o}\n")).collect()
}

pub(crate) fn parse_origin(text: &str) -> Result<Vec<i32>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.parse::<i32>()
                .map_err(|e| Error::MalformedConfig(format!("origin entry {l:?}: {e}")))
        })
        .collect()
}

/// Sorted IDs of nonzero instances with at least one hard-class point in
/// the labels.
pub fn hard_instances(labels: &LabelSet, config: &FusionConfig) -> Vec<u16> {
    labels
        .semantic()
        .iter()
        .zip(labels.instance())
        .filter(|(&c, &i)| i != 0 && config.is_hard(c))
        .map(|(_, &i)| i)
        .collect::<BTreeSet<u16>>()
        .into_iter()
        .collect()
}

/// Transform taking past-scan points of one instance into the current
/// sensor frame.
fn align_past(
    seq: &Sequence,
    scan_t: usize,
    past_scan: usize,
    past_points: &[Point3<f64>],
    current_points: &[Point3<f64>],
    motion: Motion,
    config: &FusionConfig,
) -> Result<(RigidTransform, Option<WarningKind>)> {
    let chain = seq.pose(scan_t).inverse().compose(seq.pose(past_scan));
    if motion == Motion::Static || !config.register_moving || current_points.is_empty() {
        return Ok((chain, None));
    }
    let moved: Vec<Point3<f64>> = past_points.iter().map(|p| chain.apply(p)).collect();
    let init = centroid_align(&moved, current_points)?;
    match icp_register(&moved, current_points, &init, &config.registration) {
        Ok(res) => {
            let warning = (!res.converged).then_some(WarningKind::NotConverged);
            Ok((res.transform.compose(&chain), warning))
        }
        Err(Error::NoOverlap { .. }) => Ok((init.compose(&chain), Some(WarningKind::NoOverlap))),
        Err(Error::DegenerateSource(_)) => {
            Ok((init.compose(&chain), Some(WarningKind::DegenerateSource)))
        }
        Err(e) => Err(e),
    }
}

/// Fuses hard-class instances of the previous `config.window` scans into
/// scan `scan_t`.
pub fn fuse_scan(seq: &Sequence, scan_t: usize, config: &FusionConfig) -> Result<FusedScan> {
    config.validate()?;
    let current = seq.scan(scan_t)?;
    let current_labels = seq.require_labels(scan_t)?;
    let first = scan_t.saturating_sub(config.window);
    for s in first..scan_t {
        seq.require_labels(s)?;
    }

    let mut fused = FusedScan::from_current(current.clone(), current_labels.clone())?;

    for instance_id in hard_instances(current_labels, config) {
        let track = gather_instance_track(seq, scan_t, instance_id, config.window)?;
        let motion = classify_motion(seq, &track, config.moving_threshold);
        let current_points: Vec<Point3<f64>> = track
            .current()
            .indices
            .iter()
            .filter(|&&i| config.is_hard(current_labels.semantic()[i]))
            .map(|&i| current.points()[i])
            .collect();

        // newest past scan first: -1, -2, ...
        for entry in track.entries.iter().rev().skip(1) {
            let past_cloud = &seq.scans()[entry.scan];
            let past_labels = seq.require_labels(entry.scan)?;
            let hard: Vec<usize> = entry
                .indices
                .iter()
                .copied()
                .filter(|&i| config.is_hard(past_labels.semantic()[i]))
                .collect();
            if hard.is_empty() {
                continue;
            }
            let origin = entry.scan as i32 - scan_t as i32;
            let source = past_cloud.select(&hard);
            let (transform, warning) = align_past(
                seq,
                scan_t,
                entry.scan,
                source.points(),
                &current_points,
                motion,
                config,
            )?;
            if let Some(kind) = warning {
                fused.warnings.push(FusionWarning {
                    instance_id,
                    origin,
                    kind,
                });
            }
            for (p, &r) in source.points().iter().zip(source.remission()) {
                fused.cloud.push(transform.apply(p), r);
            }
            fused.labels.extend_from(&past_labels.select(&hard));
            fused
                .origin_index
                .extend(std::iter::repeat_n(origin, hard.len()));
        }
    }
    Ok(fused)
}

/// Every point of the window scans moved into the current frame with the
/// pose chain: the dense fusion that hard-class fusion avoids.
pub fn naive_full_fusion(seq: &Sequence, scan_t: usize, window: usize) -> Result<PointCloud> {
    let mut cloud = seq.scan(scan_t)?.clone();
    let to_current = seq.pose(scan_t).inverse();
    for s in (scan_t.saturating_sub(window)..scan_t).rev() {
        let chain = to_current.compose(seq.pose(s));
        let past = &seq.scans()[s];
        for (p, &r) in past.points().iter().zip(past.remission()) {
            cloud.push(chain.apply(p), r);
        }
    }
    Ok(cloud)
}
