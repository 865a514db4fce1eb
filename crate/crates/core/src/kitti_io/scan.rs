use nalgebra::Point3;

use super::{FrameTag, LabelSet, PointCloud};
use crate::error::{Error, Result};

const POINT_STRIDE: usize = 16;

pub fn parse_scan(bytes: &[u8]) -> Result<PointCloud> {
    if !bytes.len().is_multiple_of(POINT_STRIDE) {
        return Err(Error::MalformedScan(format!(
            "{} bytes is not a multiple of {POINT_STRIDE}",
            bytes.len()
        )));
    }
    let n = bytes.len() / POINT_STRIDE;
    let mut points = Vec::with_capacity(n);
    let mut remission = Vec::with_capacity(n);
    for (i, chunk) in bytes.chunks_exact(POINT_STRIDE).enumerate() {
        let mut v = [0f32; 4];
        for (k, word) in chunk.chunks_exact(4).enumerate() {
            v[k] = f32::from_le_bytes(word.try_into().expect("4-byte word"));
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(Error::MalformedScan(format!(
                "non-finite value in point {i}"
            )));
        }
        points.push(Point3::new(v[0] as f64, v[1] as f64, v[2] as f64));
        remission.push(v[3] as f64);
    }
    Ok(PointCloud::from_parts_unchecked(
        points,
        remission,
        FrameTag::Sensor,
    ))
}

/// Serializes to the scan format. Values narrow to `f32`, so this inverts
/// [`parse_scan`] exactly and rounds anything finer.
pub fn write_scan(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * POINT_STRIDE);
    for (p, &r) in cloud.points().iter().zip(cloud.remission()) {
        for v in [p.x, p.y, p.z, r] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn parse_labels(bytes: &[u8]) -> Result<LabelSet> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::MalformedLabel(format!(
            "{} bytes is not a multiple of 4",
            bytes.len()
        )));
    }
    let packed: Vec<u32> = bytes
        .chunks_exact(4)
        .map(|w| u32::from_le_bytes(w.try_into().expect("4-byte word")))
        .collect();
    Ok(LabelSet::from_packed(&packed))
}

pub fn write_labels(labels: &LabelSet) -> Vec<u8> {
    labels
        .packed()
        .into_iter()
        .flat_map(|v| v.to_le_bytes())
        .collect()
}
