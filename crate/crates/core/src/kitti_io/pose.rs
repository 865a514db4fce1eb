use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;

/// Pose and calibration files print a handful of significant digits, so
/// their rotations are only orthonormal to about this bound.
pub const POSE_TOLERANCE: f64 = 1e-4;

fn parse_3x4(tokens: &[&str]) -> std::result::Result<RigidTransform, String> {
    if tokens.len() != 12 {
        return Err(format!("expected 12 values, found {}", tokens.len()));
    }
    let mut v = [0f64; 12];
    for (slot, tok) in v.iter_mut().zip(tokens) {
        *slot = tok
            .parse::<f64>()
            .map_err(|e| format!("bad number {tok:?}: {e}"))?;
    }
    #[rustfmt::skip]
    let rotation = Matrix3::new(
        v[0], v[1], v[2],
        v[4], v[5], v[6],
        v[8], v[9], v[10],
    );
    let translation = Vector3::new(v[3], v[7], v[11]);
    RigidTransform::with_tolerance(rotation, translation, POSE_TOLERANCE).map_err(|e| e.to_string())
}

/// Parses a `poses.txt` (left-camera frame) and converts every line to a
/// sensor-to-world pose `calib⁻¹ · T_cam · calib`. Blank lines are skipped.
pub fn parse_poses(text: &str, calib: &RigidTransform) -> Result<Vec<RigidTransform>> {
    let calib_inv = calib.inverse();
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(lineno, line)| {
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let cam = parse_3x4(&tokens)
                .map_err(|e| Error::MalformedPose(format!("line {}: {e}", lineno + 1)))?;
            Ok(calib_inv.compose(&cam).compose(calib))
        })
        .collect()
}

/// Reads the `Tr:` (velodyne to left camera) entry of a `calib.txt`.
pub fn parse_calib(text: &str) -> Result<RigidTransform> {
    let line = text
        .lines()
        .map(str::trim)
        .find(|l| l.starts_with("Tr:"))
        .ok_or_else(|| Error::MalformedCalib("no `Tr:` line".into()))?;
    let tokens: Vec<&str> = line["Tr:".len()..].split_whitespace().collect();
    parse_3x4(&tokens).map_err(Error::MalformedCalib)
}

fn format_3x4(t: &RigidTransform) -> String {
    t.to_row_major_3x4()
        .iter()
        .map(|v| format!("{v:e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Inverse of [`parse_poses`]: writes sensor-to-world poses back in the
/// left-camera convention, `calib · T · calib⁻¹`.
pub fn format_poses(poses: &[RigidTransform], calib: &RigidTransform) -> String {
    let calib_inv = calib.inverse();
    poses
        .iter()
        .map(|t| format_3x4(&calib.compose(t).compose(&calib_inv)) + "\n")
        .collect()
}

pub fn format_calib(calib: &RigidTransform) -> String {
    format!("Tr: {}\n", format_3x4(calib))
}

#[cfg(test)]
mod tests {
    use nalgebra::Point3;

    use super::*;

    #[test]
    fn identity_line() {
        let poses = parse_poses("1 0 0 0 0 1 0 0 0 0 1 0\n", &RigidTransform::identity()).unwrap();
        assert_eq!(poses, vec![RigidTransform::identity()]);
    }

    #[test]
    fn translation_only() {
        let poses =
            parse_poses("1 0 0 1.5 0 1 0 -2 0 0 1 0.25", &RigidTransform::identity()).unwrap();
        assert_eq!(*poses[0].rotation(), Matrix3::identity());
        assert_eq!(*poses[0].translation(), Vector3::new(1.5, -2.0, 0.25));
    }

    #[test]
    fn blank_and_trailing_whitespace_tolerated() {
        let text = "\n1 0 0 0 0 1 0 0 0 0 1 0   \n\n  \n1.0e+00 0 0 1 0 1 0 0 0 0 1 0\n";
        let poses = parse_poses(text, &RigidTransform::identity()).unwrap();
        assert_eq!(poses.len(), 2);
    }

    #[test]
    fn wrong_token_count() {
        let err = parse_poses("1 0 0 0 0 1 0 0 0 0 1", &RigidTransform::identity());
        assert!(matches!(err, Err(Error::MalformedPose(_))));
    }

    #[test]
    fn non_orthonormal_rejected() {
        let err = parse_poses("1 0.01 0 0 0 1 0 0 0 0 1 0", &RigidTransform::identity());
        assert!(matches!(err, Err(Error::MalformedPose(_))));
    }

    /// Expected entries computed offline with numpy as
    /// `inv(C) @ P @ C` for the homogeneous matrices below.
    #[test]
    fn camera_pose_with_calib_matches_matrix_oracle() {
        // KITTI-like velodyne->camera: x_cam = -y_velo, y_cam = -z_velo, z_cam = x_velo.
        let calib =
            parse_calib("P0: 1 0 0 0 0 1 0 0 0 0 1 0\nTr: 0 -1 0 0.1 0 0 -1 -0.2 1 0 0 0.3\n")
                .unwrap();
        let c = std::f64::consts::FRAC_1_SQRT_2;
        // 45 degrees about the camera y axis plus a translation.
        let line = format!("{c} 0 {c} 1 0 1 0 2 {} 0 {c} 3", -c);
        let poses = parse_poses(&line, &calib).unwrap();
        #[rustfmt::skip]
        let expected = [
            c, c, 0.0, 2.84142135623731,
            -c, c, 0.0, -1.182842712474619,
            0.0, 0.0, 1.0, -2.0,
        ];
        let got = poses[0].to_row_major_3x4();
        for (g, e) in got.iter().zip(expected.iter()) {
            assert!((g - e).abs() < 1e-12, "{got:?}");
        }
    }

    #[test]
    fn format_parse_round_trip() {
        let calib = parse_calib("Tr: 0 -1 0 0.1 0 0 -1 -0.2 1 0 0 0.3").unwrap();
        let poses = vec![
            RigidTransform::identity(),
            RigidTransform::from_yaw(0.3, Vector3::new(1.0, 2.0, 0.5)),
        ];
        let back = parse_poses(&format_poses(&poses, &calib), &calib).unwrap();
        for (a, b) in poses.iter().zip(&back) {
            assert!(a.max_abs_diff(b) < 1e-12);
        }
        let p = Point3::new(1.0, 2.0, 3.0);
        let c2 = parse_calib(&format_calib(&calib)).unwrap();
        assert_eq!(calib.apply(&p), c2.apply(&p));
    }

    #[test]
    fn missing_tr_line() {
        assert!(matches!(
            parse_calib("P0: 1 2 3"),
            Err(Error::MalformedCalib(_))
        ));
    }
}
