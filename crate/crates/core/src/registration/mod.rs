//! Aligning an instance's points from an adjacent scan onto the current
//! scan: centroid initialization, then point-to-point ICP with a closed-form
//! SVD fit at every step.

mod nn;

use nalgebra::{Matrix3, Point3, Vector3};

pub use nn::{BruteForce, GridIndex, NearestNeighbor, GRID_THRESHOLD};

use crate::error::{Error, Result};
use crate::geometry::{centroid, RigidTransform};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationConfig {
    pub max_iterations: usize,
    /// Stop once the RMS correspondence distance changes by less than this.
    pub convergence_tol: f64,
    pub max_correspondence_dist: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            convergence_tol: 1e-4,
            max_correspondence_dist: 1.0,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if self.max_iterations == 0
            || !positive(self.convergence_tol)
            || !positive(self.max_correspondence_dist)
        {
            return Err(Error::InvalidConfig(format!(
                "registration parameters must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub transform: RigidTransform,
    /// RMS distance over matched pairs under `transform`.
    pub rms_error: f64,
    pub iterations_used: usize,
    pub converged: bool,
    /// RMS at the initial guess followed by the RMS after every accepted
    /// iteration. Non-increasing.
    pub rms_history: Vec<f64>,
}

/// Pure translation taking the source centroid onto the target centroid.
pub fn centroid_align(source: &[Point3<f64>], target: &[Point3<f64>]) -> Result<RigidTransform> {
    let cs = centroid(source).ok_or(Error::EmptyInput("centroid alignment source"))?;
    let ct = centroid(target).ok_or(Error::EmptyInput("centroid alignment target"))?;
    Ok(RigidTransform::from_translation(ct - cs))
}

/// Least-squares rigid transform taking `source[i]` onto `target[i]`
/// (cross-covariance SVD). A reflection is turned into the nearest proper
/// rotation by flipping the singular vector of the smallest singular value.
pub fn fit_rigid(source: &[Point3<f64>], target: &[Point3<f64>]) -> Result<RigidTransform> {
    if source.len() != target.len() {
        return Err(Error::ShapeError(format!(
            "{} source vs {} target points",
            source.len(),
            target.len()
        )));
    }
    let cs = centroid(source).ok_or(Error::EmptyInput("rigid fit"))?;
    let ct = centroid(target).ok_or(Error::EmptyInput("rigid fit"))?;
    let h = source
        .iter()
        .zip(target)
        .fold(Matrix3::zeros(), |acc: Matrix3<f64>, (s, t)| {
            acc + (s - cs) * (t - ct).transpose()
        });
    let svd = h.svd(true, true);
    let u = svd.u.expect("requested U");
    let mut v = svd.v_t.expect("requested V^T").transpose();
    let mut rotation = v * u.transpose();
    if rotation.determinant() < 0.0 {
        let smallest = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("three singular values");
        v.column_mut(smallest).neg_mut();
        rotation = v * u.transpose();
    }
    let translation = ct.coords - rotation * cs.coords;
    Ok(RigidTransform::with_tolerance(rotation, translation, 1e-9)
        .expect("SVD of a finite matrix yields a proper rotation"))
}

/// Errors unless `points` has at least 3 entries spanning two dimensions.
fn check_spread(points: &[Point3<f64>]) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::DegenerateSource(format!(
            "{} points, need at least 3",
            points.len()
        )));
    }
    let c = centroid(points).expect("nonempty");
    let cov = points
        .iter()
        .fold(Matrix3::zeros(), |acc: Matrix3<f64>, p| {
            let d: Vector3<f64> = p - c;
            acc + d * d.transpose()
        });
    let mut sv: Vec<f64> = cov.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[0] == 0.0 || sv[1] <= 1e-12 * sv[0] {
        return Err(Error::DegenerateSource(
            "points are collinear or coincident".into(),
        ));
    }
    Ok(())
}

struct Matches {
    source: Vec<Point3<f64>>,
    target: Vec<Point3<f64>>,
    rms: f64,
}

fn correspond(
    nn: &dyn NearestNeighbor,
    source: &[Point3<f64>],
    target: &[Point3<f64>],
    transform: &RigidTransform,
) -> Option<Matches> {
    let mut m = Matches {
        source: Vec::new(),
        target: Vec::new(),
        rms: 0.0,
    };
    let mut sum_sq = 0.0;
    for p in source {
        if let Some((j, d2)) = nn.nearest(&transform.apply(p)) {
            m.source.push(*p);
            m.target.push(target[j]);
            sum_sq += d2;
        }
    }
    if m.source.is_empty() {
        return None;
    }
    m.rms = (sum_sq / m.source.len() as f64).sqrt();
    Some(m)
}

/// Point-to-point ICP from `init`.
///
/// An iteration is accepted only if it does not raise the RMS; the loop
/// ends when the RMS changes by less than `convergence_tol`, when an
/// iteration would raise the RMS by more than that, or after
/// `max_iterations`. The returned transform is the last accepted one.
pub fn icp_register(
    source: &[Point3<f64>],
    target: &[Point3<f64>],
    init: &RigidTransform,
    config: &RegistrationConfig,
) -> Result<RegistrationResult> {
    config.validate()?;
    check_spread(source)?;
    if target.is_empty() {
        return Err(Error::EmptyInput("registration target"));
    }

    let brute;
    let grid;
    let nn: &dyn NearestNeighbor = if source.len() < GRID_THRESHOLD {
        brute = BruteForce::new(target, config.max_correspondence_dist);
        &brute
    } else {
        grid = GridIndex::new(target, config.max_correspondence_dist);
        &grid
    };

    let mut transform = *init;
    let mut matches = correspond(nn, source, target, &transform).ok_or(Error::NoOverlap {
        max_dist: config.max_correspondence_dist,
    })?;
    let mut history = vec![matches.rms];
    let mut iterations_used = 0;
    let mut converged = false;

    for it in 1..=config.max_iterations {
        iterations_used = it;
        let candidate = fit_rigid(&matches.source, &matches.target)?;
        let Some(next) = correspond(nn, source, target, &candidate) else {
            break;
        };
        let change = matches.rms - next.rms;
        if change >= 0.0 {
            transform = candidate;
            matches = next;
            history.push(matches.rms);
        }
        if change.abs() < config.convergence_tol {
            converged = true;
            break;
        }
        if change < 0.0 {
            break;
        }
    }

    Ok(RegistrationResult {
        transform,
        rms_error: matches.rms,
        iterations_used,
        converged,
        rms_history: history,
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, extent: [f64; 3]) -> Vec<Point3<f64>> {
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-0.5..0.5) * extent[0],
                    rng.random_range(-0.5..0.5) * extent[1],
                    rng.random_range(-0.5..0.5) * extent[2],
                )
            })
            .collect()
    }

    #[test]
    fn centroid_align_examples() {
        let a = vec![Point3::new(0.0, 0.0, 0.0), Point3::new(2.0, 2.0, 2.0)];
        assert_eq!(centroid_align(&a, &a).unwrap(), RigidTransform::identity());
        let shifted: Vec<_> = a.iter().map(|p| p + Vector3::new(-1.0, 2.0, 0.0)).collect();
        let t = centroid_align(&shifted, &a).unwrap();
        assert_eq!(*t.translation(), Vector3::new(1.0, -2.0, 0.0));
        assert!(matches!(centroid_align(&[], &a), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn centroid_align_matches_centroids() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let s = random_cloud(&mut rng, 37, [3.0, 1.0, 2.0]);
            let t: Vec<_> = random_cloud(&mut rng, 23, [1.0, 4.0, 1.0])
                .into_iter()
                .map(|p| p + Vector3::new(5.0, -3.0, 1.0))
                .collect();
            let tr = centroid_align(&s, &t).unwrap();
            let moved: Vec<_> = s.iter().map(|p| tr.apply(p)).collect();
            let d = centroid(&moved).unwrap() - centroid(&t).unwrap();
            assert!(d.norm() < 1e-12);
        }
    }

    #[test]
    fn recovers_known_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let source = random_cloud(&mut rng, 300, [3.0, 1.5, 1.0]);
        let truth = RigidTransform::from_yaw(15f64.to_radians(), Vector3::new(0.5, -0.3, 0.1));
        let target: Vec<_> = source.iter().map(|p| truth.apply(p)).collect();
        let init = centroid_align(&source, &target).unwrap();
        let res = icp_register(&source, &target, &init, &RegistrationConfig::default()).unwrap();
        let rot_err = (res.transform.rotation() - truth.rotation()).norm();
        let trans_err = (res.transform.translation() - truth.translation()).norm();
        assert!(rot_err < 1e-6 && trans_err < 1e-6, "{rot_err} {trans_err}");
        assert!(res.converged);
        assert!(res.rms_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn identical_clouds_converge_immediately() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts = random_cloud(&mut rng, 50, [1.0, 1.0, 1.0]);
        let res = icp_register(
            &pts,
            &pts,
            &RigidTransform::identity(),
            &RegistrationConfig::default(),
        )
        .unwrap();
        assert_eq!(res.transform, RigidTransform::identity());
        assert_eq!(res.rms_error, 0.0);
        assert!(res.converged);
        assert_eq!(res.iterations_used, 1);
    }

    #[test]
    fn degenerate_and_disjoint_inputs() {
        let two = vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)];
        let cfg = RegistrationConfig::default();
        let id = RigidTransform::identity();
        assert!(matches!(
            icp_register(&two, &two, &id, &cfg),
            Err(Error::DegenerateSource(_))
        ));
        let line: Vec<_> = (0..10).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(
            icp_register(&line, &line, &id, &cfg),
            Err(Error::DegenerateSource(_))
        ));
        let tri = vec![
            Point3::origin(),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        let far: Vec<_> = tri
            .iter()
            .map(|p| p + Vector3::new(100.0, 0.0, 0.0))
            .collect();
        assert!(matches!(
            icp_register(&tri, &far, &id, &cfg),
            Err(Error::NoOverlap { .. })
        ));
    }

    #[test]
    fn fit_handles_reflection_case() {
        // Planar points: H has a zero singular value and the raw V Uᵀ can be
        // a reflection.
        let src = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(1.0, 1.0, 0.0),
        ];
        let truth =
            RigidTransform::from_axis_angle(Vector3::new(1.0, 1.0, 0.0), 2.5, Vector3::zeros());
        let dst: Vec<_> = src.iter().map(|p| truth.apply(p)).collect();
        let fit = fit_rigid(&src, &dst).unwrap();
        assert!(fit.orthonormality_error() < 1e-9);
        for (s, d) in src.iter().zip(&dst) {
            assert!((fit.apply(s) - d).norm() < 1e-9);
        }
    }

    #[test]
    fn grid_path_matches_brute_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let source = random_cloud(&mut rng, GRID_THRESHOLD + 100, [4.0, 2.0, 1.0]);
        let truth = RigidTransform::from_yaw(0.1, Vector3::new(0.2, 0.1, 0.0));
        let target: Vec<_> = source.iter().map(|p| truth.apply(p)).collect();
        let init = centroid_align(&source, &target).unwrap();
        let cfg = RegistrationConfig::default();
        let fast = icp_register(&source, &target, &init, &cfg).unwrap();
        assert!(fast.transform.max_abs_diff(&truth) < 1e-6);
    }
}
