//! Randomised verification of the distillation losses: value oracles,
//! non-negativity, analytic gradients against finite differences,
//! boundary continuity, affinity invariants and row-permutation invariance.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distill::{
    affinity_matrix, feature_distill_loss, iaad_loss, smooth_l1_branches, soft_logits_kl_loss,
    AffinityNorm, FeatureMap, LogitMap,
};
use crate::error::Result;
use crate::gradcheck::{max_relative_error, numeric_gradient, FD_STEP};

/// KL loss of teacher logits `(ln 2, 0)` against student `(0, 0)`.
pub const KL_TWO_CLASS: f64 = 0.028316506132566245;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub cases: usize,
    /// Largest observed error (or violation count, see `name`).
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: &'static str, cases: usize, worst: f64, tolerance: f64) -> Self {
        Self {
            name,
            cases,
            worst,
            tolerance,
            passed: worst <= tolerance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Seeded cases per gradient check.
    pub gradient_cases: usize,
    /// Random pairs per non-negativity and invariant check.
    pub property_cases: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            gradient_cases: 100,
            property_cases: 1000,
        }
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

fn features(m: DMatrix<f64>) -> Result<FeatureMap> {
    FeatureMap::from_matrix(m)
}

/// Disjoint random instances of at least two rows covering a prefix of
/// `0..n`.
fn random_instances(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<usize>> {
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(rng);
    let mut out = Vec::new();
    let mut rest = &rows[..];
    while rest.len() >= 2 {
        let take = rng.random_range(2..=rest.len().min(6));
        out.push(rest[..take].to_vec());
        rest = &rest[take..];
    }
    out
}

fn permute_rows(m: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, k| m[(perm[i], k)])
}

/// Runs every check and returns one result per check.
pub fn loss_check_suite(cfg: &SuiteConfig) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();

    // value oracles
    let f1 = |t: f64, s: f64| -> Result<f64> {
        let a = features(DMatrix::from_element(1, 1, t))?;
        let b = features(DMatrix::from_element(1, 1, s))?;
        Ok(feature_distill_loss(&a, &b, 1.0)?.loss)
    };
    let worst = (f1(0.5, 0.0)? - 0.125)
        .abs()
        .max((f1(2.0, 0.0)? - 1.5).abs());
    out.push(CheckResult::new("feature: hand values", 2, worst, 0.0));
    let kl = soft_logits_kl_loss(
        &LogitMap::new(DMatrix::from_row_slice(1, 2, &[2f64.ln(), 0.0]))?,
        &LogitMap::new(DMatrix::zeros(1, 2))?,
        1.0,
    )?;
    out.push(CheckResult::new(
        "logits: two-class value",
        1,
        (kl.loss - KL_TWO_CLASS).abs(),
        1e-10,
    ));
    let iaad = iaad_loss(
        &features(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]))?,
        &features(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]))?,
        &[vec![0, 1]],
        AffinityNorm::Cosine,
    )?;
    out.push(CheckResult::new(
        "affinity: hand value",
        1,
        (iaad.loss - 0.5).abs(),
        0.0,
    ));

    // continuity at |d| = T
    let mut worst = 0.0f64;
    for _ in 0..cfg.property_cases {
        let t = rng.random_range(0.01..10.0);
        let d = if rng.random_bool(0.5) { t } else { -t };
        let (a, b) = smooth_l1_branches(d, t);
        worst = worst.max((a - b).abs());
    }
    out.push(CheckResult::new(
        "feature: branch continuity",
        cfg.property_cases,
        worst,
        1e-12,
    ));

    // zero at equality, non-negative elsewhere
    let (mut at_eq, mut negative) = (0.0f64, 0usize);
    for _ in 0..cfg.property_cases {
        let n = rng.random_range(1..12);
        let c = rng.random_range(1..8);
        let t = random_matrix(&mut rng, n, c, 3.0);
        let s = random_matrix(&mut rng, n, c, 3.0);
        let thr = rng.random_range(0.1..2.0);
        let (tf, sf) = (features(t.clone())?, features(s.clone())?);
        let fd = feature_distill_loss(&tf, &sf, thr)?.loss;
        let fd0 = feature_distill_loss(&tf, &tf, thr)?.loss;
        let p = rng.random_range(0.5..4.0);
        let (tl, sl) = (LogitMap::new(t)?, LogitMap::new(s)?);
        let kl = soft_logits_kl_loss(&tl, &sl, p)?.loss;
        let kl0 = soft_logits_kl_loss(&tl, &tl, p)?.loss;
        let inst = random_instances(&mut rng, n);
        let ia = iaad_loss(&tf, &sf, &inst, AffinityNorm::Cosine)?.loss;
        let ia0 = iaad_loss(&tf, &tf, &inst, AffinityNorm::Cosine)?.loss;
        at_eq = at_eq.max(fd0.abs()).max(kl0.abs()).max(ia0.abs());
        negative += [fd, kl, ia].iter().filter(|&&v| v < 0.0).count();
    }
    out.push(CheckResult::new(
        "all: zero when equal",
        cfg.property_cases,
        at_eq,
        0.0,
    ));
    out.push(CheckResult::new(
        "all: non-negative (violations)",
        cfg.property_cases,
        negative as f64,
        0.0,
    ));

    // gradients
    let mut worst = [0.0f64; 3];
    for _ in 0..cfg.gradient_cases {
        let n = rng.random_range(2..9);
        let c = rng.random_range(1..6);
        let t = random_matrix(&mut rng, n, c, 2.0);
        let s = random_matrix(&mut rng, n, c, 2.0);
        let thr = rng.random_range(0.2..2.0);
        let tf = features(t.clone())?;
        // keep every element away from the smooth-L1 kink
        let s = s.zip_map(&t, |sv, tv| {
            let d = tv - sv;
            if (d.abs() - thr).abs() < 1e-3 {
                sv + 1e-2
            } else {
                sv
            }
        });
        let g = feature_distill_loss(&tf, &features(s.clone())?, thr)?.grad;
        let num = numeric_gradient(&s, FD_STEP, |m| {
            feature_distill_loss(&tf, &FeatureMap::from_matrix(m.clone()).unwrap(), thr)
                .unwrap()
                .loss
        });
        worst[0] = worst[0].max(max_relative_error(g.as_slice(), num.as_slice()));

        let p = rng.random_range(0.5..3.0);
        let tl = LogitMap::new(t.clone())?;
        let g = soft_logits_kl_loss(&tl, &LogitMap::new(s.clone())?, p)?.grad;
        let num = numeric_gradient(&s, FD_STEP, |m| {
            soft_logits_kl_loss(&tl, &LogitMap::new(m.clone()).unwrap(), p)
                .unwrap()
                .loss
        });
        worst[1] = worst[1].max(max_relative_error(g.as_slice(), num.as_slice()));

        let c = c.max(2);
        let t = random_matrix(&mut rng, n, c, 2.0);
        let s = random_matrix(&mut rng, n, c, 2.0);
        let tf = features(t)?;
        let inst = random_instances(&mut rng, n);
        let g = iaad_loss(&tf, &features(s.clone())?, &inst, AffinityNorm::Cosine)?.grad;
        let num = numeric_gradient(&s, FD_STEP, |m| {
            iaad_loss(
                &tf,
                &FeatureMap::from_matrix(m.clone()).unwrap(),
                &inst,
                AffinityNorm::Cosine,
            )
            .unwrap()
            .loss
        });
        worst[2] = worst[2].max(max_relative_error(g.as_slice(), num.as_slice()));
    }
    out.push(CheckResult::new(
        "feature: gradient vs FD",
        cfg.gradient_cases,
        worst[0],
        1e-4,
    ));
    out.push(CheckResult::new(
        "logits: gradient vs FD",
        cfg.gradient_cases,
        worst[1],
        1e-4,
    ));
    out.push(CheckResult::new(
        "affinity: gradient vs FD",
        cfg.gradient_cases,
        worst[2],
        1e-4,
    ));

    // affinity invariants
    let mut violations = 0usize;
    for _ in 0..cfg.property_cases {
        let n = rng.random_range(2..16);
        let c = rng.random_range(1..8);
        let f = features(random_matrix(&mut rng, n, c, 5.0))?;
        let rows: Vec<usize> = (0..n).collect();
        if !affinity_matrix(&f, &rows, AffinityNorm::Cosine)?.check_invariants(1e-9) {
            violations += 1;
        }
    }
    out.push(CheckResult::new(
        "affinity: matrix invariants (violations)",
        cfg.property_cases,
        violations as f64,
        0.0,
    ));

    // row permutation applied to both branches
    let mut mismatches = 0usize;
    for _ in 0..cfg.gradient_cases {
        let n = rng.random_range(2..12);
        let c = rng.random_range(2..6);
        let t = random_matrix(&mut rng, n, c, 2.0);
        let s = random_matrix(&mut rng, n, c, 2.0);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut inverse = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let (pt, ps) = (permute_rows(&t, &perm), permute_rows(&s, &perm));
        let inst = random_instances(&mut rng, n);
        let pinst: Vec<Vec<usize>> = inst
            .iter()
            .map(|set| set.iter().map(|&r| inverse[r]).collect())
            .collect();
        let (tf, sf) = (features(t.clone())?, features(s.clone())?);
        let (ptf, psf) = (features(pt.clone())?, features(ps.clone())?);
        let same = feature_distill_loss(&tf, &sf, 1.0)?.loss
            == feature_distill_loss(&ptf, &psf, 1.0)?.loss
            && soft_logits_kl_loss(&LogitMap::new(t)?, &LogitMap::new(s)?, 1.5)?.loss
                == soft_logits_kl_loss(&LogitMap::new(pt)?, &LogitMap::new(ps)?, 1.5)?.loss
            && iaad_loss(&tf, &sf, &inst, AffinityNorm::Cosine)?.loss
                == iaad_loss(&ptf, &psf, &pinst, AffinityNorm::Cosine)?.loss;
        if !same {
            mismatches += 1;
        }
    }
    out.push(CheckResult::new(
        "all: row-permutation invariance (mismatches)",
        cfg.gradient_cases,
        mismatches as f64,
        0.0,
    ));
    Ok(out)
}

/// Table with one line per check.
pub fn format_results(results: &[CheckResult]) -> String {
    let mut s = format!(
        "{:<44} {:>6} {:>12} {:>10}  result\n",
        "check", "cases", "worst", "tolerance"
    );
    for r in results {
        s.push_str(&format!(
            "{:<44} {:>6} {:>12.3e} {:>10.1e}  {}\n",
            r.name,
            r.cases,
            r.worst,
            r.tolerance,
            if r.passed { "PASS" } else { "FAIL" }
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let cfg = SuiteConfig {
            seed: 3,
            gradient_cases: 10,
            property_cases: 50,
        };
        let results = loss_check_suite(&cfg).unwrap();
        assert!(
            results.iter().all(|r| r.passed),
            "{}",
            format_results(&results)
        );
    }
}
