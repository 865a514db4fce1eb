//! Distillation losses between a multi-scan teacher and a single-scan
//! student, each returning its value and the gradient with respect to the
//! student input:
//!
//! * feature distillation: smooth-L1 over per-point features,
//! * soft logits distillation: KL divergence of temperature-softened class
//!   probabilities,
//! * instance-aware affinity distillation (IAAD): squared difference of the
//!   per-instance pairwise cosine-similarity matrices.
//!
//! Reductions over points and point pairs add their terms in sorted order,
//! so a loss value does not depend on row order (or on how terms are
//! partitioned across threads).

use nalgebra::{DMatrix, DVector};

use crate::config::KvConfig;
use crate::error::{Error, Result};

/// Default loss weights `(β₁, β₂, β₃, β₄)`: teacher segmentation, feature,
/// logits and affinity terms.
pub const DEFAULT_BETAS: [f64; 4] = [0.5, 0.01, 0.1, 0.1];

/// Per-point features; row `i` belongs to cloud point `point_indices[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub features: DMatrix<f64>,
    pub point_indices: Vec<usize>,
}

impl FeatureMap {
    pub fn new(features: DMatrix<f64>, point_indices: Vec<usize>) -> Result<Self> {
        if features.nrows() != point_indices.len() {
            return Err(Error::ShapeError(format!(
                "{} feature rows for {} point indices",
                features.nrows(),
                point_indices.len()
            )));
        }
        check_finite(&features, "features")?;
        Ok(Self {
            features,
            point_indices,
        })
    }

    /// Rows numbered `0..n`.
    pub fn from_matrix(features: DMatrix<f64>) -> Result<Self> {
        let n = features.nrows();
        Self::new(features, (0..n).collect())
    }

    pub fn rows(&self) -> usize {
        self.features.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogitMap {
    pub logits: DMatrix<f64>,
}

impl LogitMap {
    pub fn new(logits: DMatrix<f64>) -> Result<Self> {
        check_finite(&logits, "logits")?;
        Ok(Self { logits })
    }
}

/// Denominator of the affinity entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AffinityNorm {
    /// `‖a‖·‖b‖`: cosine similarity, unit diagonal.
    #[default]
    Cosine,
    /// `‖a‖²·‖b‖²`, kept for comparison runs only.
    SquaredNorms,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillConfig {
    /// Smooth-L1 threshold T.
    pub smooth_l1_t: f64,
    /// Softmax temperature P; logits are divided by it.
    pub temperature: f64,
    pub betas: [f64; 4],
    pub affinity_norm: AffinityNorm,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            smooth_l1_t: 1.0,
            temperature: 1.0,
            betas: DEFAULT_BETAS,
            affinity_norm: AffinityNorm::Cosine,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.smooth_l1_t > 0.0 && self.smooth_l1_t.is_finite()) {
            return Err(Error::InvalidConfig(
                "smooth-L1 threshold must be > 0".into(),
            ));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig("temperature must be > 0".into()));
        }
        if !self.betas.iter().all(|b| b.is_finite()) {
            return Err(Error::InvalidConfig("betas must be finite".into()));
        }
        Ok(())
    }

    /// Reads `distill.smooth_l1_t`, `distill.temperature`, `distill.betas`
    /// (four comma-separated values) and `distill.affinity_norm`
    /// (`cosine` or `squared`).
    pub fn apply_kv(mut self, kv: &KvConfig) -> Result<Self> {
        if let Some(v) = kv.get("distill.smooth_l1_t")? {
            self.smooth_l1_t = v;
        }
        if let Some(v) = kv.get("distill.temperature")? {
            self.temperature = v;
        }
        if let Some(v) = kv.get_list::<f64>("distill.betas")? {
            self.betas = v.try_into().map_err(|v: Vec<f64>| {
                Error::MalformedConfig(format!("distill.betas needs 4 values, got {}", v.len()))
            })?;
        }
        match kv.get_str("distill.affinity_norm") {
            None => {}
            Some("cosine") => self.affinity_norm = AffinityNorm::Cosine,
            Some("squared") => self.affinity_norm = AffinityNorm::SquaredNorms,
            Some(other) => {
                return Err(Error::MalformedConfig(format!(
                    "distill.affinity_norm = {other:?}"
                )))
            }
        }
        self.validate()?;
        Ok(self)
    }
}

/// A loss value with its gradient with respect to the student input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: DMatrix<f64>,
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericError(format!("non-finite {what}")))
    }
}

fn check_same_shape(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeError(format!(
            "teacher {:?} vs student {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Sum in ascending order of value. Independent of input order.
pub fn ordered_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.into_iter().sum()
}

/// Smooth-L1 of one difference: `d²/(2T)` inside `|d| < T`, `|d| − T/2`
/// outside. Continuous with a continuous derivative at `|d| = T`.
pub fn smooth_l1(d: f64, t: f64) -> f64 {
    if d.abs() < t {
        d * d / (2.0 * t)
    } else {
        d.abs() - t / 2.0
    }
}

/// Both branches of [`smooth_l1`], for checking continuity at the boundary.
pub fn smooth_l1_branches(d: f64, t: f64) -> (f64, f64) {
    (d * d / (2.0 * t), d.abs() - t / 2.0)
}

fn smooth_l1_derivative(d: f64, t: f64) -> f64 {
    if d.abs() < t {
        d / t
    } else {
        d.signum()
    }
}

/// Mean smooth-L1 between teacher and student features. Zero rows give a
/// zero loss.
pub fn feature_distill_loss(
    teacher: &FeatureMap,
    student: &FeatureMap,
    t: f64,
) -> Result<LossGrad> {
    check_same_shape(&teacher.features, &student.features)?;
    check_finite(&teacher.features, "teacher features")?;
    check_finite(&student.features, "student features")?;
    if !(t > 0.0) {
        return Err(Error::InvalidConfig(
            "smooth-L1 threshold must be > 0".into(),
        ));
    }
    let (n, c) = student.features.shape();
    let count = (n * c) as f64;
    let mut grad = DMatrix::zeros(n, c);
    if n * c == 0 {
        return Ok(LossGrad { loss: 0.0, grad });
    }
    let mut terms = Vec::with_capacity(n * c);
    for ((g, &tf), &sf) in grad
        .iter_mut()
        .zip(teacher.features.iter())
        .zip(student.features.iter())
    {
        let d = tf - sf;
        terms.push(smooth_l1(d, t));
        *g = -smooth_l1_derivative(d, t) / count;
    }
    Ok(LossGrad {
        loss: ordered_sum(terms) / count,
        grad,
    })
}

/// Row-wise `log softmax(x / temperature)`.
pub fn log_softmax_rows(logits: &DMatrix<f64>, temperature: f64) -> DMatrix<f64> {
    let mut out = logits / temperature;
    for mut row in out.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.add_scalar_mut(-lse);
    }
    out
}

/// `(1/(N·C)) Σ p·log(p/q)` with `p = softmax(teacher/P)` and
/// `q = softmax(student/P)`.
pub fn soft_logits_kl_loss(
    teacher: &LogitMap,
    student: &LogitMap,
    temperature: f64,
) -> Result<LossGrad> {
    check_same_shape(&teacher.logits, &student.logits)?;
    check_finite(&teacher.logits, "teacher logits")?;
    check_finite(&student.logits, "student logits")?;
    if !(temperature > 0.0) {
        return Err(Error::InvalidConfig("temperature must be > 0".into()));
    }
    let (n, c) = student.logits.shape();
    let mut grad = DMatrix::zeros(n, c);
    if n * c == 0 {
        return Ok(LossGrad { loss: 0.0, grad });
    }
    let count = (n * c) as f64;
    let log_p = log_softmax_rows(&teacher.logits, temperature);
    let log_q = log_softmax_rows(&student.logits, temperature);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mut kl = 0.0;
        for k in 0..c {
            let p = log_p[(i, k)].exp();
            let q = log_q[(i, k)].exp();
            if p > 0.0 {
                kl += p * (log_p[(i, k)] - log_q[(i, k)]);
            }
            grad[(i, k)] = (q - p) / (temperature * count);
        }
        rows.push(kl);
    }
    Ok(LossGrad {
        loss: ordered_sum(rows) / count,
        grad,
    })
}

/// Pairwise feature similarity within one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub values: DMatrix<f64>,
}

impl AffinityMatrix {
    /// Symmetric and unit-diagonal within `tol`, entries in `[-1, 1]`.
    pub fn check_invariants(&self, tol: f64) -> bool {
        let n = self.values.nrows();
        (0..n).all(|i| {
            (self.values[(i, i)] - 1.0).abs() <= tol
                && (0..n).all(|j| {
                    let v = self.values[(i, j)];
                    (v - self.values[(j, i)]).abs() <= tol && (-1.0..=1.0).contains(&v)
                })
        })
    }
}

/// Rows of `features` at `rows`, scaled by the inverse norm (cosine) or
/// inverse squared norm.
fn normalized_rows(
    features: &DMatrix<f64>,
    rows: &[usize],
    norm: AffinityNorm,
) -> Result<(Vec<DVector<f64>>, Vec<f64>)> {
    let mut scaled = Vec::with_capacity(rows.len());
    let mut norms = Vec::with_capacity(rows.len());
    for &r in rows {
        if r >= features.nrows() {
            return Err(Error::ShapeError(format!(
                "instance row {r} out of range for {} rows",
                features.nrows()
            )));
        }
        let v: DVector<f64> = features.row(r).transpose();
        let len = v.norm();
        if len == 0.0 {
            return Err(Error::NumericError(format!("zero-norm feature row {r}")));
        }
        let scale = match norm {
            AffinityNorm::Cosine => len,
            AffinityNorm::SquaredNorms => len * len,
        };
        scaled.push(v / scale);
        norms.push(len);
    }
    Ok((scaled, norms))
}

fn affinity_from_scaled(scaled: &[DVector<f64>], norm: AffinityNorm) -> DMatrix<f64> {
    let n = scaled.len();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut v = scaled[i].dot(&scaled[j]);
            if norm == AffinityNorm::Cosine {
                v = v.clamp(-1.0, 1.0);
            }
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

/// Affinity matrix of the rows listed in `instance`.
pub fn affinity_matrix(
    features: &FeatureMap,
    instance: &[usize],
    norm: AffinityNorm,
) -> Result<AffinityMatrix> {
    if instance.len() < 2 {
        return Err(Error::DegenerateInstance(instance.len()));
    }
    let (scaled, _) = normalized_rows(&features.features, instance, norm)?;
    Ok(AffinityMatrix {
        values: affinity_from_scaled(&scaled, norm),
    })
}

/// `Σ_k (1/|S_k|²) Σ_{i,j∈S_k} (A_teacher(i,j) − A_student(i,j))²`.
/// Instances with fewer than two rows contribute nothing.
pub fn iaad_loss(
    teacher: &FeatureMap,
    student: &FeatureMap,
    instances: &[Vec<usize>],
    norm: AffinityNorm,
) -> Result<LossGrad> {
    check_same_shape(&teacher.features, &student.features)?;
    check_finite(&teacher.features, "teacher features")?;
    check_finite(&student.features, "student features")?;
    let mut grad = DMatrix::zeros(student.features.nrows(), student.features.ncols());
    let mut terms = Vec::new();

    for rows in instances.iter().filter(|s| s.len() >= 2) {
        let n = rows.len();
        let n2 = (n * n) as f64;
        let (t_scaled, _) = normalized_rows(&teacher.features, rows, norm)?;
        let (s_scaled, s_norms) = normalized_rows(&student.features, rows, norm)?;
        let a_t = affinity_from_scaled(&t_scaled, norm);
        let a_s = affinity_from_scaled(&s_scaled, norm);

        // dL/dA_s(i,j) = -2 (A_t - A_s)(i,j) / n²
        let g_a = (&a_t - &a_s) * (-2.0 / n2);
        for i in 0..n {
            for j in 0..n {
                let d = a_t[(i, j)] - a_s[(i, j)];
                terms.push(d * d / n2);
            }
        }

        for (a, &row) in rows.iter().enumerate() {
            // gradient w.r.t. the scaled row, A being symmetric in (i, j)
            let mut g_u = DVector::zeros(s_scaled[a].len());
            for b in 0..n {
                g_u.axpy(2.0 * g_a[(a, b)], &s_scaled[b], 1.0);
            }
            let len = s_norms[a];
            let u = student.features.row(row).transpose() / len;
            let proj = g_u.dot(&u);
            let g_f = match norm {
                AffinityNorm::Cosine => (g_u - u * proj) / len,
                AffinityNorm::SquaredNorms => (g_u - u * (2.0 * proj)) / (len * len),
            };
            let mut grad_row = grad.row_mut(row);
            grad_row += g_f.transpose();
        }
    }
    Ok(LossGrad {
        loss: ordered_sum(terms),
        grad,
    })
}

/// Component losses of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub seg_student: f64,
    pub seg_teacher: f64,
    pub feature: f64,
    pub logits: f64,
    pub affinity: f64,
}

/// `seg_S + β₁·seg_T + β₂·feature + β₃·logits + β₄·affinity`.
pub fn total_loss(terms: &LossTerms, betas: &[f64; 4]) -> Result<f64> {
    let values = [
        terms.seg_student,
        terms.seg_teacher,
        terms.feature,
        terms.logits,
        terms.affinity,
    ];
    if !values.iter().chain(betas.iter()).all(|v| v.is_finite()) {
        return Err(Error::NumericError("non-finite loss term or weight".into()));
    }
    Ok(terms.seg_student
        + betas[0] * terms.seg_teacher
        + betas[1] * terms.feature
        + betas[2] * terms.logits
        + betas[3] * terms.affinity)
}
