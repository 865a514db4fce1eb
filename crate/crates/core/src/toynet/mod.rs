//! A per-point two-layer network run as a teacher (fused multi-scan input)
//! and a student (single current scan), trained jointly by plain gradient
//! descent on the combined segmentation and distillation objective.
//!
//! Layout: `h = tanh(W1·x + b1)` with `x = (s·px, s·py, s·pz, remission)`,
//! then `logits = W2·h + b2`. `h` is the feature tap used for feature and
//! affinity distillation, `logits` the tap for the logits loss.

pub mod scenes;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::KvConfig;
use crate::distill::{
    feature_distill_loss, iaad_loss, ordered_sum, soft_logits_kl_loss, total_loss, DistillConfig,
    FeatureMap, LogitMap, LossTerms,
};
use crate::error::{Error, Result};
use crate::fusion::FusedScan;
use crate::kitti_io::{ClassMap, LabelSet, PointCloud};
use crate::metrics::{miou, ConfusionMatrix};

pub const INPUT_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyNetParams {
    /// H × 4
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    /// C × H
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    /// Scale applied to coordinates before the encoder. Not trained.
    pub input_scale: f64,
}

impl ToyNetParams {
    pub fn zeros(hidden: usize, classes: usize) -> Self {
        Self {
            w1: DMatrix::zeros(hidden, INPUT_DIM),
            b1: DVector::zeros(hidden),
            w2: DMatrix::zeros(classes, hidden),
            b2: DVector::zeros(classes),
            input_scale: 0.1,
        }
    }

    /// Uniform Glorot initialisation, zero biases.
    pub fn random(hidden: usize, classes: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(hidden, classes);
        let a1 = (6.0 / (INPUT_DIM + hidden) as f64).sqrt();
        let a2 = (6.0 / (hidden + classes) as f64).sqrt();
        p.w1.iter_mut().for_each(|w| *w = rng.random_range(-a1..a1));
        p.w2.iter_mut().for_each(|w| *w = rng.random_range(-a2..a2));
        p
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn classes(&self) -> usize {
        self.w2.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden();
        if self.w1.ncols() != INPUT_DIM
            || self.b1.len() != h
            || self.w2.ncols() != h
            || self.b2.len() != self.classes()
        {
            return Err(Error::ShapeError(format!(
                "inconsistent parameter shapes: w1 {:?}, b1 {}, w2 {:?}, b2 {}",
                self.w1.shape(),
                self.b1.len(),
                self.w2.shape(),
                self.b2.len()
            )));
        }
        if !self.to_vec().iter().all(|v| v.is_finite()) || !self.input_scale.is_finite() {
            return Err(Error::NumericError("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All trainable values: w1, b1, w2, b2, each column-major.
    pub fn to_vec(&self) -> Vec<f64> {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .copied()
            .collect()
    }

    /// Inverse of [`to_vec`](Self::to_vec), keeping the shapes of `self`.
    pub fn with_values(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.len() {
            return Err(Error::ShapeError(format!(
                "{} values for {} parameters",
                values.len(),
                self.len()
            )));
        }
        let mut p = self.clone();
        let mut it = values.iter().copied();
        for v in
            p.w1.iter_mut()
                .chain(p.b1.iter_mut())
                .chain(p.w2.iter_mut())
                .chain(p.b2.iter_mut())
        {
            *v = it.next().unwrap_or_default();
        }
        Ok(p)
    }

    /// `self -= lr * grad`
    pub fn descend(&mut self, grad: &ToyNetParams, lr: f64) {
        self.w1 -= &grad.w1 * lr;
        self.b1 -= &grad.b1 * lr;
        self.w2 -= &grad.w2 * lr;
        self.b2 -= &grad.b2 * lr;
    }
}

/// Intermediates kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub inputs: DMatrix<f64>,
    pub hidden: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub features: FeatureMap,
    pub logits: LogitMap,
    pub cache: ForwardCache,
}

pub fn input_matrix(cloud: &PointCloud, input_scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(cloud.len(), INPUT_DIM, |i, k| match k {
        3 => cloud.remission()[i],
        _ => cloud.points()[i][k] * input_scale,
    })
}

/// Evaluates every point independently; row `i` of each output depends on
/// point `i` only.
pub fn forward(params: &ToyNetParams, cloud: &PointCloud) -> Result<ForwardOutput> {
    params.validate()?;
    let x = input_matrix(cloud, params.input_scale);
    let n = x.nrows();
    let (hd, c) = (params.hidden(), params.classes());
    let mut h = DMatrix::zeros(n, hd);
    let mut logits = DMatrix::zeros(n, c);
    for i in 0..n {
        for j in 0..hd {
            let mut z = params.b1[j];
            for k in 0..INPUT_DIM {
                z += params.w1[(j, k)] * x[(i, k)];
            }
            h[(i, j)] = z.tanh();
        }
        for m in 0..c {
            let mut z = params.b2[m];
            for j in 0..hd {
                z += params.w2[(m, j)] * h[(i, j)];
            }
            logits[(i, m)] = z;
        }
    }
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::NumericError("non-finite activation".into()));
    }
    Ok(ForwardOutput {
        features: FeatureMap::from_matrix(h.clone())?,
        logits: LogitMap::new(logits)?,
        cache: ForwardCache {
            inputs: x,
            hidden: h,
        },
    })
}

/// Parameter gradients from upstream gradients at the logits and,
/// optionally, at the feature tap.
pub fn backward(
    params: &ToyNetParams,
    cache: &ForwardCache,
    d_logits: &DMatrix<f64>,
    d_features: Option<&DMatrix<f64>>,
) -> ToyNetParams {
    let n = cache.inputs.nrows();
    let (hd, c) = (params.hidden(), params.classes());
    let mut g = ToyNetParams::zeros(hd, c);
    g.input_scale = params.input_scale;
    for i in 0..n {
        for m in 0..c {
            let dl = d_logits[(i, m)];
            g.b2[m] += dl;
            for j in 0..hd {
                g.w2[(m, j)] += dl * cache.hidden[(i, j)];
            }
        }
        for j in 0..hd {
            let mut dh = 0.0;
            for m in 0..c {
                dh += d_logits[(i, m)] * params.w2[(m, j)];
            }
            if let Some(df) = d_features {
                dh += df[(i, j)];
            }
            let hv = cache.hidden[(i, j)];
            let dz = dh * (1.0 - hv * hv);
            g.b1[j] += dz;
            for k in 0..INPUT_DIM {
                g.w1[(j, k)] += dz * cache.inputs[(i, k)];
            }
        }
    }
    g
}

/// Mean cross-entropy over points whose target is not 0, with its gradient
/// at the logits. No labelled points gives a zero loss.
pub fn cross_entropy(logits: &DMatrix<f64>, targets: &[u32]) -> Result<(f64, DMatrix<f64>)> {
    let (n, c) = logits.shape();
    if targets.len() != n {
        return Err(Error::ShapeError(format!(
            "{} targets for {n} rows",
            targets.len()
        )));
    }
    let mut grad = DMatrix::zeros(n, c);
    let labelled = targets.iter().filter(|&&t| t != 0).count();
    if labelled == 0 {
        return Ok((0.0, grad));
    }
    let log_q = crate::distill::log_softmax_rows(logits, 1.0);
    let mut terms = Vec::with_capacity(labelled);
    for (i, &t) in targets.iter().enumerate() {
        if t == 0 {
            continue;
        }
        let t = t as usize;
        if t >= c {
            return Err(Error::ClassRangeError {
                class: t as u32,
                n_classes: c,
            });
        }
        terms.push(-log_q[(i, t)]);
        for k in 0..c {
            let q = log_q[(i, k)].exp();
            grad[(i, k)] = (q - if k == t { 1.0 } else { 0.0 }) / labelled as f64;
        }
    }
    Ok((ordered_sum(terms) / labelled as f64, grad))
}

/// Argmax class per point, ties to the lower class.
pub fn predict(params: &ToyNetParams, cloud: &PointCloud) -> Result<Vec<u32>> {
    let out = forward(params, cloud)?;
    Ok(out
        .logits
        .logits
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best as u32
        })
        .collect())
}

/// Train IDs of every point, unknown raw classes mapping to 0.
pub fn train_targets(labels: &LabelSet, class_map: &ClassMap) -> Vec<u32> {
    labels
        .semantic()
        .iter()
        .map(|&raw| class_map.to_train(raw) as u32)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
    pub confusion: ConfusionMatrix,
}

/// Confusion over all `(cloud, targets)` pairs and its mIoU.
pub fn evaluate(
    params: &ToyNetParams,
    scans: &[(&PointCloud, &[u32])],
    ignore: &BTreeSet<u32>,
) -> Result<EvalReport> {
    let mut confusion = ConfusionMatrix::new(params.classes(), ignore.clone());
    for (cloud, targets) in scans {
        let pred = predict(params, cloud)?;
        confusion.add_all(&pred, targets)?;
    }
    let (per_class, mean) = miou(&confusion)?;
    Ok(EvalReport {
        per_class,
        mean,
        confusion,
    })
}

/// Student and teacher inputs of one training step, with the rows used by
/// the distillation terms.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub student_input: PointCloud,
    pub student_targets: Vec<u32>,
    pub teacher_input: PointCloud,
    pub teacher_targets: Vec<u32>,
    /// Student rows taking part in distillation.
    pub student_rows: Vec<usize>,
    /// Teacher row of the same physical point, parallel to `student_rows`.
    pub teacher_rows: Vec<usize>,
    /// Instances as positions into `student_rows`.
    pub instances: Vec<Vec<usize>>,
}

impl TrainBatch {
    /// Student on the current scan, teacher on the fused cloud; hard-class
    /// current points are distilled, grouped by instance ID.
    pub fn from_fused(
        fused: &FusedScan,
        class_map: &ClassMap,
        hard_raw: &BTreeSet<u16>,
    ) -> Result<Self> {
        let n = fused.current_len();
        if fused.current_to_fused.len() != n {
            return Err(Error::ShapeError(format!(
                "index map has {} entries for {n} current points",
                fused.current_to_fused.len()
            )));
        }
        let current = fused.current_labels();
        let mut student_rows = Vec::new();
        let mut teacher_rows = Vec::new();
        let mut groups: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            if !hard_raw.contains(&current.semantic()[i]) {
                continue;
            }
            let inst = current.instance()[i];
            if inst != 0 {
                groups.entry(inst).or_default().push(student_rows.len());
            }
            student_rows.push(i);
            teacher_rows.push(fused.current_to_fused[i]);
        }
        let batch = Self {
            student_input: fused.current_cloud(),
            student_targets: train_targets(&current, class_map),
            teacher_input: fused.cloud.clone(),
            teacher_targets: train_targets(&fused.labels, class_map),
            student_rows,
            teacher_rows,
            instances: groups.into_values().collect(),
        };
        batch.validate()?;
        Ok(batch)
    }

    /// Both branches see the same cloud; every labelled point is distilled.
    pub fn identical(
        cloud: PointCloud,
        targets: Vec<u32>,
        instances: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let rows: Vec<usize> = (0..cloud.len()).collect();
        let batch = Self {
            student_input: cloud.clone(),
            student_targets: targets.clone(),
            teacher_input: cloud,
            teacher_targets: targets,
            student_rows: rows.clone(),
            teacher_rows: rows,
            instances,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn validate(&self) -> Result<()> {
        let ns = self.student_input.len();
        let nt = self.teacher_input.len();
        if self.student_targets.len() != ns || self.teacher_targets.len() != nt {
            return Err(Error::ShapeError("targets not parallel to inputs".into()));
        }
        if self.student_rows.len() != self.teacher_rows.len() {
            return Err(Error::ShapeError(format!(
                "{} student rows vs {} teacher rows",
                self.student_rows.len(),
                self.teacher_rows.len()
            )));
        }
        if let Some(&r) = self.student_rows.iter().find(|&&r| r >= ns) {
            return Err(Error::ShapeError(format!("student row {r} of {ns}")));
        }
        if let Some(&r) = self.teacher_rows.iter().find(|&&r| r >= nt) {
            return Err(Error::ShapeError(format!("teacher row {r} of {nt}")));
        }
        let m = self.student_rows.len();
        if let Some(&r) = self.instances.iter().flatten().find(|&&r| r >= m) {
            return Err(Error::ShapeError(format!("instance row {r} of {m}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden: usize,
    pub lr: f64,
    pub input_scale: f64,
    pub steps: usize,
    pub distill: DistillConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            lr: 1e-2,
            input_scale: 0.1,
            steps: 200,
            distill: DistillConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::InvalidConfig("hidden width must be > 0".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be > 0".into()));
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return Err(Error::InvalidConfig("input scale must be > 0".into()));
        }
        self.distill.validate()
    }

    /// Reads `train.hidden`, `train.lr`, `train.input_scale`, `train.steps`
    /// and the `distill.*` keys.
    pub fn apply_kv(mut self, kv: &KvConfig) -> Result<Self> {
        if let Some(v) = kv.get("train.hidden")? {
            self.hidden = v;
        }
        if let Some(v) = kv.get("train.lr")? {
            self.lr = v;
        }
        if let Some(v) = kv.get("train.input_scale")? {
            self.input_scale = v;
        }
        if let Some(v) = kv.get("train.steps")? {
            self.steps = v;
        }
        self.distill = self.distill.apply_kv(kv)?;
        self.validate()?;
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub teacher: ToyNetParams,
    pub student: ToyNetParams,
    pub step: u64,
    pub lr: f64,
    pub distill: DistillConfig,
    pub seed: u64,
}

impl TrainState {
    /// Teacher drawn first, then student, from one seeded stream.
    pub fn new(config: &TrainConfig, classes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut teacher = ToyNetParams::random(config.hidden, classes, &mut rng);
        let mut student = ToyNetParams::random(config.hidden, classes, &mut rng);
        teacher.input_scale = config.input_scale;
        student.input_scale = config.input_scale;
        Ok(Self {
            teacher,
            student,
            step: 0,
            lr: config.lr,
            distill: config.distill,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Step number, counting from 1.
    pub step: u64,
    /// Loss values before the update.
    pub terms: LossTerms,
    pub total: f64,
}

/// Loss terms and parameter gradients at the given parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub terms: LossTerms,
    pub total: f64,
    pub student_grad: ToyNetParams,
    /// Gradient of `β₁·seg_T`, `None` when `β₁ = 0`.
    pub teacher_grad: Option<ToyNetParams>,
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, k| m[(rows[i], k)])
}

fn scatter_rows(grad: &DMatrix<f64>, rows: &[usize], n: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, grad.ncols());
    for (i, &r) in rows.iter().enumerate() {
        for k in 0..grad.ncols() {
            out[(r, k)] += grad[(i, k)];
        }
    }
    out
}

/// Combined objective. The teacher is a constant inside the distillation
/// terms; its only gradient comes from its own segmentation loss.
pub fn objective(
    teacher: &ToyNetParams,
    student: &ToyNetParams,
    batch: &TrainBatch,
    distill: &DistillConfig,
) -> Result<Objective> {
    batch.validate()?;
    let [b1, b2, b3, b4] = distill.betas;
    let s_out = forward(student, &batch.student_input)?;
    let t_out = forward(teacher, &batch.teacher_input)?;
    let (seg_s, mut d_logits) = cross_entropy(&s_out.logits.logits, &batch.student_targets)?;
    let (seg_t, d_logits_t) = cross_entropy(&t_out.logits.logits, &batch.teacher_targets)?;
    let mut terms = LossTerms {
        seg_student: seg_s,
        seg_teacher: seg_t,
        ..LossTerms::default()
    };
    let n = batch.student_input.len();

    let mut d_features: Option<DMatrix<f64>> = None;
    let mut add_features = |g: DMatrix<f64>| match d_features.as_mut() {
        Some(acc) => *acc += g,
        None => d_features = Some(g),
    };
    let rows = &batch.student_rows;
    if !rows.is_empty() && (b2 != 0.0 || b4 != 0.0) {
        let sf = FeatureMap::new(select_rows(&s_out.features.features, rows), rows.clone())?;
        let tf = FeatureMap::new(
            select_rows(&t_out.features.features, &batch.teacher_rows),
            batch.teacher_rows.clone(),
        )?;
        if b2 != 0.0 {
            let fd = feature_distill_loss(&tf, &sf, distill.smooth_l1_t)?;
            terms.feature = fd.loss;
            add_features(scatter_rows(&(fd.grad * b2), rows, n));
        }
        if b4 != 0.0 {
            let ia = iaad_loss(&tf, &sf, &batch.instances, distill.affinity_norm)?;
            terms.affinity = ia.loss;
            add_features(scatter_rows(&(ia.grad * b4), rows, n));
        }
    }
    if !rows.is_empty() && b3 != 0.0 {
        let sl = LogitMap::new(select_rows(&s_out.logits.logits, rows))?;
        let tl = LogitMap::new(select_rows(&t_out.logits.logits, &batch.teacher_rows))?;
        let kl = soft_logits_kl_loss(&tl, &sl, distill.temperature)?;
        terms.logits = kl.loss;
        d_logits += scatter_rows(&(kl.grad * b3), rows, n);
    }

    let student_grad = backward(student, &s_out.cache, &d_logits, d_features.as_ref());
    let teacher_grad =
        (b1 != 0.0).then(|| backward(teacher, &t_out.cache, &(d_logits_t * b1), None));
    Ok(Objective {
        total: total_loss(&terms, &distill.betas)?,
        terms,
        student_grad,
        teacher_grad,
    })
}

/// One gradient-descent step on both branches.
pub fn train_step(state: &mut TrainState, batch: &TrainBatch) -> Result<StepReport> {
    let obj = objective(&state.teacher, &state.student, batch, &state.distill)?;
    state.student.descend(&obj.student_grad, state.lr);
    if let Some(g) = &obj.teacher_grad {
        state.teacher.descend(g, state.lr);
    }
    state.step += 1;
    Ok(StepReport {
        step: state.step,
        terms: obj.terms,
        total: obj.total,
    })
}

/// Cross-entropy step without any distillation; returns the loss before the
/// update.
pub fn supervised_step(
    params: &mut ToyNetParams,
    cloud: &PointCloud,
    targets: &[u32],
    lr: f64,
) -> Result<f64> {
    let out = forward(params, cloud)?;
    let (loss, d_logits) = cross_entropy(&out.logits.logits, targets)?;
    let grad = backward(params, &out.cache, &d_logits, None);
    params.descend(&grad, lr);
    Ok(loss)
}

/// Header and row of the per-step loss table.
pub fn loss_table_header() -> String {
    format!(
        "{:>6} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}",
        "step", "seg_S", "seg_T", "feature", "logits", "affinity", "total"
    )
}

pub fn loss_table_row(r: &StepReport) -> String {
    let t = &r.terms;
    format!(
        "{:>6} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
        r.step, t.seg_student, t.seg_teacher, t.feature, t.logits, t.affinity, r.total
    )
}

#[cfg(test)]
mod tests {
    use nalgebra::Point3;

    use super::*;
    use crate::gradcheck::{max_relative_error, FD_STEP};

    fn cloud(points: &[[f64; 4]]) -> PointCloud {
        PointCloud::new(
            points
                .iter()
                .map(|p| Point3::new(p[0], p[1], p[2]))
                .collect(),
            points.iter().map(|p| p[3]).collect(),
        )
        .unwrap()
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        let pts: Vec<[f64; 4]> = (0..n)
            .map(|_| {
                [
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(0.0..1.0),
                ]
            })
            .collect();
        cloud(&pts)
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let p = ToyNetParams::zeros(5, 3);
        let out = forward(&p, &cloud(&[[1.0, 2.0, 3.0, 0.5], [-4.0, 0.0, 1.0, 0.1]])).unwrap();
        assert!(out.logits.logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_case() {
        let mut p = ToyNetParams::zeros(1, 1);
        p.input_scale = 1.0;
        p.w1[(0, 0)] = 0.5;
        p.b1[0] = 0.25;
        p.w2[(0, 0)] = 2.0;
        p.b2[0] = -1.0;
        let out = forward(&p, &cloud(&[[1.0, 7.0, 7.0, 7.0]])).unwrap();
        let h = 0.75f64.tanh();
        assert_eq!(out.features.features[(0, 0)], h);
        assert_eq!(out.logits.logits[(0, 0)], 2.0 * h - 1.0);
    }

    #[test]
    fn forward_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ToyNetParams::random(6, 4, &mut rng);
        let c = random_cloud(&mut rng, 30);
        let perm: Vec<usize> = (0..30).rev().collect();
        let a = forward(&p, &c).unwrap();
        let b = forward(&p, &c.select(&perm)).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            assert_eq!(b.logits.logits.row(i), a.logits.logits.row(src));
            assert_eq!(b.features.features.row(i), a.features.features.row(src));
        }
    }

    #[test]
    fn shape_validation() {
        let mut p = ToyNetParams::zeros(3, 2);
        p.b1 = DVector::zeros(2);
        assert!(matches!(p.validate(), Err(Error::ShapeError(_))));
        let c = cloud(&[[0.0; 4]]);
        let bad = TrainBatch {
            student_rows: vec![0],
            teacher_rows: vec![3],
            ..TrainBatch::identical(c, vec![1], vec![]).unwrap()
        };
        assert!(matches!(bad.validate(), Err(Error::ShapeError(_))));
    }

    fn small_batch(seed: u64) -> TrainBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let student = random_cloud(&mut rng, 12);
        let mut teacher = student.clone();
        teacher.extend_from(&random_cloud(&mut rng, 8));
        let targets: Vec<u32> = (0..12).map(|i| (i % 3) as u32).collect();
        let mut teacher_targets = targets.clone();
        teacher_targets.extend((0..8).map(|i| (i % 3) as u32 + 1));
        TrainBatch {
            student_input: student,
            student_targets: targets,
            teacher_input: teacher,
            teacher_targets,
            student_rows: vec![1, 2, 4, 5, 7, 8, 10],
            teacher_rows: vec![1, 2, 4, 5, 7, 8, 10],
            instances: vec![vec![0, 1, 2], vec![3, 4, 5, 6]],
        }
    }

    #[test]
    fn end_to_end_student_gradient() {
        let batch = small_batch(3);
        let cfg = TrainConfig::default();
        for seed in 0..5 {
            let state = TrainState::new(&cfg, 4, seed).unwrap();
            let obj = objective(&state.teacher, &state.student, &batch, &cfg.distill).unwrap();
            let base = state.student.to_vec();
            let numeric: Vec<f64> = (0..base.len())
                .map(|k| {
                    let eval = |delta: f64| {
                        let mut v = base.clone();
                        v[k] += delta;
                        let s = state.student.with_values(&v).unwrap();
                        objective(&state.teacher, &s, &batch, &cfg.distill)
                            .unwrap()
                            .total
                    };
                    (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP)
                })
                .collect();
            let err = max_relative_error(&obj.student_grad.to_vec(), &numeric);
            assert!(err < 1e-3, "seed {seed}: {err}");
        }
    }

    #[test]
    fn copied_teacher_has_zero_distillation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = random_cloud(&mut rng, 10);
        let batch = TrainBatch::identical(c, vec![1; 10], vec![(0..10).collect()]).unwrap();
        let mut state = TrainState::new(&TrainConfig::default(), 3, 2).unwrap();
        state.student = state.teacher.clone();
        let r = train_step(&mut state, &batch).unwrap();
        assert_eq!(
            (r.terms.feature, r.terms.logits, r.terms.affinity),
            (0.0, 0.0, 0.0)
        );
        assert_eq!(r.step, 1);
    }

    #[test]
    fn zero_betas_match_supervised_step() {
        let batch = small_batch(5);
        let cfg = TrainConfig {
            distill: DistillConfig {
                betas: [0.0; 4],
                ..DistillConfig::default()
            },
            ..TrainConfig::default()
        };
        let mut state = TrainState::new(&cfg, 4, 11).unwrap();
        let mut plain = state.student.clone();
        let teacher0 = state.teacher.clone();
        for _ in 0..5 {
            let r = train_step(&mut state, &batch).unwrap();
            let loss = supervised_step(
                &mut plain,
                &batch.student_input,
                &batch.student_targets,
                cfg.lr,
            )
            .unwrap();
            assert_eq!(r.total.to_bits(), loss.to_bits());
            assert_eq!(state.student, plain);
        }
        assert_eq!(state.teacher, teacher0);
    }

    #[test]
    fn supervised_training_separates_two_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pts: Vec<[f64; 4]> = (0..40)
            .map(|i| {
                let side = if i % 2 == 0 { -5.0 } else { 5.0 };
                [
                    side + rng.random_range(-1.0..1.0),
                    rng.random_range(-3.0..3.0),
                    0.0,
                    0.5,
                ]
            })
            .collect();
        let targets: Vec<u32> = (0..40).map(|i| 1 + (i % 2) as u32).collect();
        let c = cloud(&pts);
        let mut p = ToyNetParams::random(8, 3, &mut rng);
        let first = supervised_step(&mut p, &c, &targets, 0.1).unwrap();
        let mut last = first;
        for _ in 0..49 {
            last = supervised_step(&mut p, &c, &targets, 0.1).unwrap();
        }
        assert!(last < first);
    }

    #[test]
    fn memorised_single_point() {
        let mut p = ToyNetParams::zeros(2, 3);
        p.b2[2] = 1.0;
        let c = cloud(&[[0.0, 0.0, 0.0, 0.0]]);
        let r = evaluate(&p, &[(&c, &[2][..])], &[0].into()).unwrap();
        assert_eq!(r.mean, 1.0);
        let again = evaluate(&p, &[(&c, &[2][..])], &[0].into()).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn cross_entropy_ignores_unlabelled() {
        let logits = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 5.0, -5.0]);
        let (loss, grad) = cross_entropy(&logits, &[1, 0]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert_eq!(grad.row(1).sum(), 0.0);
        assert!(cross_entropy(&logits, &[2, 0]).is_err());
    }
}
