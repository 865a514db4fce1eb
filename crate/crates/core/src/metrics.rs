//! Confusion matrices and mean intersection-over-union.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// `counts[g][p]`: points with ground truth `g` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
    ignore: BTreeSet<u32>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize, ignore: BTreeSet<u32>) -> Self {
        Self {
            counts: vec![vec![0; n_classes]; n_classes],
            ignore,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn ignore(&self) -> &BTreeSet<u32> {
        &self.ignore
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt][pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn check(&self, class: u32) -> Result<usize> {
        if (class as usize) < self.n_classes() {
            Ok(class as usize)
        } else {
            Err(Error::ClassRangeError {
                class,
                n_classes: self.n_classes(),
            })
        }
    }

    /// Adds one point. Ground truth in the ignore set is skipped.
    pub fn add(&mut self, gt: u32, pred: u32) -> Result<()> {
        if self.ignore.contains(&gt) {
            return Ok(());
        }
        let g = self.check(gt)?;
        let p = self.check(pred)?;
        self.counts[g][p] += 1;
        Ok(())
    }

    pub fn add_all(&mut self, pred: &[u32], gt: &[u32]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::ShapeError(format!(
                "{} predictions for {} labels",
                pred.len(),
                gt.len()
            )));
        }
        // validate first so a failed call leaves the matrix untouched
        for (&g, &p) in gt.iter().zip(pred) {
            if !self.ignore.contains(&g) {
                self.check(g)?;
                self.check(p)?;
            }
        }
        for (&g, &p) in gt.iter().zip(pred) {
            self.add(g, p)?;
        }
        Ok(())
    }

    /// Elementwise sum of two shards.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n_classes() != self.n_classes() || other.ignore != self.ignore {
            return Err(Error::ShapeError(format!(
                "cannot merge {}-class matrix into {}-class matrix",
                other.n_classes(),
                self.n_classes()
            )));
        }
        for (row, orow) in self.counts.iter_mut().zip(&other.counts) {
            for (c, o) in row.iter_mut().zip(orow) {
                *c += o;
            }
        }
        Ok(())
    }
}

pub fn accumulate_confusion(
    pred: &[u32],
    gt: &[u32],
    n_classes: usize,
    ignore: &BTreeSet<u32>,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(n_classes, ignore.clone());
    cm.add_all(pred, gt)?;
    Ok(cm)
}

/// Per-class IoU (`None` for ignored classes and classes absent from both
/// ground truth and prediction) and the mean over the rest.
pub fn miou(cm: &ConfusionMatrix) -> Result<(Vec<Option<f64>>, f64)> {
    let n = cm.n_classes();
    let mut per_class = Vec::with_capacity(n);
    let mut fractions = Vec::new();
    for c in 0..n {
        if cm.ignore.contains(&(c as u32)) {
            per_class.push(None);
            continue;
        }
        let tp = cm.counts[c][c];
        let fn_: u64 = cm.counts[c].iter().sum::<u64>() - tp;
        let fp: u64 = (0..n).map(|g| cm.counts[g][c]).sum::<u64>() - tp;
        let denom = tp + fp + fn_;
        per_class.push((denom > 0).then(|| tp as f64 / denom as f64));
        if denom > 0 {
            fractions.push((tp, denom));
        }
    }
    if fractions.is_empty() {
        return Err(Error::NoValidClasses);
    }
    let mean = exact_mean(&fractions)
        .unwrap_or_else(|| per_class.iter().flatten().sum::<f64>() / fractions.len() as f64);
    Ok((per_class, mean))
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Mean of `num/den` fractions rounded once, or `None` on overflow.
fn exact_mean(fractions: &[(u64, u64)]) -> Option<f64> {
    let (mut num, mut den) = (0u128, 1u128);
    for &(n, d) in fractions {
        let (n, d) = (n as u128, d as u128);
        let g = gcd(den, d);
        let l = (den / g).checked_mul(d)?;
        num = num
            .checked_mul(l / den)?
            .checked_add(n.checked_mul(l / d)?)?;
        den = l;
        let r = gcd(num, den);
        if r > 1 {
            num /= r;
            den /= r;
        }
    }
    den = den.checked_mul(fractions.len() as u128)?;
    let r = gcd(num, den);
    let (num, den) = (num / r.max(1), den / r.max(1));
    // both below 2^53 convert exactly and the division rounds once
    const LIMIT: u128 = 1 << 53;
    (num < LIMIT && den < LIMIT).then(|| num as f64 / den as f64)
}

/// One header line and one value line: each non-ignored class in index
/// order, then `mIoU`. Values are percentages with one decimal; classes
/// without a defined IoU print `-`.
pub fn format_iou_table(
    names: &[&str],
    per_class: &[Option<f64>],
    mean: f64,
    ignore: &BTreeSet<u32>,
) -> String {
    let cols: Vec<usize> = (0..per_class.len())
        .filter(|c| !ignore.contains(&(*c as u32)))
        .collect();
    let width = |c: usize| names.get(c).map_or(4, |n| n.len().max(5));
    let mut header = String::new();
    let mut values = String::new();
    for &c in &cols {
        let name = names.get(c).copied().unwrap_or("?");
        let w = width(c);
        let _ = write!(header, "{name:>w$} ");
        match per_class[c] {
            Some(v) => {
                let _ = write!(values, "{:>w$.1} ", v * 100.0);
            }
            None => {
                let _ = write!(values, "{:>w$} ", "-");
            }
        }
    }
    let _ = write!(header, "{:>6}", "mIoU");
    let _ = write!(values, "{:>6.1}", mean * 100.0);
    format!("{header}\n{values}\n")
}
