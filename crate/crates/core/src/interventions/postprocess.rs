//! Score post-processors: quantile repair toward the pooled score
//! distribution, and randomized equalized-odds thresholds.

use std::borrow::Cow;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::{LinearStage, Predictor};

fn require_binary(base: &dyn Predictor) -> Result<()> {
    if base.n_classes() != 2 {
        return Err(Error::InvalidConfig(format!(
            "post-processing needs a binary classifier, got {} classes",
            base.n_classes()
        )));
    }
    Ok(())
}

fn score(base: &dyn Predictor, x: &[f64]) -> f64 {
    let mut p = [0.0; 2];
    base.predict_into(x, &mut p);
    p[1]
}

/// Partial repair of each group's score distribution toward the pooled one:
/// `s -> (1 - lambda) s + lambda Q_pooled(F_group(s))`.
#[derive(Clone)]
pub struct FeldmanRepair {
    pub base: Arc<dyn Predictor>,
    pub base_ref: Option<String>,
    pub lambda: f64,
    pub protected_columns: [usize; 2],
    /// Sorted training scores of each protected group.
    pub group_scores: [Vec<f64>; 2],
    /// Sorted training scores of both groups together.
    pub pooled: Vec<f64>,
}

impl std::fmt::Debug for FeldmanRepair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeldmanRepair")
            .field("base", &self.base.name())
            .field("lambda", &self.lambda)
            .finish()
    }
}

/// Fraction of `sorted` at or below `s`.
fn ecdf(sorted: &[f64], s: f64) -> f64 {
    sorted.partition_point(|v| *v <= s) as f64 / sorted.len() as f64
}

/// Lower inverse of the empirical CDF: smallest value whose CDF reaches `u`.
fn quantile(sorted: &[f64], u: f64) -> f64 {
    let n = sorted.len();
    let idx = ((u * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

impl FeldmanRepair {
    pub fn repair(&self, s: f64, a: u8) -> f64 {
        let u = ecdf(&self.group_scores[usize::from(a)], s);
        let target = quantile(&self.pooled, u);
        ((1.0 - self.lambda) * s + self.lambda * target).clamp(0.0, 1.0)
    }
}

impl Predictor for FeldmanRepair {
    fn n_classes(&self) -> usize {
        2
    }

    fn input_width(&self) -> usize {
        self.base.input_width()
    }

    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        let a = u8::from(x[self.protected_columns[1]] > 0.5);
        let s = self.repair(score(self.base.as_ref(), x), a);
        out[0] = 1.0 - s;
        out[1] = s;
    }

    fn name(&self) -> String {
        format!("{}+feldman({})", self.base.name(), self.lambda)
    }

    fn linear_stage(&self) -> Option<LinearStage<'_>> {
        stage_with_protected(self.base.as_ref(), self.protected_columns[1])
    }

    fn stage_rows(&self) -> Option<usize> {
        Some(self.base.stage_rows()? + 1)
    }

    fn predict_from_stage(&self, stage: &[f64], out: &mut [f64]) {
        let (s, a) = score_from_stage(self.base.as_ref(), stage);
        let s = self.repair(s, u8::from(a));
        out[0] = 1.0 - s;
        out[1] = s;
    }
}

/// The base's affine stage plus one row reading the protected indicator.
fn stage_with_protected(base: &dyn Predictor, column: usize) -> Option<LinearStage<'_>> {
    let stage = base.linear_stage()?;
    let d = base.input_width();
    let mut weights = stage.weights.into_owned();
    let mut bias = stage.bias.into_owned();
    let mut row = vec![0.0; d];
    row[column] = 1.0;
    weights.extend(row);
    bias.push(0.0);
    Some(LinearStage {
        weights: Cow::Owned(weights),
        bias: Cow::Owned(bias),
    })
}

/// Base class-1 score and protected indicator from a [`stage_with_protected`] image.
fn score_from_stage(base: &dyn Predictor, stage: &[f64]) -> (f64, bool) {
    let (base_stage, a) = stage.split_at(stage.len() - 1);
    let mut out = [0.0; 2];
    base.predict_from_stage(base_stage, &mut out);
    (out[1], a[0] > 0.5)
}

/// Fits the repair on the training split.
pub fn feldman_postprocess(base: Arc<dyn Predictor>, ds: &Dataset, lambda: f64) -> Result<FeldmanRepair> {
    require_binary(base.as_ref())?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidConfig(format!("repair degree {lambda} outside [0, 1]")));
    }
    let rows = ds.rows(Split::Train);
    let mut groups: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for &i in &rows {
        groups[usize::from(ds.a()[i])].push(score(base.as_ref(), ds.row(i)));
    }
    for (g, scores) in groups.iter_mut().enumerate() {
        if scores.is_empty() {
            return Err(Error::MissingGroup(g as u8));
        }
        scores.sort_by(f64::total_cmp);
        if scores[0] == scores[scores.len() - 1] {
            return Err(Error::Degenerate(format!("group {g} has constant training scores")));
        }
    }
    let mut pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    pooled.sort_by(f64::total_cmp);
    Ok(FeldmanRepair {
        base,
        base_ref: None,
        lambda,
        protected_columns: ds.protected_columns(),
        group_scores: groups,
        pooled,
    })
}

/// Score threshold above every probability: predicts nobody positive.
pub const THRESHOLD_NONE: f64 = 2.0;

/// `P(yhat = 1 | s) = beta * (w 1[s >= t0] + (1 - w) 1[s >= t1]) + (1 - beta) * coin`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRule {
    pub thresholds: [f64; 2],
    pub weight: f64,
    pub beta: f64,
    pub coin: f64,
}

impl GroupRule {
    pub fn positive_rate(&self, s: f64) -> f64 {
        let step = |t: f64| f64::from(u8::from(s >= t));
        let hull = self.weight * step(self.thresholds[0]) + (1.0 - self.weight) * step(self.thresholds[1]);
        self.beta * hull + (1.0 - self.beta) * self.coin
    }
}

/// Group-specific randomized thresholds equalizing TPR and FPR.
#[derive(Clone)]
pub struct HardtRule {
    pub base: Arc<dyn Predictor>,
    pub base_ref: Option<String>,
    pub protected_columns: [usize; 2],
    pub groups: [GroupRule; 2],
    /// Common operating point `(fpr, tpr)` on the validation split.
    pub operating_point: (f64, f64),
}

impl std::fmt::Debug for HardtRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HardtRule")
            .field("base", &self.base.name())
            .field("groups", &self.groups)
            .field("operating_point", &self.operating_point)
            .finish()
    }
}

impl Predictor for HardtRule {
    fn n_classes(&self) -> usize {
        2
    }

    fn input_width(&self) -> usize {
        self.base.input_width()
    }

    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        let a = usize::from(x[self.protected_columns[1]] > 0.5);
        let q = self.groups[a].positive_rate(score(self.base.as_ref(), x));
        out[0] = 1.0 - q;
        out[1] = q;
    }

    fn name(&self) -> String {
        format!("{}+hardt", self.base.name())
    }

    fn is_randomized(&self) -> bool {
        true
    }

    fn linear_stage(&self) -> Option<LinearStage<'_>> {
        stage_with_protected(self.base.as_ref(), self.protected_columns[1])
    }

    fn stage_rows(&self) -> Option<usize> {
        Some(self.base.stage_rows()? + 1)
    }

    fn predict_from_stage(&self, stage: &[f64], out: &mut [f64]) {
        let (s, a) = score_from_stage(self.base.as_ref(), stage);
        let q = self.groups[usize::from(a)].positive_rate(s);
        out[0] = 1.0 - q;
        out[1] = q;
    }
}

/// Vertex of an ROC curve: predicting positive when `s >= threshold`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct RocPoint {
    fpr: f64,
    tpr: f64,
    threshold: f64,
}

/// Upper convex hull of the empirical ROC curve, from `(0, 0)` to `(1, 1)`
/// in increasing FPR.
fn roc_hull(scores: &[(f64, usize)]) -> Vec<RocPoint> {
    let pos = scores.iter().filter(|(_, y)| *y == 1).count() as f64;
    let neg = scores.len() as f64 - pos;
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: THRESHOLD_NONE,
    }];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 == 1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp / neg,
            tpr: tp / pos,
            threshold: t,
        });
    }
    let mut hull: Vec<RocPoint> = Vec::new();
    for p in points {
        while hull.len() >= 2 {
            let (o, a) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (a.fpr - o.fpr) * (p.tpr - o.tpr) - (a.tpr - o.tpr) * (p.fpr - o.fpr);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

/// Hull TPR at `fpr`, with the two vertices and the weight on the left one.
fn hull_at(hull: &[RocPoint], fpr: f64) -> (f64, RocPoint, RocPoint, f64) {
    let j = hull.partition_point(|p| p.fpr < fpr).clamp(1, hull.len() - 1);
    let (l, r) = (hull[j - 1], hull[j]);
    if r.fpr == l.fpr {
        return (r.tpr, r, r, 1.0);
    }
    let w = ((r.fpr - fpr) / (r.fpr - l.fpr)).clamp(0.0, 1.0);
    (w * l.tpr + (1.0 - w) * r.tpr, l, r, w)
}

/// Fits the rule on the validation split by scanning common FPR values on a
/// 1e-3 grid plus every hull vertex, realizing each group's point as a mix
/// of two hull thresholds and a coin flip.
pub fn hardt_postprocess(base: Arc<dyn Predictor>, ds: &Dataset) -> Result<HardtRule> {
    require_binary(base.as_ref())?;
    let rows = ds.rows(Split::Validation);
    let mut groups: [Vec<(f64, usize)>; 2] = [Vec::new(), Vec::new()];
    for &i in &rows {
        groups[usize::from(ds.a()[i])].push((score(base.as_ref(), ds.row(i)), ds.y()[i]));
    }
    for (g, s) in groups.iter().enumerate() {
        for y in 0..2 {
            if !s.iter().any(|(_, yy)| *yy == y) {
                return Err(Error::DegenerateCell {
                    cell: format!("y={y}"),
                    group: g as u8,
                });
            }
        }
        if s.iter().all(|(v, _)| *v == s[0].0) {
            return Err(Error::Degenerate(format!("group {g} has constant validation scores")));
        }
    }
    let hulls = [roc_hull(&groups[0]), roc_hull(&groups[1])];
    let n = rows.len() as f64;
    let p1 = rows.iter().filter(|&&i| ds.y()[i] == 1).count() as f64 / n;
    let mut candidates: Vec<f64> = (0..=1000).map(|i| f64::from(i) / 1000.0).collect();
    candidates.extend(hulls.iter().flatten().map(|p| p.fpr));
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for &f in &candidates {
        let t = hull_at(&hulls[0], f).0.min(hull_at(&hulls[1], f).0);
        let err = (1.0 - p1) * f + p1 * (1.0 - t);
        if err < best.0 {
            best = (err, f, t);
        }
    }
    let (_, f, t) = best;
    let rules = [0, 1].map(|g| {
        let (u, l, r, w) = hull_at(&hulls[g], f);
        let beta = if u - f > 0.0 { ((t - f) / (u - f)).clamp(0.0, 1.0) } else { 1.0 };
        GroupRule {
            thresholds: [l.threshold, r.threshold],
            weight: w,
            beta,
            coin: f,
        }
    });
    Ok(HardtRule {
        base,
        base_ref: None,
        protected_columns: ds.protected_columns(),
        groups: rules,
        operating_point: (f, t),
    })
}
