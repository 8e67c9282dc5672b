//! Expected accuracy and group-fairness differences, plus accuracy-at-
//! threshold tables.
//!
//! All fairness differences are signed as group 0 minus group 1. The scalar
//! value of a multi-component metric (eo, cdp) is the largest absolute
//! component.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{empirical_group_rates, empirical_group_rates_lenient, Conditioning, Dataset, Split};
use crate::error::{Error, Result};
use crate::model::{predict_rows, Predictor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    ExpectedAccuracy,
    HardAccuracy,
    DpDifference,
    EoDifference,
    CdpDifference,
}

impl MetricName {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::ExpectedAccuracy => "expected_accuracy",
            MetricName::HardAccuracy => "hard_accuracy",
            MetricName::DpDifference => "dp_difference",
            MetricName::EoDifference => "eo_difference",
            MetricName::CdpDifference => "cdp_difference",
        }
    }
}

/// Signed group difference within one conditioning cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub cell: String,
    pub signed: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub name: MetricName,
    pub value: f64,
    /// The signed quantity behind `value`: the accuracy itself, the signed
    /// dp difference, or the eo/cdp component of largest magnitude.
    pub signed: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<Component>,
    pub split: Option<Split>,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hard_accuracy: Option<f64>,
    /// Count-weighted mean of the cdp components.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighted_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<String>,
}

impl MetricResult {
    fn new(name: MetricName, value: f64, signed: f64, n: usize) -> Self {
        MetricResult {
            name,
            value,
            signed,
            components: Vec::new(),
            split: None,
            n,
            hard_accuracy: None,
            weighted_mean: None,
            dropped: Vec::new(),
        }
    }

    fn from_components(name: MetricName, components: Vec<Component>, n: usize) -> Self {
        let mut best = &components[0];
        for c in &components[1..] {
            if c.signed.abs() > best.signed.abs() {
                best = c;
            }
        }
        let mut r = MetricResult::new(name, best.signed.abs(), best.signed, n);
        r.components = components;
        r
    }

    fn on(mut self, split: Split) -> Self {
        self.split = Some(split);
        self
    }
}

fn non_empty(rows: &[usize]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::EmptySplit("evaluation rows".into()));
    }
    Ok(())
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = j;
        }
    }
    best
}

/// Accuracy metrics from precomputed outputs (`rows.len() x k`, row-major).
/// Randomized rules have no separate hard decision, so their hard accuracy
/// is the expected one.
pub fn accuracy_from_probs(probs: &[f64], k: usize, ds: &Dataset, rows: &[usize], randomized: bool) -> Result<MetricResult> {
    non_empty(rows)?;
    let (mut soft, mut hard) = (0.0, 0usize);
    for (p, &i) in probs.chunks(k).zip(rows) {
        let y = ds.y()[i];
        soft += p[y];
        hard += usize::from(argmax(p) == y);
    }
    let n = rows.len() as f64;
    let soft = soft / n;
    let mut r = MetricResult::new(MetricName::ExpectedAccuracy, soft, soft, rows.len());
    r.hard_accuracy = Some(if randomized { soft } else { hard as f64 / n });
    Ok(r)
}

/// Mean of output component `class` per protected group.
fn group_means(probs: &[f64], k: usize, ds: &Dataset, rows: &[usize], class: usize) -> Result<[f64; 2]> {
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    for (p, &i) in probs.chunks(k).zip(rows) {
        let a = usize::from(ds.a()[i]);
        sums[a] += p[class];
        counts[a] += 1;
    }
    for g in 0..2 {
        if counts[g] == 0 {
            return Err(Error::MissingGroup(g as u8));
        }
    }
    Ok([sums[0] / counts[0] as f64, sums[1] / counts[1] as f64])
}

/// `E[f | a=0] - E[f | a=1]` where `f` is the class-1 output.
pub fn dp_from_probs(probs: &[f64], k: usize, ds: &Dataset, rows: &[usize]) -> Result<MetricResult> {
    non_empty(rows)?;
    let m = group_means(probs, k, ds, rows, 1)?;
    let signed = m[0] - m[1];
    Ok(MetricResult::new(MetricName::DpDifference, signed.abs(), signed, rows.len()))
}

/// Per label y: `E[f_y | y, a=0] - E[f_y | y, a=1]`.
pub fn eo_from_probs(probs: &[f64], k: usize, ds: &Dataset, rows: &[usize]) -> Result<MetricResult> {
    non_empty(rows)?;
    let rates = empirical_group_rates(ds, rows, &Conditioning::Label)?;
    let mut components = Vec::new();
    for cell in &rates.cells {
        let y = cell.key.0[0] as usize;
        let (sub_rows, sub_probs) = select(probs, k, rows, |i| ds.y()[i] == y);
        let m = group_means(&sub_probs, k, ds, &sub_rows, y)?;
        components.push(Component {
            cell: cell.label.clone(),
            signed: m[0] - m[1],
            count: cell.count,
        });
    }
    Ok(MetricResult::from_components(MetricName::EoDifference, components, rows.len()))
}

/// Per resolving cell: `E[f_target | v, a=0] - E[f_target | v, a=1]`.
/// Cells lacking a protected group are dropped and listed.
pub fn cdp_from_probs(
    probs: &[f64],
    k: usize,
    ds: &Dataset,
    rows: &[usize],
    resolving: &[usize],
    target: usize,
) -> Result<MetricResult> {
    non_empty(rows)?;
    let conditioning = Conditioning::Resolving(resolving.to_vec());
    let rates = empirical_group_rates_lenient(ds, rows, &conditioning)?;
    let mut components = Vec::new();
    for cell in &rates.cells {
        let (sub_rows, sub_probs) = select(probs, k, rows, |i| ds.cell_key(i, &conditioning) == cell.key);
        let m = group_means(&sub_probs, k, ds, &sub_rows, target)?;
        components.push(Component {
            cell: cell.label.clone(),
            signed: m[0] - m[1],
            count: cell.count,
        });
    }
    let total: usize = components.iter().map(|c| c.count).sum();
    let mean = components.iter().map(|c| c.signed * c.count as f64).sum::<f64>() / total as f64;
    let mut r = MetricResult::from_components(MetricName::CdpDifference, components, rows.len());
    r.weighted_mean = Some(mean);
    r.dropped = rates.dropped;
    Ok(r)
}

fn select(probs: &[f64], k: usize, rows: &[usize], keep: impl Fn(usize) -> bool) -> (Vec<usize>, Vec<f64>) {
    let mut sub_rows = Vec::new();
    let mut sub_probs = Vec::new();
    for (p, &i) in probs.chunks(k).zip(rows) {
        if keep(i) {
            sub_rows.push(i);
            sub_probs.extend_from_slice(p);
        }
    }
    (sub_rows, sub_probs)
}

pub fn expected_accuracy_rows(p: &dyn Predictor, ds: &Dataset, rows: &[usize]) -> Result<MetricResult> {
    accuracy_from_probs(&predict_rows(p, ds, rows), p.n_classes(), ds, rows, p.is_randomized())
}

pub fn dp_difference_rows(p: &dyn Predictor, ds: &Dataset, rows: &[usize]) -> Result<MetricResult> {
    dp_from_probs(&predict_rows(p, ds, rows), p.n_classes(), ds, rows)
}

pub fn eo_difference_rows(p: &dyn Predictor, ds: &Dataset, rows: &[usize]) -> Result<MetricResult> {
    eo_from_probs(&predict_rows(p, ds, rows), p.n_classes(), ds, rows)
}

pub fn cdp_difference_rows(p: &dyn Predictor, ds: &Dataset, rows: &[usize], resolving: &[usize], target: usize) -> Result<MetricResult> {
    cdp_from_probs(&predict_rows(p, ds, rows), p.n_classes(), ds, rows, resolving, target)
}

fn split_rows(ds: &Dataset, split: Split) -> Result<Vec<usize>> {
    let rows = ds.rows(split);
    if rows.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    Ok(rows)
}

pub fn expected_accuracy(p: &dyn Predictor, ds: &Dataset, split: Split) -> Result<MetricResult> {
    Ok(expected_accuracy_rows(p, ds, &split_rows(ds, split)?)?.on(split))
}

pub fn dp_difference(p: &dyn Predictor, ds: &Dataset, split: Split) -> Result<MetricResult> {
    Ok(dp_difference_rows(p, ds, &split_rows(ds, split)?)?.on(split))
}

pub fn eo_difference(p: &dyn Predictor, ds: &Dataset, split: Split) -> Result<MetricResult> {
    Ok(eo_difference_rows(p, ds, &split_rows(ds, split)?)?.on(split))
}

pub fn cdp_difference(p: &dyn Predictor, ds: &Dataset, split: Split, resolving: &[usize], target: usize) -> Result<MetricResult> {
    Ok(cdp_difference_rows(p, ds, &split_rows(ds, split)?, resolving, target)?.on(split))
}

/// One finished run as it enters an accuracy-at-threshold table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    /// Hard test accuracy in `[0, 1]`.
    pub accuracy: f64,
    pub fairness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub metric: String,
    pub thresholds: Vec<f64>,
    /// Per method: best accuracy in percent at each threshold, if any run
    /// qualifies.
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

/// For each method (in order of first appearance) and threshold `t`, the best
/// accuracy among runs with fairness value at most `t`. With descending
/// thresholds each row is non-increasing.
pub fn threshold_table(metric: &str, runs: &[RunRecord], thresholds: &[f64]) -> ThresholdTable {
    let mut methods: Vec<&str> = Vec::new();
    for r in runs {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let rows = methods
        .into_iter()
        .map(|m| {
            let cells = thresholds
                .iter()
                .map(|&t| {
                    runs.iter()
                        .filter(|r| r.method == m && r.fairness <= t)
                        .map(|r| 100.0 * r.accuracy)
                        .fold(None, |best: Option<f64>, v| Some(best.map_or(v, |b| b.max(v))))
                })
                .collect();
            (m.to_string(), cells)
        })
        .collect();
    ThresholdTable {
        metric: metric.to_string(),
        thresholds: thresholds.to_vec(),
        rows,
    }
}

fn cell_text(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

impl ThresholdTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method");
        for t in &self.thresholds {
            let _ = write!(out, ",{} <= {t}", self.metric);
        }
        out.push('\n');
        for (m, cells) in &self.rows {
            out.push_str(m);
            for c in cells {
                out.push(',');
                out.push_str(&cell_text(*c));
            }
            out.push('\n');
        }
        out
    }

    /// Aligned plain text, one row per method.
    pub fn to_text(&self) -> String {
        let header: Vec<String> = std::iter::once("Method".to_string())
            .chain(self.thresholds.iter().map(|t| format!("{t}")))
            .collect();
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|(m, cells)| std::iter::once(m.clone()).chain(cells.iter().map(|c| cell_text(*c))).collect())
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|j| body.iter().map(|r| r[j].len()).chain([header[j].len()]).max().unwrap_or(0))
            .collect();
        let line = |cells: &[String]| -> String {
            let mut s = format!("{:<w$}", cells[0], w = widths[0]);
            for (c, w) in cells[1..].iter().zip(&widths[1..]) {
                let _ = write!(s, "  {c:>w$}");
            }
            s.trim_end().to_string() + "\n"
        };
        let mut out = format!("Accuracy [%] at {} thresholds\n", self.metric);
        out.push_str(&line(&header));
        for r in &body {
            out.push_str(&line(r));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{RawFeature, RawValue, TableBuilder};
    use crate::model::Constant;

    /// Four training rows with y independent of a.
    fn four_rows() -> Dataset {
        let mut b = TableBuilder::new("four", 2);
        b.feature(RawFeature::categorical("g", Some(vec!["f".into(), "m".into()])).protected());
        b.feature(RawFeature::continuous("v"));
        for (g, v, y) in [("f", 1.0, 0), ("f", 2.0, 1), ("m", 3.0, 0), ("m", 4.0, 1)] {
            b.push(vec![RawValue::cat(g), RawValue::Num(v)], y, Split::Train);
        }
        b.build().unwrap()
    }

    struct ProtectedEcho([usize; 2]);

    impl Predictor for ProtectedEcho {
        fn n_classes(&self) -> usize {
            2
        }
        fn input_width(&self) -> usize {
            3
        }
        fn predict_into(&self, x: &[f64], out: &mut [f64]) {
            out[1] = x[self.0[1]];
            out[0] = 1.0 - out[1];
        }
    }

    struct Oracle;

    impl Predictor for Oracle {
        fn n_classes(&self) -> usize {
            2
        }
        fn input_width(&self) -> usize {
            3
        }
        fn predict_into(&self, x: &[f64], out: &mut [f64]) {
            // Labels are 1 exactly for v in {2, 4}; v is column 2, standardized.
            let v = x[2];
            let is_pos = (v > -0.5 && v < 0.0) || v > 1.0;
            out[1] = f64::from(u8::from(is_pos));
            out[0] = 1.0 - out[1];
        }
    }

    #[test]
    fn protected_echo_has_full_disparity() {
        let ds = four_rows();
        let p = ProtectedEcho(ds.protected_columns());
        let dp = dp_difference(&p, &ds, Split::Train).unwrap();
        assert_eq!((dp.signed, dp.value), (-1.0, 1.0));
        let eo = eo_difference(&p, &ds, Split::Train).unwrap();
        let signs: Vec<f64> = eo.components.iter().map(|c| c.signed).collect();
        // y=0: E[1-f | a=0] - E[1-f | a=1] = 1; y=1: 0 - 1 = -1.
        assert_eq!(signs, vec![1.0, -1.0]);
        assert_eq!(eo.value, 1.0);
    }

    #[test]
    fn perfect_and_constant_predictors() {
        let ds = four_rows();
        let acc = expected_accuracy(&Oracle, &ds, Split::Train).unwrap();
        assert_eq!(acc.value, 1.0);
        assert_eq!(acc.hard_accuracy, Some(1.0));
        let eo = eo_difference(&Oracle, &ds, Split::Train).unwrap();
        assert!(eo.components.iter().all(|c| c.signed == 0.0));
        let c = Constant::binary(0.5, 3);
        assert_eq!(expected_accuracy(&c, &ds, Split::Train).unwrap().value, 0.5);
        assert_eq!(dp_difference(&c, &ds, Split::Train).unwrap().value, 0.0);
        assert_eq!(eo_difference(&c, &ds, Split::Train).unwrap().value, 0.0);
    }

    #[test]
    fn cdp_without_resolving_variables_is_dp() {
        let ds = crate::dataset::synthetic::biased(300, 2);
        let p = ProtectedEcho(ds.protected_columns());
        let rows = ds.rows(Split::Train);
        let dp = dp_difference_rows(&p, &ds, &rows).unwrap();
        let cdp = cdp_difference_rows(&p, &ds, &rows, &[], 1).unwrap();
        assert_eq!(cdp.components.len(), 1);
        assert!((cdp.signed - dp.signed).abs() < 1e-15);
    }

    #[test]
    fn missing_group_is_an_error() {
        let ds = four_rows();
        let c = Constant::binary(0.5, 3);
        assert!(matches!(dp_difference_rows(&c, &ds, &[0, 1]), Err(Error::MissingGroup(1))));
        assert!(matches!(expected_accuracy_rows(&c, &ds, &[]), Err(Error::EmptySplit(_))));
    }

    #[test]
    fn threshold_table_cells() {
        let runs = [RunRecord {
            method: "m".into(),
            accuracy: 0.84,
            fairness: 0.05,
        }];
        let t = threshold_table("dp", &runs, &[0.1, 0.04]);
        assert_eq!(t.rows[0].1, vec![Some(84.0), None]);
        assert!(t.to_csv().ends_with("m,84.00,-\n"));
        assert!(t.to_text().contains("84.00"));
    }
}
