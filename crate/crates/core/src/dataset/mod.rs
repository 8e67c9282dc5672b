//! Tabular datasets: encoded feature matrix, labels, protected attribute,
//! Shapley player groups and split tags.
//!
//! The protected attribute is always binarized and always kept in the
//! encoded matrix as a two-column one-hot block; models that must not see
//! it select their input columns instead (see [`crate::model::FeedForward`]).

mod adult;
mod bundle;
mod compas;
mod encode;
pub mod synthetic;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adult::{load_adult, AdultOptions};
pub use bundle::{read_bundle, write_bundle, BUNDLE_FORMAT_VERSION};
pub use compas::{load_compas, CompasOptions, JailEncoding};
pub use encode::{assign_splits, RawFeature, RawValue, TableBuilder};

/// Seed used for train/validation/test shuffles when none is given.
pub const DEFAULT_SPLIT_SEED: u64 = 2020;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Categorical,
    Continuous,
}

/// Raw feature vocabulary entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    /// Ordered categories; empty for continuous features.
    pub categories: Vec<String>,
    pub is_protected: bool,
}

/// One Shapley player: an original feature and the encoded columns it owns.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub player_name: String,
    pub column_indices: Vec<usize>,
}

/// Training-split statistics used to standardize one continuous column.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub column: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    features: Vec<FeatureSpec>,
    groups: Vec<FeatureGroup>,
    columns: Vec<String>,
    x: Vec<f64>,
    y: Vec<usize>,
    a: Vec<u8>,
    split: Vec<Split>,
    standardization: Vec<ColumnStats>,
    n_classes: usize,
    label_names: Vec<String>,
}

/// Raw parts of a [`Dataset`]; `Dataset::from_parts` validates them.
#[derive(Clone, Debug)]
pub struct DatasetParts {
    pub name: String,
    pub features: Vec<FeatureSpec>,
    pub groups: Vec<FeatureGroup>,
    pub columns: Vec<String>,
    pub x: Vec<f64>,
    pub y: Vec<usize>,
    pub a: Vec<u8>,
    pub split: Vec<Split>,
    pub standardization: Vec<ColumnStats>,
    pub n_classes: usize,
    pub label_names: Vec<String>,
}

impl Dataset {
    pub fn from_parts(parts: DatasetParts) -> Result<Self> {
        let ds = Dataset {
            name: parts.name,
            features: parts.features,
            groups: parts.groups,
            columns: parts.columns,
            x: parts.x,
            y: parts.y,
            a: parts.a,
            split: parts.split,
            standardization: parts.standardization,
            n_classes: parts.n_classes,
            label_names: parts.label_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::InvalidConfig(m));
        let n_cols = self.columns.len();
        if n_cols == 0 {
            return invalid("dataset has no columns".into());
        }
        if self.x.len() % n_cols != 0 {
            return invalid("feature matrix is not rectangular".into());
        }
        let n = self.x.len() / n_cols;
        if self.y.len() != n || self.a.len() != n || self.split.len() != n {
            return invalid(format!(
                "row count mismatch: x has {n}, y {}, a {}, split {}",
                self.y.len(),
                self.a.len(),
                self.split.len()
            ));
        }
        if let Some(pos) = self.x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "feature matrix entry at row {}, column {}",
                pos / n_cols,
                pos % n_cols
            )));
        }
        if self.n_classes < 2 || self.y.iter().any(|&y| y >= self.n_classes) {
            return invalid("labels must lie in 0..n_classes with n_classes >= 2".into());
        }
        if self.features.len() != self.groups.len() {
            return invalid("one feature group per feature is required".into());
        }
        if self.features.iter().filter(|f| f.is_protected).count() != 1 {
            return invalid("exactly one feature must be protected".into());
        }
        let mut seen = vec![false; n_cols];
        for (spec, group) in self.features.iter().zip(&self.groups) {
            match spec.kind {
                FeatureKind::Categorical => {
                    if spec.categories.len() < 2 {
                        return invalid(format!("categorical `{}` has < 2 categories", spec.name));
                    }
                    if group.column_indices.len() != spec.categories.len() {
                        return invalid(format!("group `{}` width mismatch", spec.name));
                    }
                }
                FeatureKind::Continuous => {
                    if !spec.categories.is_empty() || group.column_indices.len() != 1 {
                        return invalid(format!("continuous `{}` must own one column", spec.name));
                    }
                }
            }
            for &c in &group.column_indices {
                if c >= n_cols || seen[c] {
                    return invalid(format!("groups do not partition columns (column {c})"));
                }
                seen[c] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return invalid("groups do not cover every column".into());
        }
        let protected = self.protected_group();
        if self.features[protected].kind != FeatureKind::Categorical
            || self.features[protected].categories.len() != 2
        {
            return invalid("protected feature must be categorical with two categories".into());
        }
        for i in 0..n {
            if self.decode_protected(self.row(i)) != self.a[i] {
                return invalid(format!("protected attribute inconsistent at row {i}"));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_players(&self) -> usize {
        self.groups.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.n_cols();
        &self.x[i * w..(i + 1) * w]
    }

    /// Row-major encoded feature matrix.
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[usize] {
        &self.y
    }

    pub fn a(&self) -> &[u8] {
        &self.a
    }

    pub fn splits(&self) -> &[Split] {
        &self.split
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn groups(&self) -> &[FeatureGroup] {
        &self.groups
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn standardization(&self) -> &[ColumnStats] {
        &self.standardization
    }

    /// Indices of all rows tagged with `split`, in dataset order.
    pub fn rows(&self, split: Split) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| self.split[i] == split).collect()
    }

    pub fn protected_group(&self) -> usize {
        self.features
            .iter()
            .position(|f| f.is_protected)
            .expect("validated: one protected feature")
    }

    /// The (a = 0, a = 1) one-hot columns of the protected attribute.
    pub fn protected_columns(&self) -> [usize; 2] {
        let g = &self.groups[self.protected_group()].column_indices;
        [g[0], g[1]]
    }

    pub fn group_index(&self, player_name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.player_name == player_name)
    }

    /// Reads the protected attribute off an encoded row.
    pub fn decode_protected(&self, row: &[f64]) -> u8 {
        let [_, c1] = self.protected_columns();
        u8::from(row[c1] > 0.5)
    }

    /// Index of the active category of a categorical group in `row`.
    pub fn decode_category(&self, group: usize, row: &[f64]) -> Option<usize> {
        if self.features[group].kind != FeatureKind::Categorical {
            return None;
        }
        let cols = &self.groups[group].column_indices;
        let active: Vec<usize> = (0..cols.len()).filter(|&k| row[cols[k]] > 0.5).collect();
        (active.len() == 1).then(|| active[0])
    }

    /// Copy of `row` with the protected attribute forced to `value`.
    pub fn intervene_protected(&self, row: &[f64], value: u8) -> Vec<f64> {
        let mut out = row.to_vec();
        let [c0, c1] = self.protected_columns();
        out[c0] = f64::from(value == 0);
        out[c1] = f64::from(value == 1);
        out
    }

    /// Cell key of row `i` under `conditioning`.
    pub fn cell_key(&self, i: usize, conditioning: &Conditioning) -> CellKey {
        match conditioning {
            Conditioning::None => CellKey(Vec::new()),
            Conditioning::Label => CellKey(vec![self.y[i] as u64]),
            Conditioning::Resolving(groups) => {
                let row = self.row(i);
                CellKey(
                    groups
                        .iter()
                        .map(|&g| match self.decode_category(g, row) {
                            Some(k) => k as u64,
                            None => row[self.groups[g].column_indices[0]].to_bits(),
                        })
                        .collect(),
                )
            }
        }
    }

    /// Human-readable label for a cell key.
    pub fn cell_label(&self, key: &CellKey, conditioning: &Conditioning) -> String {
        match conditioning {
            Conditioning::None => "all".to_string(),
            Conditioning::Label => {
                let y = key.0[0] as usize;
                format!("y={}", self.label_names.get(y).cloned().unwrap_or(y.to_string()))
            }
            Conditioning::Resolving(groups) => groups
                .iter()
                .zip(&key.0)
                .map(|(&g, &v)| {
                    let spec = &self.features[g];
                    match spec.kind {
                        FeatureKind::Categorical => format!("{}={}", spec.name, spec.categories[v as usize]),
                        FeatureKind::Continuous => {
                            let col = self.groups[g].column_indices[0];
                            let z = f64::from_bits(v);
                            let raw = self
                                .standardization
                                .iter()
                                .find(|s| s.column == col)
                                .map_or(z, |s| z * s.std + s.mean);
                            format!("{}={raw}", spec.name)
                        }
                    }
                })
                .collect::<Vec<_>>()
                .join(","),
        }
    }
}

/// Which variables the protected-group frequencies are conditioned on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Conditioning {
    None,
    Label,
    /// Resolving variables given as feature-group indices.
    Resolving(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey(pub Vec<u64>);

/// Protected-group frequencies within one conditioning cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateCell {
    pub key: CellKey,
    pub label: String,
    pub count: usize,
    pub group_counts: [usize; 2],
    /// P(a = 0 | cell), P(a = 1 | cell).
    pub p: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRates {
    pub conditioning: Conditioning,
    pub cells: Vec<RateCell>,
    /// Cells lacking one of the protected groups (lenient mode only).
    pub dropped: Vec<String>,
}

impl GroupRates {
    pub fn cell(&self, key: &CellKey) -> Option<&RateCell> {
        self.cells.iter().find(|c| &c.key == key)
    }
}

fn tally(ds: &Dataset, rows: &[usize], conditioning: &Conditioning) -> BTreeMap<CellKey, [usize; 2]> {
    let mut cells: BTreeMap<CellKey, [usize; 2]> = BTreeMap::new();
    for &i in rows {
        cells.entry(ds.cell_key(i, conditioning)).or_default()[ds.a[i] as usize] += 1;
    }
    cells
}

fn rate_cell(ds: &Dataset, conditioning: &Conditioning, key: CellKey, counts: [usize; 2]) -> RateCell {
    let count = counts[0] + counts[1];
    RateCell {
        label: ds.cell_label(&key, conditioning),
        key,
        count,
        group_counts: counts,
        p: [counts[0] as f64 / count as f64, counts[1] as f64 / count as f64],
    }
}

/// Empirical p(a), P(a | y) or P(a | v1..vn) over `rows`.
///
/// Fails on the first cell that lacks one of the protected groups.
pub fn empirical_group_rates(ds: &Dataset, rows: &[usize], conditioning: &Conditioning) -> Result<GroupRates> {
    if rows.is_empty() {
        return Err(Error::EmptySplit("conditioning rows".into()));
    }
    let mut cells = Vec::new();
    for (key, counts) in tally(ds, rows, conditioning) {
        if let Some(group) = (0..2u8).find(|&g| counts[g as usize] == 0) {
            return Err(Error::DegenerateCell {
                cell: ds.cell_label(&key, conditioning),
                group,
            });
        }
        cells.push(rate_cell(ds, conditioning, key, counts));
    }
    Ok(GroupRates {
        conditioning: conditioning.clone(),
        cells,
        dropped: Vec::new(),
    })
}

/// Like [`empirical_group_rates`] but drops degenerate cells and reports them.
pub fn empirical_group_rates_lenient(
    ds: &Dataset,
    rows: &[usize],
    conditioning: &Conditioning,
) -> Result<GroupRates> {
    let mut cells = Vec::new();
    let mut dropped = Vec::new();
    for (key, counts) in tally(ds, rows, conditioning) {
        if counts[0] == 0 || counts[1] == 0 {
            dropped.push(ds.cell_label(&key, conditioning));
        } else {
            cells.push(rate_cell(ds, conditioning, key, counts));
        }
    }
    if cells.is_empty() {
        return Err(Error::Degenerate("every conditioning cell lacks a protected group".into()));
    }
    Ok(GroupRates {
        conditioning: conditioning.clone(),
        cells,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        // 4 rows: label 0 rows are all a=1, label 1 rows mixed.
        let mut b = TableBuilder::new("toy", 2);
        b.feature(RawFeature::categorical("g", Some(vec!["f".into(), "m".into()])).protected());
        b.feature(RawFeature::continuous("v"));
        let rows = [("m", 1.0, 0), ("m", 2.0, 0), ("f", 3.0, 1), ("m", 4.0, 1)];
        for (g, v, y) in rows {
            b.push(vec![RawValue::cat(g), RawValue::Num(v)], y, Split::Train);
        }
        b.build().unwrap()
    }

    #[test]
    fn balanced_marginal_rate() {
        let ds = synthetic::balanced(40, 1);
        let rows: Vec<usize> = (0..ds.n_rows()).collect();
        let r = empirical_group_rates(&ds, &rows, &Conditioning::None).unwrap();
        assert_eq!(r.cells.len(), 1);
        assert_eq!(r.cells[0].p[0], 0.5);
    }

    #[test]
    fn empty_label_cell_is_an_error() {
        let ds = toy();
        let rows: Vec<usize> = (0..4).collect();
        let err = empirical_group_rates(&ds, &rows, &Conditioning::Label).unwrap_err();
        assert!(matches!(err, Error::DegenerateCell { group: 0, .. }), "{err}");
        let lenient = empirical_group_rates_lenient(&ds, &rows, &Conditioning::Label).unwrap();
        assert_eq!(lenient.cells.len(), 1);
        assert_eq!(lenient.dropped, vec!["y=0".to_string()]);
        assert_eq!(lenient.cells[0].p, [0.5, 0.5]);
    }

    #[test]
    fn intervention_sets_one_hot() {
        let ds = toy();
        for i in 0..ds.n_rows() {
            for v in 0..2 {
                let r = ds.intervene_protected(ds.row(i), v);
                assert_eq!(ds.decode_protected(&r), v);
                assert_eq!(ds.decode_category(ds.protected_group(), &r), Some(v as usize));
            }
        }
    }
}
