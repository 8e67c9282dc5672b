use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ColumnStats, Dataset, DatasetParts, FeatureGroup, FeatureKind, FeatureSpec, Split};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum RawValue {
    Cat(String),
    Num(f64),
}

impl RawValue {
    pub fn cat(s: impl Into<String>) -> Self {
        RawValue::Cat(s.into())
    }
}

/// Declaration of one raw input feature.
#[derive(Clone, Debug)]
pub struct RawFeature {
    pub name: String,
    pub kind: FeatureKind,
    /// Fixed category order; inferred (sorted) when `None`.
    pub categories: Option<Vec<String>>,
    pub is_protected: bool,
}

impl RawFeature {
    pub fn categorical(name: impl Into<String>, categories: Option<Vec<String>>) -> Self {
        RawFeature {
            name: name.into(),
            kind: FeatureKind::Categorical,
            categories,
            is_protected: false,
        }
    }

    pub fn continuous(name: impl Into<String>) -> Self {
        RawFeature {
            name: name.into(),
            kind: FeatureKind::Continuous,
            categories: None,
            is_protected: false,
        }
    }

    pub fn protected(mut self) -> Self {
        self.is_protected = true;
        self
    }
}

/// One-hot encodes categoricals and standardizes continuous columns with
/// training-split statistics. This is also the entry point for user-defined
/// (e.g. synthetic) tables.
#[derive(Clone, Debug)]
pub struct TableBuilder {
    name: String,
    n_classes: usize,
    label_names: Vec<String>,
    features: Vec<RawFeature>,
    rows: Vec<Vec<RawValue>>,
    labels: Vec<usize>,
    split: Vec<Split>,
}

impl TableBuilder {
    pub fn new(name: impl Into<String>, n_classes: usize) -> Self {
        TableBuilder {
            name: name.into(),
            n_classes,
            label_names: (0..n_classes).map(|c| c.to_string()).collect(),
            features: Vec::new(),
            rows: Vec::new(),
            labels: Vec::new(),
            split: Vec::new(),
        }
    }

    pub fn label_names(&mut self, names: Vec<String>) -> &mut Self {
        self.label_names = names;
        self
    }

    pub fn feature(&mut self, f: RawFeature) -> &mut Self {
        self.features.push(f);
        self
    }

    pub fn push(&mut self, values: Vec<RawValue>, label: usize, split: Split) {
        self.rows.push(values);
        self.labels.push(label);
        self.split.push(split);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn set_splits(&mut self, split: Vec<Split>) {
        self.split = split;
    }

    pub fn build(self) -> Result<Dataset> {
        let n = self.rows.len();
        if !self.split.contains(&Split::Train) {
            return Err(Error::EmptySplit(Split::Train.to_string()));
        }
        if self.features.iter().filter(|f| f.is_protected).count() != 1 {
            return Err(Error::InvalidConfig("exactly one feature must be protected".into()));
        }

        let mut specs = Vec::with_capacity(self.features.len());
        for (j, f) in self.features.iter().enumerate() {
            let categories = match f.kind {
                FeatureKind::Continuous => Vec::new(),
                FeatureKind::Categorical => match &f.categories {
                    Some(c) => c.clone(),
                    None => {
                        let set: BTreeSet<&str> = self
                            .rows
                            .iter()
                            .filter_map(|r| match &r[j] {
                                RawValue::Cat(s) => Some(s.as_str()),
                                RawValue::Num(_) => None,
                            })
                            .collect();
                        set.into_iter().map(str::to_string).collect()
                    }
                },
            };
            if f.kind == FeatureKind::Categorical && categories.len() < 2 {
                return Err(Error::Degenerate(format!(
                    "categorical feature `{}` has fewer than two categories",
                    f.name
                )));
            }
            specs.push(FeatureSpec {
                name: f.name.clone(),
                kind: f.kind,
                categories,
                is_protected: f.is_protected,
            });
        }

        let mut columns = Vec::new();
        let mut groups = Vec::new();
        for spec in &specs {
            let start = columns.len();
            match spec.kind {
                FeatureKind::Continuous => columns.push(spec.name.clone()),
                FeatureKind::Categorical => {
                    columns.extend(spec.categories.iter().map(|c| format!("{}={c}", spec.name)))
                }
            }
            groups.push(FeatureGroup {
                player_name: spec.name.clone(),
                column_indices: (start..columns.len()).collect(),
            });
        }
        let width = columns.len();

        let mut x = vec![0.0; n * width];
        let mut a = vec![0u8; n];
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != specs.len() {
                return Err(Error::DimensionMismatch {
                    expected: specs.len(),
                    got: row.len(),
                });
            }
            for (j, (spec, value)) in specs.iter().zip(row).enumerate() {
                let cols = &groups[j].column_indices;
                match (spec.kind, value) {
                    (FeatureKind::Continuous, RawValue::Num(v)) => x[i * width + cols[0]] = *v,
                    (FeatureKind::Categorical, RawValue::Cat(s)) => {
                        let k = spec.categories.iter().position(|c| c == s).ok_or_else(|| {
                            Error::parse(&self.name, i + 1, format!("unknown category `{s}` for `{}`", spec.name))
                        })?;
                        x[i * width + cols[k]] = 1.0;
                        if spec.is_protected {
                            if k > 1 {
                                return Err(Error::InvalidConfig(format!(
                                    "protected feature `{}` must be binary",
                                    spec.name
                                )));
                            }
                            a[i] = k as u8;
                        }
                    }
                    _ => {
                        return Err(Error::parse(
                            &self.name,
                            i + 1,
                            format!("value kind mismatch for `{}`", spec.name),
                        ))
                    }
                }
            }
        }

        let train: Vec<usize> = (0..n).filter(|&i| self.split[i] == Split::Train).collect();
        let mut standardization = Vec::new();
        for (spec, group) in specs.iter().zip(&groups) {
            if spec.kind != FeatureKind::Continuous {
                continue;
            }
            let c = group.column_indices[0];
            let m = train.len() as f64;
            let mean = train.iter().map(|&i| x[i * width + c]).sum::<f64>() / m;
            let var = train.iter().map(|&i| (x[i * width + c] - mean).powi(2)).sum::<f64>() / m;
            let std = var.sqrt();
            if std == 0.0 || !std.is_finite() {
                return Err(Error::Degenerate(format!(
                    "continuous feature `{}` is constant on the training split",
                    spec.name
                )));
            }
            for i in 0..n {
                let v = &mut x[i * width + c];
                *v = (*v - mean) / std;
            }
            standardization.push(ColumnStats { column: c, mean, std });
        }

        Dataset::from_parts(DatasetParts {
            name: self.name,
            features: specs,
            groups,
            columns,
            x,
            y: self.labels,
            a,
            split: self.split,
            standardization,
            n_classes: self.n_classes,
            label_names: self.label_names,
        })
    }
}

/// Seeded shuffle of `0..n` into splits. Sizes are rounded fractions in the
/// order given; the last split receives the remainder.
pub fn assign_splits(n: usize, fractions: &[(Split, f64)], seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![fractions.last().map_or(Split::Train, |f| f.0); n];
    let mut cursor = 0;
    for &(split, frac) in &fractions[..fractions.len().saturating_sub(1)] {
        let take = ((n as f64) * frac).round() as usize;
        for &i in &order[cursor..(cursor + take).min(n)] {
            out[i] = split;
        }
        cursor += take;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_follow_rounding() {
        let s = assign_splits(5278, &[(Split::Train, 0.6), (Split::Validation, 0.2), (Split::Test, 0.2)], 3);
        let count = |t| s.iter().filter(|&&x| x == t).count();
        assert_eq!(count(Split::Train), 3167);
        assert_eq!(count(Split::Validation), 1056);
        assert_eq!(count(Split::Test), 1055);
    }

    #[test]
    fn standardization_uses_training_rows_only() {
        let mut b = TableBuilder::new("t", 2);
        b.feature(RawFeature::categorical("p", None).protected());
        b.feature(RawFeature::continuous("v"));
        let vals = [(1.0, Split::Train), (3.0, Split::Train), (100.0, Split::Test)];
        for (k, (v, s)) in vals.into_iter().enumerate() {
            b.push(vec![RawValue::cat(if k % 2 == 0 { "a" } else { "b" }), RawValue::Num(v)], 0, s);
        }
        let ds = b.build().unwrap();
        let st = ds.standardization()[0];
        assert_eq!((st.mean, st.std), (2.0, 1.0));
        assert_eq!(ds.row(2)[st.column], 98.0);
    }

    #[test]
    fn single_category_is_rejected() {
        let mut b = TableBuilder::new("t", 2);
        b.feature(RawFeature::categorical("p", None).protected());
        b.push(vec![RawValue::cat("a")], 0, Split::Train);
        assert!(matches!(b.build(), Err(Error::Degenerate(_))));
    }
}
