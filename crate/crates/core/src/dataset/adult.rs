//! UCI Adult census income.

use std::path::Path;

use super::{assign_splits, Dataset, RawFeature, RawValue, Split, TableBuilder, DEFAULT_SPLIT_SEED};
use crate::error::{Error, Result};

const N_FIELDS: usize = 15;

// (column index in the raw file, name, continuous?)
const KEPT: [(usize, &str, bool); 12] = [
    (0, "age", true),
    (1, "workclass", false),
    (3, "education", false),
    (5, "marital-status", false),
    (6, "occupation", false),
    (7, "relationship", false),
    (8, "race", false),
    (9, "sex", false),
    (10, "capital-gain", true),
    (11, "capital-loss", true),
    (12, "hours-per-week", true),
    (13, "native-country", false),
];

#[derive(Clone, Copy, Debug)]
pub struct AdultOptions {
    pub seed: u64,
    /// Fraction of the cleaned training file moved to validation.
    pub validation_fraction: f64,
}

impl Default for AdultOptions {
    fn default() -> Self {
        AdultOptions {
            seed: DEFAULT_SPLIT_SEED,
            validation_fraction: 0.2,
        }
    }
}

struct Record {
    values: Vec<RawValue>,
    label: usize,
}

fn read_file(path: &Path) -> Result<Vec<Record>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file = path.display().to_string();
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let row = lineno + 1;
        let line = line.trim();
        // adult.test opens with a "|1x3 Cross validator" banner.
        if line.is_empty() || line.starts_with('|') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != N_FIELDS {
            return Err(Error::parse(&file, row, format!("expected {N_FIELDS} fields, found {}", fields.len())));
        }
        if fields.iter().any(|f| *f == "?" || f.is_empty()) {
            continue;
        }
        let label = match fields[14].trim_end_matches('.') {
            ">50K" => 1,
            "<=50K" => 0,
            other => return Err(Error::parse(&file, row, format!("unrecognised label `{other}`"))),
        };
        let mut values = Vec::with_capacity(KEPT.len());
        for &(idx, name, continuous) in &KEPT {
            let raw = fields[idx];
            values.push(if continuous {
                RawValue::Num(
                    raw.parse::<f64>()
                        .map_err(|_| Error::parse(&file, row, format!("`{name}` is not numeric: `{raw}`")))?,
                )
            } else if name == "native-country" && raw != "United-States" && raw != "Mexico" {
                RawValue::cat("other")
            } else {
                RawValue::cat(raw)
            });
        }
        out.push(Record { values, label });
    }
    Ok(out)
}

/// Loads `adult.data` / `adult.test`: drops `fnlwgt` and `education-num`,
/// drops rows with missing values, folds native countries other than the
/// United States and Mexico into "other", and moves a seeded 20% of the
/// training file into validation. `sex` is protected (Female = 0, Male = 1).
pub fn load_adult(train_path: &Path, test_path: &Path, opts: AdultOptions) -> Result<Dataset> {
    let train = read_file(train_path)?;
    let test = read_file(test_path)?;
    if train.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    if test.is_empty() {
        return Err(Error::EmptySplit("test".into()));
    }

    let mut b = TableBuilder::new("adult", 2);
    b.label_names(vec!["<=50K".into(), ">50K".into()]);
    for &(_, name, continuous) in &KEPT {
        let f = if continuous {
            RawFeature::continuous(name)
        } else if name == "sex" {
            RawFeature::categorical(name, Some(vec!["Female".into(), "Male".into()])).protected()
        } else {
            RawFeature::categorical(name, None)
        };
        b.feature(f);
    }

    let n_train = train.len();
    let mut splits = assign_splits(
        n_train,
        &[(Split::Validation, opts.validation_fraction), (Split::Train, 1.0 - opts.validation_fraction)],
        opts.seed,
    );
    splits.extend(std::iter::repeat(Split::Test).take(test.len()));
    for r in train.into_iter().chain(test) {
        b.push(r.values, r.label, Split::Train);
    }
    b.set_splits(splits);
    let ds = b.build()?;
    if ds.rows(Split::Validation).is_empty() {
        return Err(Error::EmptySplit("validation".into()));
    }
    Ok(ds)
}
