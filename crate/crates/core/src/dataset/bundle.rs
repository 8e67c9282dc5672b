//! Cached encoded dataset: `data.csv` plus a `schema.json` sidecar.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ColumnStats, Dataset, DatasetParts, FeatureGroup, FeatureSpec, Split};
use crate::error::{Error, Result};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;
const DATA_FILE: &str = "data.csv";
const SCHEMA_FILE: &str = "schema.json";

#[derive(Serialize, Deserialize)]
struct Schema {
    format_version: u32,
    name: String,
    n_classes: usize,
    label_names: Vec<String>,
    features: Vec<FeatureSpec>,
    groups: Vec<FeatureGroup>,
    columns: Vec<String>,
    standardization: Vec<ColumnStats>,
    rows: SplitCounts,
}

#[derive(Serialize, Deserialize)]
struct SplitCounts {
    train: usize,
    validation: usize,
    test: usize,
}

pub fn write_bundle(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let schema = Schema {
        format_version: BUNDLE_FORMAT_VERSION,
        name: ds.name.clone(),
        n_classes: ds.n_classes,
        label_names: ds.label_names.clone(),
        features: ds.features.clone(),
        groups: ds.groups.clone(),
        columns: ds.columns.clone(),
        standardization: ds.standardization.clone(),
        rows: SplitCounts {
            train: ds.rows(Split::Train).len(),
            validation: ds.rows(Split::Validation).len(),
            test: ds.rows(Split::Test).len(),
        },
    };
    let schema_path = dir.join(SCHEMA_FILE);
    fs::write(&schema_path, serde_json::to_string_pretty(&schema)? + "\n").map_err(|e| Error::io(&schema_path, e))?;

    let data_path = dir.join(DATA_FILE);
    let csv_err = |e: csv::Error| Error::io(&data_path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(&data_path).map_err(csv_err)?;
    let mut header: Vec<String> = ds.columns.clone();
    header.extend(["__y".into(), "__a".into(), "__split".into()]);
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..ds.n_rows() {
        let mut rec: Vec<String> = ds.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(ds.y[i].to_string());
        rec.push(ds.a[i].to_string());
        rec.push(ds.split[i].to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&data_path, e))?;
    Ok(())
}

pub fn read_bundle(dir: &Path) -> Result<Dataset> {
    let schema_path = dir.join(SCHEMA_FILE);
    let data_path = dir.join(DATA_FILE);
    for p in [&schema_path, &data_path] {
        if !p.exists() {
            return Err(Error::MissingFile(p.clone()));
        }
    }
    let text = fs::read_to_string(&schema_path).map_err(|e| Error::io(&schema_path, e))?;
    let schema: Schema = serde_json::from_str(&text)?;
    if schema.format_version != BUNDLE_FORMAT_VERSION {
        return Err(Error::InvalidConfig(format!(
            "unsupported bundle version {} (expected {BUNDLE_FORMAT_VERSION})",
            schema.format_version
        )));
    }

    let file = data_path.display().to_string();
    let width = schema.columns.len();
    let mut reader = csv::Reader::from_path(&data_path).map_err(|e| Error::parse(&file, 1, e.to_string()))?;
    let (mut x, mut y, mut a, mut split) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (k, rec) in reader.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| Error::parse(&file, row, e.to_string()))?;
        if rec.len() != width + 3 {
            return Err(Error::parse(&file, row, format!("expected {} fields, found {}", width + 3, rec.len())));
        }
        let bad = |what: &str| Error::parse(&file, row, format!("unparseable {what}"));
        for v in rec.iter().take(width) {
            x.push(v.parse::<f64>().map_err(|_| bad("feature value"))?);
        }
        y.push(rec[width].parse::<usize>().map_err(|_| bad("label"))?);
        a.push(rec[width + 1].parse::<u8>().map_err(|_| bad("protected attribute"))?);
        split.push(rec[width + 2].parse::<Split>().map_err(|_| bad("split tag"))?);
    }
    Dataset::from_parts(DatasetParts {
        name: schema.name,
        features: schema.features,
        groups: schema.groups,
        columns: schema.columns,
        x,
        y,
        a,
        split,
        standardization: schema.standardization,
        n_classes: schema.n_classes,
        label_names: schema.label_names,
    })
}
