//! ProPublica COMPAS two-year recidivism.

use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::{assign_splits, Dataset, RawFeature, RawValue, Split, TableBuilder, DEFAULT_SPLIT_SEED};
use crate::error::{Error, Result};

const RACES: [&str; 2] = ["African-American", "Caucasian"];
const MAX_CHARGE_GAP_DAYS: f64 = 30.0;

/// How the jail-in / jail-out timestamps enter the feature set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JailEncoding {
    /// `c_jail_in` and `c_jail_out` as two continuous features (days since
    /// the Unix epoch). Ten features in total.
    #[default]
    Timestamps,
    /// A single `jail_duration` feature in days, clipped at zero.
    Duration,
}

#[derive(Clone, Copy, Debug)]
pub struct CompasOptions {
    pub seed: u64,
    pub jail: JailEncoding,
}

impl Default for CompasOptions {
    fn default() -> Self {
        CompasOptions {
            seed: DEFAULT_SPLIT_SEED,
            jail: JailEncoding::default(),
        }
    }
}

fn parse_time(s: &str) -> Option<f64> {
    let t = NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S").ok()?;
    Some(t.and_utc().timestamp() as f64 / 86_400.0)
}

/// Loads `compas-scores-two-years.csv`: keeps rows whose charge date is
/// within 30 days of arrest and whose race is African-American (a = 0) or
/// Caucasian (a = 1), drops rows missing a selected field, and splits
/// 60/20/20 with a seeded shuffle. Label is `two_year_recid`.
pub fn load_compas(path: &Path, opts: CompasOptions) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::parse(&file, 1, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(&file, 1, e.to_string()))?
        .clone();
    // The file repeats some headers (e.g. `priors_count`); the first wins.
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(&file, 1, format!("missing column `{name}`")))
    };
    let gap = col("days_b_screening_arrest")?;
    let race = col("race")?;
    let age = col("age")?;
    let sex = col("sex")?;
    let degree = col("c_charge_degree")?;
    let priors = col("priors_count")?;
    let jail_in = col("c_jail_in")?;
    let jail_out = col("c_jail_out")?;
    let juv_fel = col("juv_fel_count")?;
    let juv_misd = col("juv_misd_count")?;
    let juv_other = col("juv_other_count")?;
    let label = col("two_year_recid")?;

    let mut b = TableBuilder::new("compas", 2);
    b.label_names(vec!["no-recid".into(), "recid".into()]);
    b.feature(RawFeature::continuous("age"));
    b.feature(RawFeature::categorical("sex", None));
    b.feature(RawFeature::categorical("race", Some(RACES.iter().map(|s| s.to_string()).collect())).protected());
    b.feature(RawFeature::categorical("c_charge_degree", None));
    b.feature(RawFeature::continuous("priors_count"));
    match opts.jail {
        JailEncoding::Timestamps => {
            b.feature(RawFeature::continuous("c_jail_in"));
            b.feature(RawFeature::continuous("c_jail_out"));
        }
        JailEncoding::Duration => {
            b.feature(RawFeature::continuous("jail_duration"));
        }
    }
    b.feature(RawFeature::continuous("juv_fel_count"));
    b.feature(RawFeature::continuous("juv_misd_count"));
    b.feature(RawFeature::continuous("juv_other_count"));

    for (k, record) in reader.records().enumerate() {
        let row = k + 2;
        let record = record.map_err(|e| Error::parse(&file, row, e.to_string()))?;
        let get = |i: usize| record.get(i).map(str::trim).unwrap_or("");
        let num = |i: usize| -> Result<Option<f64>> {
            let s = get(i);
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>()
                .map(Some)
                .map_err(|_| Error::parse(&file, row, format!("`{}` is not numeric: `{s}`", &headers[i])))
        };

        match num(gap)? {
            Some(d) if d.abs() <= MAX_CHARGE_GAP_DAYS => {}
            _ => continue,
        }
        if !RACES.contains(&get(race)) {
            continue;
        }
        let (Some(age_v), Some(priors_v), Some(fel), Some(misd), Some(other), Some(y)) =
            (num(age)?, num(priors)?, num(juv_fel)?, num(juv_misd)?, num(juv_other)?, num(label)?)
        else {
            continue;
        };
        let (sex_v, degree_v) = (get(sex), get(degree));
        if sex_v.is_empty() || degree_v.is_empty() {
            continue;
        }
        let (Some(t_in), Some(t_out)) = (parse_time(get(jail_in)), parse_time(get(jail_out))) else {
            continue;
        };
        let y = match y as i64 {
            0 => 0,
            1 => 1,
            _ => return Err(Error::parse(&file, row, format!("label must be 0 or 1, got {y}"))),
        };

        let mut values = vec![
            RawValue::Num(age_v),
            RawValue::cat(sex_v),
            RawValue::cat(get(race)),
            RawValue::cat(degree_v),
            RawValue::Num(priors_v),
        ];
        match opts.jail {
            JailEncoding::Timestamps => {
                values.push(RawValue::Num(t_in));
                values.push(RawValue::Num(t_out));
            }
            JailEncoding::Duration => values.push(RawValue::Num((t_out - t_in).max(0.0))),
        }
        values.extend([RawValue::Num(fel), RawValue::Num(misd), RawValue::Num(other)]);
        b.push(values, y, Split::Train);
    }

    if b.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    b.set_splits(assign_splits(
        b.len(),
        &[(Split::Train, 0.6), (Split::Validation, 0.2), (Split::Test, 0.2)],
        opts.seed,
    ));
    let ds = b.build()?;
    for s in [Split::Validation, Split::Test] {
        if ds.rows(s).is_empty() {
            return Err(Error::EmptySplit(s.to_string()));
        }
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const HEADER: &str = "id,sex,age,race,juv_fel_count,juv_misd_count,juv_other_count,priors_count,days_b_screening_arrest,c_jail_in,c_jail_out,c_charge_degree,two_year_recid,priors_count";

    fn write(rows: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "{HEADER}").unwrap();
        for r in rows {
            writeln!(f, "{r}").unwrap();
        }
        f
    }

    fn row(id: usize, race: &str, gap: i64, sex: &str) -> String {
        format!(
            "{id},{sex},{},{race},{},{},{},{},{gap},2013-01-0{} 10:00:00,2013-01-0{} 12:00:00,{},{},99",
            20 + id,
            id % 3,
            id % 2,
            id % 5,
            id % 4,
            1 + id % 3,
            4 + id % 4,
            if id % 2 == 0 { "F" } else { "M" },
            id % 2
        )
    }

    #[test]
    fn charge_gap_and_race_filters() {
        let mut rows: Vec<String> = (0..20)
            .map(|i| row(i, if i % 2 == 0 { "African-American" } else { "Caucasian" }, (i as i64 % 5) - 2, if i % 3 == 0 { "Female" } else { "Male" }))
            .collect();
        rows.push(row(20, "Caucasian", 45, "Male"));
        rows.push(row(21, "Hispanic", 0, "Male"));
        rows.push(row(22, "Caucasian", -31, "Male"));
        let f = write(&rows);
        let ds = load_compas(f.path(), CompasOptions::default()).unwrap();
        assert_eq!(ds.n_rows(), 20);
        assert_eq!(ds.n_players(), 10);
        // first priors_count column wins over the trailing duplicate
        let priors = ds.group_index("priors_count").unwrap();
        let col = ds.groups()[priors].column_indices[0];
        assert!(ds.row(0)[col].abs() < 10.0);

        let dur = load_compas(f.path(), CompasOptions { jail: JailEncoding::Duration, ..Default::default() }).unwrap();
        assert_eq!(dur.n_players(), 9);
    }

    #[test]
    fn bad_number_reports_row() {
        let mut rows: Vec<String> = (0..6).map(|i| row(i, "Caucasian", 0, "Male")).collect();
        rows[3] = rows[3].replacen(",Caucasian,", ",Caucasian,zero", 1);
        let f = write(&rows);
        match load_compas(f.path(), CompasOptions::default()) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
