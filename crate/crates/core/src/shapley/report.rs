use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EstimatorMode, ValueKind};
use crate::dataset::Split;
use crate::metrics::MetricName;
use crate::{write_atomic, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorMeta {
    pub mode: EstimatorMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutations: Option<usize>,
    /// Each sampled ordering was also evaluated reversed.
    pub antithetic: bool,
    pub background: usize,
    pub seed: u64,
}

/// Global attributions of one explained quantity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapleyReport {
    pub kind: ValueKind,
    pub aggregation: String,
    /// Conditioning cell for eo and cdp.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_class: Option<usize>,
    pub model: String,
    pub players: Vec<String>,
    pub phi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se: Option<Vec<f64>>,
    /// Expected accuracy of a model that ignores every feature; zero for
    /// fairness kinds.
    pub offset: f64,
    pub total: f64,
    pub metric: MetricName,
    /// Independently computed metric on the aggregated rows: the expected
    /// accuracy, or the signed difference (per cell for eo and cdp).
    pub metric_value: f64,
    pub empty_value: f64,
    pub full_value: f64,
    pub estimator: EstimatorMeta,
    pub split: Split,
    pub n_rows: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped_cells: Vec<String>,
}

impl ShapleyReport {
    /// `offset + total - metric_value`; zero up to rounding in exact mode.
    pub fn sum_rule_gap(&self) -> f64 {
        self.offset + self.total - self.metric_value
    }

    pub fn phi_of(&self, player: &str) -> Option<f64> {
        self.players.iter().position(|p| p == player).map(|i| self.phi[i])
    }

    /// Player indices by descending `|phi|`, ties broken by position.
    pub fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.phi.len()).collect();
        idx.sort_by(|&a, &b| self.phi[b].abs().total_cmp(&self.phi[a].abs()).then(a.cmp(&b)));
        idx
    }

    /// Structural invariants that hold for any stored report.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("report ({}): {m}", self.kind)));
        if self.players.len() != self.phi.len() {
            return bad(format!("{} players but {} attributions", self.players.len(), self.phi.len()));
        }
        if let Some(se) = &self.se {
            if se.len() != self.phi.len() {
                return bad("standard errors do not match attributions".into());
            }
        }
        let sum: f64 = self.phi.iter().sum();
        if sum != self.total {
            return bad(format!("total {} differs from the sum of attributions {sum}", self.total));
        }
        if self.kind.is_fairness() && self.offset != 0.0 {
            return bad(format!("fairness report with non-zero offset {}", self.offset));
        }
        if let Some(v) = self.phi.iter().chain([&self.offset, &self.metric_value]).find(|v| !v.is_finite()) {
            return bad(format!("non-finite value {v}"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    /// One line per player followed by offset, total and metric lines.
    pub fn to_csv(&self) -> String {
        let cell = self.cell.as_deref().unwrap_or("");
        let mut out = String::from("kind,cell,player,phi,se\n");
        for (i, (p, v)) in self.players.iter().zip(&self.phi).enumerate() {
            let se = self.se.as_ref().map(|s| s[i].to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{v},{se}\n", self.kind, csv_field(cell), csv_field(p)));
        }
        for (name, v) in [("(offset)", self.offset), ("(total)", self.total), ("(metric)", self.metric_value)] {
            out.push_str(&format!("{},{},{name},{v},\n", self.kind, csv_field(cell)));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
