//! Flat key-value experiment configuration (TOML) with `FAIRSHAP_*`
//! environment overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{load_adult, load_compas, synthetic, AdultOptions, CompasOptions, Dataset, JailEncoding, Split, DEFAULT_SPLIT_SEED};
use crate::interventions::{Architecture, CheckpointPolicy, TrainConfig};
use crate::model::loss::Notion;
use crate::model::InputMode;
use crate::shapley::{CoalitionEstimatorConfig, EstimatorMode, ExplainSpec, ValueKind, DEFAULT_EXACT_CAP};
use crate::{Error, Result};

pub const ENV_PREFIX: &str = "FAIRSHAP_";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DatasetChoice {
    #[default]
    Adult,
    Compas,
    /// The five-feature seeded generator used by fixtures.
    Synthetic,
}

impl DatasetChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetChoice::Adult => "adult",
            DatasetChoice::Compas => "compas",
            DatasetChoice::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for DatasetChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Baseline,
    AdvFresh,
    AdvPerturbed,
    Suppress,
    Feldman,
    Hardt,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::AdvFresh => "adv-fresh",
            Method::AdvPerturbed => "adv-perturbed",
            Method::Suppress => "suppress",
            Method::Feldman => "feldman",
            Method::Hardt => "hardt",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetChoice,
    /// Directory holding the raw dataset files.
    pub data_dir: PathBuf,
    pub split_seed: u64,
    pub synthetic_rows: usize,
    pub compas_jail: JailEncoding,

    pub hidden: Vec<usize>,
    pub exclude_protected: bool,

    pub method: Method,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adversary_lr: f64,
    pub adversary_hidden: Vec<usize>,
    pub notion: Notion,
    pub lambda: f64,
    pub adversary_steps: usize,
    pub projection: bool,
    pub seed: u64,
    pub eval_every: usize,
    pub checkpoint: CheckpointPolicy,
    /// Hidden widths of the perturbation network.
    pub aux_hidden: Vec<usize>,
    pub aux_score: bool,
    pub aux_features: bool,
    pub aux_protected: bool,
    pub alpha: f64,
    pub suppress_batches: usize,
    pub repair: f64,

    pub explain: Vec<ValueKind>,
    pub estimator: EstimatorMode,
    pub permutations: usize,
    /// Background rows drawn from the training split.
    pub background: SampleSize,
    /// Aggregation rows drawn from the explained split.
    pub rows: SampleSize,
    pub explain_seed: u64,
    pub explain_split: Split,
    pub target_class: usize,
    pub resolving: Vec<String>,
    pub exact_cap: usize,

    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        ExperimentConfig {
            dataset: DatasetChoice::Adult,
            data_dir: PathBuf::from("data"),
            split_seed: DEFAULT_SPLIT_SEED,
            synthetic_rows: 2000,
            compas_jail: JailEncoding::default(),
            hidden: vec![50],
            exclude_protected: false,
            method: Method::Baseline,
            iterations: t.iterations,
            batch_size: t.batch_size,
            lr: t.lr,
            adversary_lr: t.adversary_lr,
            adversary_hidden: t.adversary_hidden,
            notion: t.notion,
            lambda: t.lambda,
            adversary_steps: t.adversary_steps,
            projection: t.projection,
            seed: t.seed,
            eval_every: t.eval_every,
            checkpoint: t.checkpoint,
            aux_hidden: vec![50],
            aux_score: true,
            aux_features: true,
            aux_protected: true,
            alpha: 3.0,
            suppress_batches: 200,
            repair: 1.0,
            explain: vec![ValueKind::Accuracy, ValueKind::Dp],
            estimator: EstimatorMode::Exact,
            permutations: crate::shapley::DEFAULT_PERMUTATIONS,
            background: SampleSize::Count(100),
            rows: SampleSize::Count(300),
            explain_seed: 0,
            explain_split: Split::Test,
            target_class: 1,
            resolving: Vec::new(),
            exact_cap: DEFAULT_EXACT_CAP,
            out: PathBuf::from("runs/default"),
        }
    }
}

/// A row count, or every available row (`"all"`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleSize {
    All,
    Count(usize),
}

impl SampleSize {
    pub fn count(self) -> Option<usize> {
        match self {
            SampleSize::All => None,
            SampleSize::Count(n) => Some(n),
        }
    }
}

impl std::str::FromStr for SampleSize {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "all" {
            return Ok(SampleSize::All);
        }
        s.parse()
            .map(SampleSize::Count)
            .map_err(|_| format!("expected a row count or `all`, got `{s}`"))
    }
}

impl Serialize for SampleSize {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SampleSize::All => s.serialize_str("all"),
            SampleSize::Count(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for SampleSize {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(usize),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(n) => Ok(SampleSize::Count(n)),
            Raw::Word(w) if w == "all" => Ok(SampleSize::All),
            Raw::Word(w) => Err(serde::de::Error::custom(format!("expected a row count or \"all\", got `{w}`"))),
        }
    }
}

/// Parses an override value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        Self::from_toml_with_env(s, std::iter::empty())
    }

    /// Parses `s` and applies `(NAME, value)` overrides whose names carry the
    /// `FAIRSHAP_` prefix, e.g. `FAIRSHAP_LAMBDA=0.5` or `FAIRSHAP_HIDDEN=[32]`.
    pub fn from_toml_with_env(s: &str, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(s).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for (name, raw) in env {
            if let Some(key) = name.strip_prefix(ENV_PREFIX) {
                table.insert(key.to_ascii_lowercase(), parse_value(&raw));
            }
        }
        let cfg: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or starts from defaults) and applies the process
    /// environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) => {
                if !p.exists() {
                    return Err(Error::MissingFile(p.to_path_buf()));
                }
                std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?
            }
            None => String::new(),
        };
        Self::from_toml_with_env(&text, std::env::vars())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> Result<String> {
        Ok(crate::hex(&Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.estimator_config().validate()?;
        if self.hidden.iter().chain(&self.aux_hidden).any(|&h| h == 0) {
            return Err(Error::InvalidConfig("hidden widths must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.repair) {
            return Err(Error::InvalidConfig(format!("repair degree {} outside [0, 1]", self.repair)));
        }
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(Error::InvalidConfig(format!("alpha {} must be finite and non-negative", self.alpha)));
        }
        if self.method == Method::Suppress && self.suppress_batches == 0 {
            return Err(Error::InvalidConfig("suppression needs at least one batch".into()));
        }
        if self.explain.contains(&ValueKind::Cdp) && self.resolving.is_empty() {
            return Err(Error::InvalidConfig("cdp explanations need `resolving`".into()));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            batch_size: self.batch_size,
            lr: self.lr,
            adversary_lr: self.adversary_lr,
            adversary_hidden: self.adversary_hidden.clone(),
            notion: self.notion,
            lambda: self.lambda,
            adversary_steps: self.adversary_steps,
            projection: self.projection,
            seed: self.seed,
            eval_every: self.eval_every,
            checkpoint: self.checkpoint,
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            hidden: self.hidden.clone(),
            exclude_protected: self.exclude_protected,
        }
    }

    pub fn input_mode(&self) -> InputMode {
        InputMode {
            score: self.aux_score,
            features: self.aux_features,
            protected: self.aux_protected,
        }
    }

    pub fn estimator_config(&self) -> CoalitionEstimatorConfig {
        CoalitionEstimatorConfig {
            mode: self.estimator,
            permutations: self.permutations,
            background: self.background.count(),
            rows: self.rows.count(),
            seed: self.explain_seed,
            exact_cap: self.exact_cap,
        }
    }

    pub fn explain_spec(&self, kind: ValueKind) -> ExplainSpec {
        ExplainSpec {
            kind,
            target_class: self.target_class,
            resolving: if kind == ValueKind::Cdp { self.resolving.clone() } else { Vec::new() },
        }
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match self.dataset {
            DatasetChoice::Adult => load_adult(
                &self.data_dir.join("adult.data"),
                &self.data_dir.join("adult.test"),
                AdultOptions {
                    seed: self.split_seed,
                    ..AdultOptions::default()
                },
            ),
            DatasetChoice::Compas => load_compas(
                &self.data_dir.join("compas-scores-two-years.csv"),
                CompasOptions {
                    seed: self.split_seed,
                    jail: self.compas_jail,
                },
            ),
            DatasetChoice::Synthetic => Ok(synthetic::biased(self.synthetic_rows, self.split_seed)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn round_trip_is_lossless() {
        let mut cfg = ExperimentConfig {
            method: Method::AdvPerturbed,
            lambda: 0.37,
            background: SampleSize::All,
            explain: vec![ValueKind::Eo, ValueKind::Cdp],
            resolving: vec!["region".into()],
            ..ExperimentConfig::default()
        };
        cfg.lr = 0.1 + 0.2;
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    }

    #[test]
    fn environment_overrides_file_values() {
        let env = [
            ("FAIRSHAP_LAMBDA".to_string(), "2.5".to_string()),
            ("FAIRSHAP_HIDDEN".to_string(), "[32, 8]".to_string()),
            ("FAIRSHAP_METHOD".to_string(), "hardt".to_string()),
            ("FAIRSHAP_BACKGROUND".to_string(), "all".to_string()),
            ("OTHER".to_string(), "ignored".to_string()),
        ];
        let cfg = ExperimentConfig::from_toml_with_env("lambda = 1.0\ndataset = \"compas\"\n", env).unwrap();
        assert_eq!(cfg.lambda, 2.5);
        assert_eq!(cfg.hidden, vec![32, 8]);
        assert_eq!(cfg.method, Method::Hardt);
        assert_eq!(cfg.background, SampleSize::All);
        assert_eq!(cfg.dataset, DatasetChoice::Compas);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(ExperimentConfig::from_toml("lamda = 1.0").is_err());
        assert!(ExperimentConfig::from_toml("lambda = -1.0").is_err());
        assert!(ExperimentConfig::from_toml("repair = 2.0").is_err());
        assert!(ExperimentConfig::from_toml("explain = [\"cdp\"]").is_err());
    }
}
