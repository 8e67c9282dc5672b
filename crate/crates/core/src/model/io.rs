//! Versioned JSON model files. Wrapper models store a path to their frozen
//! base (relative to their own file) together with the base file's SHA-256,
//! so a swapped base is detected at load time.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{FeedForward, InputMode, LinearStage, Mlp, PerturbedModel, Predictor};
use crate::error::{Error, Result};
use crate::hex;
use crate::interventions::{FeldmanRepair, GroupRule, HardtRule};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub enum Model {
    FeedForward(FeedForward),
    Perturbed(PerturbedModel),
    Feldman(FeldmanRepair),
    Hardt(HardtRule),
}

impl Model {
    fn inner(&self) -> &dyn Predictor {
        match self {
            Model::FeedForward(m) => m,
            Model::Perturbed(m) => m,
            Model::Feldman(m) => m,
            Model::Hardt(m) => m,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Model::FeedForward(_) => "feedforward",
            Model::Perturbed(_) => "perturbed",
            Model::Feldman(_) => "feldman",
            Model::Hardt(_) => "hardt",
        }
    }

    fn base_ref(&self) -> Option<&Option<String>> {
        match self {
            Model::FeedForward(_) => None,
            Model::Perturbed(m) => Some(&m.base_ref),
            Model::Feldman(m) => Some(&m.base_ref),
            Model::Hardt(m) => Some(&m.base_ref),
        }
    }

    /// Sets the base reference of a wrapper model; no-op for plain networks.
    pub fn set_base_ref(&mut self, path: impl Into<String>) {
        let path = Some(path.into());
        match self {
            Model::FeedForward(_) => {}
            Model::Perturbed(m) => m.base_ref = path,
            Model::Feldman(m) => m.base_ref = path,
            Model::Hardt(m) => m.base_ref = path,
        }
    }
}

impl Predictor for Model {
    fn n_classes(&self) -> usize {
        self.inner().n_classes()
    }
    fn input_width(&self) -> usize {
        self.inner().input_width()
    }
    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        self.inner().predict_into(x, out)
    }
    fn name(&self) -> String {
        self.inner().name()
    }
    fn trainable(&self) -> bool {
        self.inner().trainable()
    }
    fn is_randomized(&self) -> bool {
        self.inner().is_randomized()
    }
    fn linear_stage(&self) -> Option<LinearStage<'_>> {
        self.inner().linear_stage()
    }
    fn predict_from_stage(&self, stage: &[f64], out: &mut [f64]) {
        self.inner().predict_from_stage(stage, out)
    }
    fn stage_rows(&self) -> Option<usize> {
        self.inner().stage_rows()
    }
}

#[derive(Serialize, Deserialize)]
struct BaseRef {
    path: String,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Stored {
    FeedForward(FeedForward),
    Perturbed {
        name: String,
        base: BaseRef,
        aux: Mlp,
        input_mode: InputMode,
        feature_columns: Vec<usize>,
        protected_columns: [usize; 2],
    },
    Feldman {
        base: BaseRef,
        lambda: f64,
        protected_columns: [usize; 2],
        group_scores: [Vec<f64>; 2],
        pooled: Vec<f64>,
    },
    Hardt {
        base: BaseRef,
        protected_columns: [usize; 2],
        groups: [GroupRule; 2],
        operating_point: (f64, f64),
    },
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    model: Stored,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn dir_of(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Writes `model` as JSON. Wrapper models must carry a base reference that
/// resolves to an existing file next to `path`.
pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let base = match model.base_ref() {
        None => None,
        Some(None) => {
            return Err(Error::InvalidConfig(format!(
                "{} model has no base file reference",
                model.kind()
            )))
        }
        Some(Some(r)) => {
            let resolved = dir_of(path).join(r);
            if !resolved.exists() {
                return Err(Error::MissingFile(resolved));
            }
            Some(BaseRef {
                path: r.clone(),
                sha256: sha256_file(&resolved)?,
            })
        }
    };
    let stored = match (model, base) {
        (Model::FeedForward(m), _) => Stored::FeedForward(m.clone()),
        (Model::Perturbed(m), Some(base)) => Stored::Perturbed {
            name: m.name.clone(),
            base,
            aux: m.aux.clone(),
            input_mode: m.input_mode,
            feature_columns: m.feature_columns.clone(),
            protected_columns: m.protected_columns,
        },
        (Model::Feldman(m), Some(base)) => Stored::Feldman {
            base,
            lambda: m.lambda,
            protected_columns: m.protected_columns,
            group_scores: m.group_scores.clone(),
            pooled: m.pooled.clone(),
        },
        (Model::Hardt(m), Some(base)) => Stored::Hardt {
            base,
            protected_columns: m.protected_columns,
            groups: m.groups.clone(),
            operating_point: m.operating_point,
        },
        _ => unreachable!("wrapper models resolved a base above"),
    };
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        model: stored,
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    crate::write_atomic(path, text.as_bytes())
}

fn load_base(model_path: &Path, base: &BaseRef) -> Result<Arc<dyn Predictor>> {
    let resolved = dir_of(model_path).join(&base.path);
    if !resolved.exists() {
        return Err(Error::MissingFile(resolved));
    }
    let digest = sha256_file(&resolved)?;
    if digest != base.sha256 {
        return Err(Error::InvalidConfig(format!(
            "base model {} changed since {} was written",
            resolved.display(),
            model_path.display()
        )));
    }
    Ok(Arc::new(load_model(&resolved)?))
}

pub fn load_model(path: &Path) -> Result<Model> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile = serde_json::from_str(&text)?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::InvalidConfig(format!(
            "{}: unsupported model format version {}",
            path.display(),
            file.format_version
        )));
    }
    Ok(match file.model {
        Stored::FeedForward(m) => Model::FeedForward(m),
        Stored::Perturbed {
            name,
            base,
            aux,
            input_mode,
            feature_columns,
            protected_columns,
        } => Model::Perturbed(PerturbedModel {
            name,
            base: load_base(path, &base)?,
            base_ref: Some(base.path),
            aux,
            input_mode,
            feature_columns,
            protected_columns,
        }),
        Stored::Feldman {
            base,
            lambda,
            protected_columns,
            group_scores,
            pooled,
        } => Model::Feldman(FeldmanRepair {
            base: load_base(path, &base)?,
            base_ref: Some(base.path),
            lambda,
            protected_columns,
            group_scores,
            pooled,
        }),
        Stored::Hardt {
            base,
            protected_columns,
            groups,
            operating_point,
        } => Model::Hardt(HardtRule {
            base: load_base(path, &base)?,
            base_ref: Some(base.path),
            protected_columns,
            groups,
            operating_point,
        }),
    })
}
