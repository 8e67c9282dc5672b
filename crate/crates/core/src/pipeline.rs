//! End-to-end runs: data, training, evaluation and explanation stages that
//! write a self-describing artifact directory with a manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method};
use crate::dataset::{Dataset, Split};
use crate::interventions::{feldman_postprocess, hardt_postprocess, suppression_retrain, train_adversarial, train_baseline, Target, TrainLog};
use crate::metrics::{self, MetricResult};
use crate::model::{load_model, save_model, sha256_file, Difference, FeedForward, Model, Predictor};
use crate::plot::{render_waterfall, WaterfallOptions};
use crate::shapley::{global_shapley, ShapleyReport};
use crate::{write_atomic, Error, Result};

pub const MANIFEST: &str = "manifest.json";
/// Largest `|offset + total - metric|` `verify` accepts for a stored report.
pub const SUM_RULE_TOLERANCE: f64 = 1e-9;

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    Ok((serde_json::to_string_pretty(v)? + "\n").into_bytes())
}

/// Test-split metrics of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model: String,
    pub accuracy: MetricResult,
    pub dp: MetricResult,
    pub eo: MetricResult,
}

pub fn evaluate(name: &str, p: &dyn Predictor, ds: &Dataset, split: Split) -> Result<ModelMetrics> {
    Ok(ModelMetrics {
        model: name.to_string(),
        accuracy: metrics::expected_accuracy(p, ds, split)?,
        dp: metrics::dp_difference(p, ds, split)?,
        eo: metrics::eo_difference(p, ds, split)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub rows: BTreeMap<String, usize>,
    pub columns: usize,
    pub players: Vec<String>,
}

impl DatasetSummary {
    pub fn of(ds: &Dataset) -> Self {
        DatasetSummary {
            name: ds.name().to_string(),
            rows: [Split::Train, Split::Validation, Split::Test]
                .into_iter()
                .map(|s| (s.to_string(), ds.rows(s).len()))
                .collect(),
            columns: ds.n_cols(),
            players: ds.groups().iter().map(|g| g.player_name.clone()).collect(),
        }
    }
}

/// Models produced by the training stage, in explanation order.
pub struct Trained {
    pub baseline: Arc<FeedForward>,
    pub method: Option<(Method, Model, TrainLog)>,
    pub baseline_log: TrainLog,
}

impl Trained {
    /// `(name, predictor)` pairs to evaluate and explain. A perturbation
    /// method adds the perturbation itself, corrected minus base.
    pub fn predictors(&self) -> Vec<(String, Box<dyn Predictor + '_>)> {
        let mut out: Vec<(String, Box<dyn Predictor + '_>)> = vec![("baseline".into(), Box::new(self.baseline.as_ref()))];
        if let Some((m, model, _)) = &self.method {
            out.push((m.to_string(), Box::new(model)));
            if *m == Method::AdvPerturbed {
                out.push((
                    "perturbation".into(),
                    Box::new(Difference {
                        lhs: model,
                        rhs: self.baseline.as_ref(),
                    }),
                ));
            }
        }
        out
    }
}

/// Trains the baseline and, unless the method is the baseline itself, the
/// configured intervention on top of it.
pub fn train(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Trained> {
    train_with(cfg, ds, None)
}

/// Like [`train`], but an existing baseline network (e.g. loaded from an
/// earlier run) replaces the baseline training stage.
pub fn train_with(cfg: &ExperimentConfig, ds: &Dataset, baseline: Option<FeedForward>) -> Result<Trained> {
    let tc = cfg.train_config();
    let (baseline, baseline_log) = match baseline {
        Some(b) => {
            if b.input_width() != ds.n_cols() {
                return Err(Error::DimensionMismatch {
                    expected: ds.n_cols(),
                    got: b.input_width(),
                }
                .in_stage("train-baseline"));
            }
            (b, TrainLog::default())
        }
        None => stage("train-baseline", train_baseline(ds, &cfg.architecture(), &tc))?,
    };
    let baseline = Arc::new(baseline);
    let base_dyn: Arc<dyn Predictor> = baseline.clone();
    let name = format!("train-{}", cfg.method);
    let method = match cfg.method {
        Method::Baseline => None,
        Method::AdvFresh => {
            let (m, log) = stage(&name, train_adversarial(ds, &Target::Fresh(cfg.architecture()), &tc))?;
            Some((cfg.method, m.into_model(), log))
        }
        Method::AdvPerturbed => {
            let target = Target::Perturbation {
                base: base_dyn,
                hidden: cfg.aux_hidden.clone(),
                input_mode: cfg.input_mode(),
            };
            let (m, log) = stage(&name, train_adversarial(ds, &target, &tc))?;
            Some((cfg.method, m.into_model(), log))
        }
        Method::Suppress => {
            let (m, log) = stage(&name, suppression_retrain(&baseline, ds, cfg.alpha, cfg.suppress_batches, &tc))?;
            Some((cfg.method, Model::FeedForward(m), log))
        }
        Method::Feldman => {
            let m = stage(&name, feldman_postprocess(base_dyn, ds, cfg.repair))?;
            Some((cfg.method, Model::Feldman(m), TrainLog::default()))
        }
        Method::Hardt => {
            let m = stage(&name, hardt_postprocess(base_dyn, ds))?;
            Some((cfg.method, Model::Hardt(m), TrainLog::default()))
        }
    };
    Ok(Trained {
        baseline,
        method,
        baseline_log,
    })
}

/// Writes `models/` and `logs/` for a training result under `dir`.
pub fn save_trained(t: &Trained, dir: &Path) -> Result<()> {
    let models = dir.join("models");
    save_model(&Model::FeedForward(t.baseline.as_ref().clone()), &models.join("baseline.json"))?;
    write_atomic(&dir.join("logs/baseline.json"), &to_json(&t.baseline_log)?)?;
    if let Some((m, model, log)) = &t.method {
        let mut model = model.clone();
        model.set_base_ref("baseline.json");
        save_model(&model, &models.join(format!("{m}.json")))?;
        write_atomic(&dir.join(format!("logs/{m}.json")), &to_json(log)?)?;
    }
    Ok(())
}

/// File stem for one report of a model.
pub fn report_stem(model: &str, r: &ShapleyReport) -> String {
    let mut stem = format!("{model}_{}", r.kind);
    if let Some(cell) = &r.cell {
        let clean: String = cell
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
            .collect();
        stem.push('_');
        stem.push_str(&clean);
    }
    stem
}

/// Writes a report list as JSON plus, per report, CSV and SVG.
pub fn write_reports(dir: &Path, model: &str, kind: &str, reports: &[ShapleyReport]) -> Result<()> {
    write_atomic(&dir.join(format!("reports/{model}_{kind}.json")), &to_json(&reports)?)?;
    for r in reports {
        let stem = report_stem(model, r);
        write_atomic(&dir.join(format!("reports/{stem}.csv")), r.to_csv().as_bytes())?;
        let opts = WaterfallOptions {
            title: Some(match &r.cell {
                Some(c) => format!("{model}: {} ({c})", r.kind),
                None => format!("{model}: {}", r.kind),
            }),
            ..WaterfallOptions::default()
        };
        write_atomic(&dir.join(format!("plots/{stem}.svg")), render_waterfall(r, &opts).as_bytes())?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub config: String,
    pub artifacts: Vec<Artifact>,
}

fn walk(dir: &Path, root: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(&p, root, out)?;
        } else if p.file_name().is_some_and(|n| n != MANIFEST) {
            out.push(p.strip_prefix(root).expect("walked under root").to_path_buf());
        }
    }
    Ok(())
}

fn artifact_list(root: &Path) -> Result<Vec<Artifact>> {
    let mut files = Vec::new();
    walk(root, root, &mut files)?;
    files
        .into_iter()
        .map(|rel| {
            Ok(Artifact {
                sha256: sha256_file(&root.join(&rel))?,
                path: rel.to_string_lossy().replace('\\', "/"),
            })
        })
        .collect()
}

/// Runs every stage of `cfg` and returns the artifact directory. Everything
/// is first written to a sibling staging directory that replaces the
/// output only once all stages succeed.
pub fn run(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let out = cfg.out.clone();
    let mut staging = out.as_os_str().to_owned();
    staging.push(".partial");
    let staging = PathBuf::from(staging);
    if staging.exists() {
        std::fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    std::fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;

    let ds = stage("data", cfg.load_dataset())?;
    write_atomic(&staging.join("dataset.json"), &to_json(&DatasetSummary::of(&ds))?)?;

    let trained = train(cfg, &ds)?;
    stage("save-models", save_trained(&trained, &staging))?;

    let est = cfg.estimator_config();
    for (name, p) in trained.predictors() {
        // The perturbation is a difference of probabilities, not a classifier.
        if name != "perturbation" {
            let m = stage("evaluate", evaluate(&name, p.as_ref(), &ds, Split::Test))?;
            write_atomic(&staging.join(format!("metrics/{name}.json")), &to_json(&m)?)?;
        }
        for &kind in &cfg.explain {
            let reports = stage(
                &format!("explain-{name}-{kind}"),
                global_shapley(&cfg.explain_spec(kind), p.as_ref(), &ds, cfg.explain_split, &est),
            )?;
            write_reports(&staging, &name, kind.as_str(), &reports)?;
        }
    }

    let manifest = Manifest {
        tool: "fairshap".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: cfg.hash()?,
        config: cfg.to_toml()?,
        artifacts: artifact_list(&staging)?,
    };
    write_atomic(&staging.join(MANIFEST), &to_json(&manifest)?)?;

    if out.exists() {
        std::fs::remove_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    }
    std::fs::rename(&staging, &out).map_err(|e| Error::io(&out, e))?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }

    fn push(&mut self, name: impl Into<String>, ok: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            ok,
            detail: detail.into(),
        });
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}

/// Re-checks a stored run: artifact hashes, model references, report
/// invariants and agreement between reports and metric files.
pub fn verify_dir(dir: &Path) -> Result<VerifyReport> {
    let mut v = VerifyReport::default();
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.exists() {
        return Err(Error::MissingFile(manifest_path));
    }
    let manifest: Manifest = read_json(&manifest_path)?;
    match ExperimentConfig::from_toml(&manifest.config).and_then(|c| c.hash()) {
        Ok(h) => v.push("config hash", h == manifest.config_sha256, h),
        Err(e) => v.push("config hash", false, e.to_string()),
    }
    for a in &manifest.artifacts {
        let got = sha256_file(&dir.join(&a.path));
        let ok = got.as_ref().is_ok_and(|h| h == &a.sha256);
        v.push(format!("sha256 {}", a.path), ok, got.unwrap_or_else(|e| e.to_string()));
    }

    let mut metric_files: BTreeMap<String, ModelMetrics> = BTreeMap::new();
    for a in &manifest.artifacts {
        let path = dir.join(&a.path);
        if a.path.starts_with("models/") {
            let r = load_model(&path);
            v.push(format!("load {}", a.path), r.is_ok(), r.err().map(|e| e.to_string()).unwrap_or_default());
        } else if a.path.starts_with("metrics/") {
            let m: ModelMetrics = read_json(&path)?;
            metric_files.insert(m.model.clone(), m);
        }
    }
    for a in manifest.artifacts.iter().filter(|a| a.path.starts_with("reports/") && a.path.ends_with(".json")) {
        let reports: Vec<ShapleyReport> = read_json(&dir.join(&a.path))?;
        let model = a
            .path
            .trim_start_matches("reports/")
            .rsplit_once('_')
            .map(|(m, _)| m.to_string())
            .unwrap_or_default();
        for r in &reports {
            let label = format!("{} {}", a.path, r.cell.as_deref().unwrap_or(""));
            let valid = r.validate();
            v.push(format!("invariants {label}"), valid.is_ok(), valid.err().map(|e| e.to_string()).unwrap_or_default());
            let gap = r.sum_rule_gap();
            v.push(format!("sum rule {label}"), gap.abs() < SUM_RULE_TOLERANCE, format!("gap {gap:e}"));
            // Whole-split reports must agree with the stored metric file.
            if let Some(m) = metric_files.get(&model) {
                if r.split == Split::Test && r.n_rows == m.accuracy.n && r.cell.is_none() {
                    let stored = match r.kind {
                        crate::shapley::ValueKind::Accuracy => Some(m.accuracy.value),
                        crate::shapley::ValueKind::Dp => Some(m.dp.signed),
                        _ => None,
                    };
                    if let Some(s) = stored {
                        let d = (s - r.metric_value).abs();
                        v.push(format!("metric file {label}"), d < SUM_RULE_TOLERANCE, format!("difference {d:e}"));
                    }
                }
            }
        }
    }
    Ok(v)
}
