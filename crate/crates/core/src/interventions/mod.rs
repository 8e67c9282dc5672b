//! Trainers for the model variants that explanations and tables consume:
//! cross-entropy baselines, adversarially debiased networks (fresh or as a
//! perturbation of a frozen base), suppression retraining, and post-hoc
//! score repairs.

mod postprocess;

use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use postprocess::{feldman_postprocess, hardt_postprocess, FeldmanRepair, GroupRule, HardtRule, THRESHOLD_NONE};

use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{accuracy_from_probs, dp_from_probs, eo_from_probs};
use crate::model::activation::head_into;
use crate::model::loss::{adversary_backward, Notion};
use crate::model::optim::Adam;
use crate::model::{backward, loss_value, FeedForward, InputMode, LabeledBatch, LossSpec, Mlp, PerturbedModel, Predictor, Trainable};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointPolicy {
    /// Restore the parameters with the lowest validation loss among
    /// evaluations in the second half of training.
    #[default]
    BestSecondHalf,
    Final,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Model update steps.
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adversary_lr: f64,
    pub adversary_hidden: Vec<usize>,
    pub notion: Notion,
    pub lambda: f64,
    pub adversary_steps: usize,
    /// Remove the projection of the accuracy gradient onto the adversary
    /// gradient before stepping.
    pub projection: bool,
    pub seed: u64,
    pub eval_every: usize,
    pub checkpoint: CheckpointPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 1000,
            batch_size: 512,
            lr: 1e-3,
            adversary_lr: 0.01,
            adversary_hidden: vec![8],
            notion: Notion::Dp,
            lambda: 0.0,
            adversary_steps: 1,
            projection: false,
            seed: 0,
            eval_every: 50,
            checkpoint: CheckpointPolicy::BestSecondHalf,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if self.iterations == 0 || self.batch_size == 0 || self.adversary_steps == 0 || self.eval_every == 0 {
            return bad("iterations, batch size, adversary steps and evaluation interval must be positive");
        }
        if !(self.lr > 0.0 && self.adversary_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("adversary weight must be finite and non-negative");
        }
        Ok(())
    }
}

/// Network shape of a freshly trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    /// Leave the protected attribute's columns out of the network input.
    #[serde(default)]
    pub exclude_protected: bool,
}

impl Architecture {
    pub fn hidden(hidden: &[usize]) -> Self {
        Architecture {
            hidden: hidden.to_vec(),
            exclude_protected: false,
        }
    }

    pub fn build(&self, ds: &Dataset, seed: u64) -> FeedForward {
        let protected = ds.protected_columns();
        let cols: Vec<usize> = (0..ds.n_cols())
            .filter(|c| !(self.exclude_protected && protected.contains(c)))
            .collect();
        FeedForward::new(ds.name(), ds.n_cols(), cols, &self.hidden, ds.n_classes(), seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogPoint {
    pub iteration: usize,
    /// Mean batch objective since the previous evaluation.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_fairness: f64,
    pub checkpointed: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub points: Vec<LogPoint>,
    /// Iteration whose parameters were restored at the end, if any.
    pub restored_iteration: Option<usize>,
    pub notes: Vec<String>,
}

/// What the adversarial trainer optimizes.
#[derive(Clone)]
pub enum Target {
    Fresh(Architecture),
    Perturbation {
        base: Arc<dyn Predictor>,
        hidden: Vec<usize>,
        input_mode: InputMode,
    },
}

/// Output of [`train_adversarial`].
pub enum Debiased {
    Fresh(FeedForward),
    Perturbed(PerturbedModel),
}

impl Debiased {
    pub fn predictor(&self) -> &dyn Predictor {
        match self {
            Debiased::Fresh(m) => m,
            Debiased::Perturbed(m) => m,
        }
    }

    pub fn into_model(self) -> crate::model::Model {
        match self {
            Debiased::Fresh(m) => crate::model::Model::FeedForward(m),
            Debiased::Perturbed(m) => crate::model::Model::Perturbed(m),
        }
    }
}

#[derive(Clone, Copy)]
enum Objective {
    CrossEntropy,
    Adversarial { lambda: f64, notion: Notion, projection: bool },
    Suppression { alpha: f64, protected_columns: [usize; 2] },
}

impl Objective {
    fn spec<'a>(&self, adversary: Option<&'a Mlp>) -> LossSpec<'a> {
        match *self {
            Objective::CrossEntropy => LossSpec::CrossEntropy,
            Objective::Adversarial {
                lambda,
                notion,
                projection,
            } => LossSpec::Adversarial {
                adversary: adversary.expect("adversarial objective has an adversary"),
                lambda,
                notion,
                projection,
            },
            Objective::Suppression { alpha, protected_columns } => LossSpec::Suppression { alpha, protected_columns },
        }
    }
}

fn batch_for(ds: &Dataset, rows: &[usize], base: Option<&Array2<f64>>) -> LabeledBatch {
    let mut b = LabeledBatch::from_rows(ds, rows);
    if let Some(all) = base {
        b.base = Some(all.select(ndarray::Axis(0), rows));
    }
    b
}

/// Frozen-base outputs for every dataset row.
fn base_outputs(base: &dyn Predictor, ds: &Dataset) -> Array2<f64> {
    let k = base.n_classes();
    let mut out = Array2::zeros((ds.n_rows(), k));
    for (i, mut r) in out.rows_mut().into_iter().enumerate() {
        base.predict_into(ds.row(i), r.as_slice_mut().expect("contiguous"));
    }
    out
}

fn probs_from_logits(logits: &Array2<f64>) -> Vec<f64> {
    let k = logits.ncols() + 1;
    let mut out = vec![0.0; logits.nrows() * k];
    for (o, z) in out.chunks_mut(k).zip(logits.rows()) {
        head_into(&z.to_vec(), o);
    }
    out
}

fn divergence(iteration: usize, e: Error) -> Error {
    Error::Divergence {
        iteration,
        detail: e.to_string(),
    }
}

/// Shared mini-batch loop with evaluation and checkpoint restoration.
fn fit<M: Trainable>(
    model: &mut M,
    mut adversary: Option<&mut Mlp>,
    ds: &Dataset,
    cfg: &TrainConfig,
    objective: Objective,
    fairness_notion: Notion,
    base: Option<&Array2<f64>>,
) -> Result<TrainLog> {
    cfg.validate()?;
    let train = ds.rows(Split::Train);
    let val = ds.rows(Split::Validation);
    if train.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    if val.is_empty() {
        return Err(Error::EmptySplit("validation".into()));
    }
    let val_batch = batch_for(ds, &val, base);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = train.clone();
    order.shuffle(&mut rng);
    let mut pos = 0;
    let mut opt = Adam::new(model.params().len(), cfg.lr);
    let mut adv_opt = adversary.as_ref().map(|a| Adam::new(a.params().len(), cfg.adversary_lr));
    let bs = cfg.batch_size.min(order.len());
    let mut log = TrainLog::default();
    let mut best: Option<(f64, usize, Vec<f64>, Option<Vec<f64>>)> = None;
    let mut loss_acc = 0.0;
    let mut loss_n = 0usize;
    let mut collapse_noted = false;
    for it in 1..=cfg.iterations {
        if pos + bs > order.len() {
            order.shuffle(&mut rng);
            pos = 0;
        }
        let batch = batch_for(ds, &order[pos..pos + bs], base);
        pos += bs;
        if let (Some(adv), Some(aopt), Objective::Adversarial { notion, .. }) = (adversary.as_deref_mut(), adv_opt.as_mut(), objective) {
            for _ in 0..cfg.adversary_steps {
                let (_, g) = adversary_backward(model, &batch, adv, notion).map_err(|e| divergence(it, e))?;
                aopt.step(adv.params_mut(), &g);
            }
        }
        let spec = objective.spec(adversary.as_deref());
        let g = backward(model, &batch, &spec).map_err(|e| divergence(it, e))?;
        if !g.loss.is_finite() {
            return Err(divergence(it, Error::NonFinite(format!("loss {}", g.loss))));
        }
        opt.step(model.params_mut(), &g.model);
        loss_acc += g.loss;
        loss_n += 1;

        if it % cfg.eval_every == 0 || it == cfg.iterations {
            let spec = objective.spec(adversary.as_deref());
            let val_loss = loss_value(model, &val_batch, &spec);
            if !val_loss.is_finite() {
                return Err(divergence(it, Error::NonFinite(format!("validation loss {val_loss}"))));
            }
            let cache = model.forward_train(val_batch.x.view(), val_batch.base.as_ref().map(|b| b.view()));
            let probs = probs_from_logits(&cache.logits);
            let k = cache.logits.ncols() + 1;
            let acc = accuracy_from_probs(&probs, k, ds, &val, false)?;
            let fair = match fairness_notion {
                Notion::Dp => dp_from_probs(&probs, k, ds, &val)?,
                Notion::Eo => eo_from_probs(&probs, k, ds, &val)?,
            };
            if let (Some(adv), Objective::Adversarial { notion, .. }) = (adversary.as_deref(), objective) {
                let inp = crate::model::loss::adversary_input(&cache.logits, &val_batch.y, notion);
                let out = adv.forward_batch(inp.view());
                let z = out.logits();
                let (lo, hi) = z.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
                if hi - lo < 1e-6 && !collapse_noted {
                    log.notes.push(format!("adversary output constant at iteration {it}"));
                    collapse_noted = true;
                }
            }
            let second_half = 2 * it > cfg.iterations;
            let improves = best.as_ref().map_or(true, |b| val_loss < b.0);
            let checkpointed = cfg.checkpoint == CheckpointPolicy::BestSecondHalf && second_half && improves;
            if checkpointed {
                best = Some((val_loss, it, model.params().to_vec(), adversary.as_deref().map(|a| a.params().to_vec())));
            }
            log.points.push(LogPoint {
                iteration: it,
                train_loss: loss_acc / loss_n as f64,
                val_loss,
                val_accuracy: acc.hard_accuracy.unwrap_or(acc.value),
                val_fairness: fair.value,
                checkpointed,
            });
            loss_acc = 0.0;
            loss_n = 0;
        }
    }
    if let Some((_, it, params, adv_params)) = best {
        model.params_mut().copy_from_slice(&params);
        if let (Some(adv), Some(p)) = (adversary, adv_params) {
            adv.params_mut().copy_from_slice(&p);
        }
        log.restored_iteration = Some(it);
    }
    Ok(log)
}

/// Cross-entropy training of a fresh network.
pub fn train_baseline(ds: &Dataset, arch: &Architecture, cfg: &TrainConfig) -> Result<(FeedForward, TrainLog)> {
    let mut model = arch.build(ds, cfg.seed);
    let log = fit(&mut model, None, ds, cfg, Objective::CrossEntropy, cfg.notion, None)?;
    Ok((model, log))
}

fn adversary_for(cfg: &TrainConfig, n_free: usize) -> Mlp {
    let width = match cfg.notion {
        Notion::Dp => n_free,
        Notion::Eo => n_free + 1,
    };
    Mlp::new(width, &cfg.adversary_hidden, 1, cfg.seed.wrapping_add(0x5eed))
}

/// Alternating adversarial training. The adversary reads the model's free
/// logits (and the label for eo) and predicts the protected attribute; the
/// model minimizes `CE - lambda * CE_adv`.
pub fn train_adversarial(ds: &Dataset, target: &Target, cfg: &TrainConfig) -> Result<(Debiased, TrainLog)> {
    let objective = Objective::Adversarial {
        lambda: cfg.lambda,
        notion: cfg.notion,
        projection: cfg.projection,
    };
    match target {
        Target::Fresh(arch) => {
            let mut model = arch.build(ds, cfg.seed);
            let mut adv = adversary_for(cfg, model.n_free_logits());
            let log = fit(&mut model, Some(&mut adv), ds, cfg, objective, cfg.notion, None)?;
            Ok((Debiased::Fresh(model), log))
        }
        Target::Perturbation { base, hidden, input_mode } => {
            if base.input_width() != ds.n_cols() {
                return Err(Error::DimensionMismatch {
                    expected: ds.n_cols(),
                    got: base.input_width(),
                });
            }
            let outputs = base_outputs(base.as_ref(), ds);
            let mut model = PerturbedModel::new(Arc::clone(base), ds, hidden, *input_mode, cfg.seed);
            let mut adv = adversary_for(cfg, model.n_free_logits());
            let log = fit(&mut model, Some(&mut adv), ds, cfg, objective, cfg.notion, Some(&outputs))?;
            Ok((Debiased::Perturbed(model), log))
        }
    }
}

/// Continues training `base` for `batches` steps on
/// `CE + alpha * |f(do(a=1)) - f(do(a=0))|`, using `cfg`'s batch size,
/// learning rate, seed and checkpoint policy.
pub fn suppression_retrain(base: &FeedForward, ds: &Dataset, alpha: f64, batches: usize, cfg: &TrainConfig) -> Result<(FeedForward, TrainLog)> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidConfig(format!("penalty weight {alpha} must be finite and non-negative")));
    }
    let cfg = TrainConfig {
        iterations: batches,
        ..cfg.clone()
    };
    let mut model = base.clone();
    model.name = format!("{}+suppressed", base.name);
    let objective = Objective::Suppression {
        alpha,
        protected_columns: ds.protected_columns(),
    };
    let log = fit(&mut model, None, ds, &cfg, objective, Notion::Dp, None)?;
    Ok((model, log))
}

/// Mean `0.5 * |f(do(a=1)) - f(do(a=0))|_1` over `rows`.
pub fn intervention_gap(p: &dyn Predictor, ds: &Dataset, rows: &[usize]) -> f64 {
    let k = p.n_classes();
    let (mut p1, mut p0) = (vec![0.0; k], vec![0.0; k]);
    let mut total = 0.0;
    for &i in rows {
        p.predict_into(&ds.intervene_protected(ds.row(i), 1), &mut p1);
        p.predict_into(&ds.intervene_protected(ds.row(i), 0), &mut p0);
        total += 0.5 * p1.iter().zip(&p0).map(|(a, b)| (a - b).abs()).sum::<f64>();
    }
    total / rows.len() as f64
}

/// Fraction of `rows` on which two predictors make the same argmax decision.
pub fn agreement(a: &dyn Predictor, b: &dyn Predictor, ds: &Dataset, rows: &[usize]) -> f64 {
    let k = a.n_classes();
    let (mut pa, mut pb) = (vec![0.0; k], vec![0.0; k]);
    let argmax = |p: &[f64]| (0..p.len()).fold(0, |best, j| if p[j] > p[best] { j } else { best });
    let same = rows
        .iter()
        .filter(|&&i| {
            a.predict_into(ds.row(i), &mut pa);
            b.predict_into(ds.row(i), &mut pb);
            argmax(&pa) == argmax(&pb)
        })
        .count();
    same as f64 / rows.len() as f64
}
