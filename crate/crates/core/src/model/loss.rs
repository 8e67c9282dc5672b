//! Training objectives and their exact gradients.

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::activation::{head_backward, head_into, pinned_cross_entropy, sigmoid};
use super::{Mlp, MlpCache};
use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Fairness notion targeted by an adversary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Notion {
    Dp,
    Eo,
}

impl Notion {
    pub fn as_str(self) -> &'static str {
        match self {
            Notion::Dp => "dp",
            Notion::Eo => "eo",
        }
    }
}

impl std::fmt::Display for Notion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Notion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dp" => Ok(Notion::Dp),
            "eo" => Ok(Notion::Eo),
            other => Err(Error::InvalidConfig(format!("unknown fairness notion '{other}' (expected dp or eo)"))),
        }
    }
}

/// A mini-batch of encoded rows with labels and protected values.
#[derive(Clone, Debug)]
pub struct LabeledBatch {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    pub a: Vec<u8>,
    /// Frozen-base outputs for `x`, when the model is a perturbation.
    pub base: Option<Array2<f64>>,
}

impl LabeledBatch {
    pub fn from_rows(ds: &Dataset, rows: &[usize]) -> Self {
        let d = ds.n_cols();
        let mut x = Array2::zeros((rows.len(), d));
        for (mut r, &i) in x.rows_mut().into_iter().zip(rows) {
            r.iter_mut().zip(ds.row(i)).for_each(|(o, v)| *o = *v);
        }
        LabeledBatch {
            x,
            y: rows.iter().map(|&i| ds.y()[i]).collect(),
            a: rows.iter().map(|&i| ds.a()[i]).collect(),
            base: None,
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Forward state of a trainable model on a batch.
#[derive(Clone, Debug)]
pub struct TrainCache {
    /// Free logits, `n x (k-1)`.
    pub logits: Array2<f64>,
    pub(crate) inner: MlpCache,
}

/// A model whose free logits are differentiable in a flat parameter vector.
pub trait Trainable {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn n_free_logits(&self) -> usize;
    /// `base` carries precomputed frozen-base outputs for `x`, if any.
    fn forward_train(&self, x: ArrayView2<'_, f64>, base: Option<ArrayView2<'_, f64>>) -> TrainCache;
    /// Accumulates `dL/dparams` into `grad`.
    fn backward_train(&self, cache: &TrainCache, dlogits: ArrayView2<'_, f64>, grad: &mut [f64]);
}

#[derive(Clone, Copy, Debug)]
pub enum LossSpec<'a> {
    /// Mean cross-entropy.
    CrossEntropy,
    /// `CE - lambda * CE_adv`, where the adversary predicts `a` from the
    /// model's free logits (plus the label for eo). With `projection`, the
    /// model gradient also drops its component along the adversary
    /// gradient; the result is then no longer the gradient of `loss`.
    Adversarial {
        adversary: &'a Mlp,
        lambda: f64,
        notion: Notion,
        projection: bool,
    },
    /// `CE + alpha * mean_i 0.5 * |f(do(a=1)) - f(do(a=0))|_1`.
    Suppression { alpha: f64, protected_columns: [usize; 2] },
}

#[derive(Clone, Debug)]
pub struct Gradients {
    /// Value of the model objective on the batch.
    pub loss: f64,
    pub model: Vec<f64>,
    /// Gradient of the adversary's own cross-entropy.
    pub adversary: Option<Vec<f64>>,
    pub adversary_loss: Option<f64>,
}

/// Sum of cross-entropies and the per-row `dCE/dlogits` (unnormalized).
fn cross_entropy_terms(logits: &Array2<f64>, y: &[usize]) -> (f64, Array2<f64>) {
    let m = logits.ncols();
    let mut d = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    let mut p = vec![0.0; m + 1];
    for (i, z) in logits.rows().into_iter().enumerate() {
        let z = z.to_vec();
        total += pinned_cross_entropy(&z, y[i]);
        head_into(&z, &mut p);
        for j in 0..m {
            d[[i, j]] = p[j + 1] - f64::from(u8::from(y[i] == j + 1));
        }
    }
    (total, d)
}

pub(crate) fn adversary_input(logits: &Array2<f64>, y: &[usize], notion: Notion) -> Array2<f64> {
    match notion {
        Notion::Dp => logits.clone(),
        Notion::Eo => {
            let m = logits.ncols();
            let mut out = Array2::zeros((logits.nrows(), m + 1));
            out.slice_mut(s![.., ..m]).assign(logits);
            for (i, &yi) in y.iter().enumerate() {
                out[[i, m]] = yi as f64;
            }
            out
        }
    }
}

/// Mean adversary cross-entropy and `dCE_adv/dadversary_logit`.
fn adversary_terms(cache: &MlpCache, a: &[u8]) -> (f64, Array2<f64>) {
    let n = a.len() as f64;
    let z = cache.logits();
    let mut d = Array2::zeros(z.raw_dim());
    let mut total = 0.0;
    for (i, &ai) in a.iter().enumerate() {
        let zi = z[[i, 0]];
        total += pinned_cross_entropy(&[zi], usize::from(ai));
        d[[i, 0]] = (sigmoid(zi) - f64::from(ai)) / n;
    }
    (total / n, d)
}

fn intervene(x: &Array2<f64>, cols: [usize; 2], value: u8) -> Array2<f64> {
    let mut out = x.clone();
    for mut r in out.rows_mut() {
        r[cols[0]] = f64::from(1 - value);
        r[cols[1]] = f64::from(value);
    }
    out
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean penalty and its gradients w.r.t. the free logits of both arms.
fn suppression_terms(z1: &Array2<f64>, z0: &Array2<f64>, scale: f64) -> (f64, Array2<f64>, Array2<f64>) {
    let (n, m) = z1.dim();
    let mut d1 = Array2::zeros((n, m));
    let mut d0 = Array2::zeros((n, m));
    let (mut p1, mut p0) = (vec![0.0; m + 1], vec![0.0; m + 1]);
    let mut g = vec![0.0; m + 1];
    let mut buf = vec![0.0; m];
    let mut total = 0.0;
    for i in 0..n {
        head_into(&z1.row(i).to_vec(), &mut p1);
        head_into(&z0.row(i).to_vec(), &mut p0);
        for c in 0..=m {
            let diff = p1[c] - p0[c];
            total += 0.5 * diff.abs();
            g[c] = 0.5 * scale * sign(diff);
        }
        head_backward(&p1, &g, &mut buf);
        d1.row_mut(i).iter_mut().zip(&buf).for_each(|(o, v)| *o = *v);
        g.iter_mut().for_each(|v| *v = -*v);
        head_backward(&p0, &g, &mut buf);
        d0.row_mut(i).iter_mut().zip(&buf).for_each(|(o, v)| *o = *v);
    }
    (total / n as f64, d1, d0)
}

fn check_finite(what: &str, g: &[f64]) -> Result<()> {
    match g.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(Error::NonFinite(format!("{what} gradient component {v}"))),
        None => Ok(()),
    }
}

/// Loss and exact gradients of `spec` on `batch`.
pub fn backward<M: Trainable + ?Sized>(model: &M, batch: &LabeledBatch, spec: &LossSpec<'_>) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(Error::EmptySplit("training batch".into()));
    }
    let n = batch.len() as f64;
    let cache = model.forward_train(batch.x.view(), batch.base.as_ref().map(|b| b.view()));
    let (ce, mut dz) = cross_entropy_terms(&cache.logits, &batch.y);
    dz /= n;
    let ce = ce / n;
    let mut grad = vec![0.0; model.params().len()];
    let out = match *spec {
        LossSpec::CrossEntropy => {
            model.backward_train(&cache, dz.view(), &mut grad);
            Gradients {
                loss: ce,
                model: grad,
                adversary: None,
                adversary_loss: None,
            }
        }
        LossSpec::Adversarial {
            adversary,
            lambda,
            notion,
            projection,
        } => {
            let inp = adversary_input(&cache.logits, &batch.y, notion);
            let acache = adversary.forward_batch(inp.view());
            let (adv_ce, dal) = adversary_terms(&acache, &batch.a);
            let mut gadv = vec![0.0; adversary.params().len()];
            let din = adversary.backward_batch(&acache, dal.view(), &mut gadv);
            let dz_adv = din.slice(s![.., ..cache.logits.ncols()]).to_owned();
            if projection {
                let mut g_adv = vec![0.0; grad.len()];
                model.backward_train(&cache, dz.view(), &mut grad);
                model.backward_train(&cache, dz_adv.view(), &mut g_adv);
                let norm2: f64 = g_adv.iter().map(|v| v * v).sum();
                let coef = if norm2 > 0.0 {
                    grad.iter().zip(&g_adv).map(|(a, b)| a * b).sum::<f64>() / norm2
                } else {
                    0.0
                };
                for (g, ga) in grad.iter_mut().zip(&g_adv) {
                    *g -= (coef + lambda) * ga;
                }
            } else {
                let total = &dz - &(dz_adv * lambda);
                model.backward_train(&cache, total.view(), &mut grad);
            }
            check_finite("adversary", &gadv)?;
            Gradients {
                loss: ce - lambda * adv_ce,
                model: grad,
                adversary: Some(gadv),
                adversary_loss: Some(adv_ce),
            }
        }
        LossSpec::Suppression { alpha, protected_columns } => {
            let x1 = intervene(&batch.x, protected_columns, 1);
            let x0 = intervene(&batch.x, protected_columns, 0);
            let c1 = model.forward_train(x1.view(), None);
            let c0 = model.forward_train(x0.view(), None);
            let (pen, d1, d0) = suppression_terms(&c1.logits, &c0.logits, alpha / n);
            model.backward_train(&cache, dz.view(), &mut grad);
            model.backward_train(&c1, d1.view(), &mut grad);
            model.backward_train(&c0, d0.view(), &mut grad);
            Gradients {
                loss: ce + alpha * pen,
                model: grad,
                adversary: None,
                adversary_loss: None,
            }
        }
    };
    check_finite("model", &out.model)?;
    Ok(out)
}

/// The adversary's own cross-entropy and its gradient, with the model fixed.
pub fn adversary_backward<M: Trainable + ?Sized>(
    model: &M,
    batch: &LabeledBatch,
    adversary: &Mlp,
    notion: Notion,
) -> Result<(f64, Vec<f64>)> {
    let cache = model.forward_train(batch.x.view(), batch.base.as_ref().map(|b| b.view()));
    let inp = adversary_input(&cache.logits, &batch.y, notion);
    let acache = adversary.forward_batch(inp.view());
    let (loss, dal) = adversary_terms(&acache, &batch.a);
    let mut g = vec![0.0; adversary.params().len()];
    adversary.backward_batch(&acache, dal.view(), &mut g);
    check_finite("adversary", &g)?;
    Ok((loss, g))
}

/// Value of `spec` on `batch` without gradients.
pub fn loss_value<M: Trainable + ?Sized>(model: &M, batch: &LabeledBatch, spec: &LossSpec<'_>) -> f64 {
    let n = batch.len() as f64;
    let cache = model.forward_train(batch.x.view(), batch.base.as_ref().map(|b| b.view()));
    let ce = batch
        .y
        .iter()
        .enumerate()
        .map(|(i, &y)| pinned_cross_entropy(&cache.logits.row(i).to_vec(), y))
        .sum::<f64>()
        / n;
    match *spec {
        LossSpec::CrossEntropy => ce,
        LossSpec::Adversarial {
            adversary,
            lambda,
            notion,
            ..
        } => ce - lambda * adversary_loss(adversary, &cache.logits, batch, notion),
        LossSpec::Suppression { alpha, protected_columns } => {
            let c1 = model.forward_train(intervene(&batch.x, protected_columns, 1).view(), None);
            let c0 = model.forward_train(intervene(&batch.x, protected_columns, 0).view(), None);
            ce + alpha * suppression_terms(&c1.logits, &c0.logits, 0.0).0
        }
    }
}

/// Mean adversary cross-entropy given the model's free logits.
pub fn adversary_loss(adversary: &Mlp, logits: &Array2<f64>, batch: &LabeledBatch, notion: Notion) -> f64 {
    let inp = adversary_input(logits, &batch.y, notion);
    adversary_terms(&adversary.forward_batch(inp.view()), &batch.a).0
}
