//! Frozen base plus a trainable correction on the (pinned) logit scale:
//! `f_theta(x) = head(l(f(x)) + aux(f(x), x, a))`.

use std::borrow::Cow;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::activation::{clamped_pinned_logits_into, head_into};
use super::loss::{TrainCache, Trainable};
use super::{LinearStage, Mlp, Predictor};
use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Which inputs the auxiliary network receives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputMode {
    pub score: bool,
    pub features: bool,
    pub protected: bool,
}

impl Default for InputMode {
    fn default() -> Self {
        InputMode {
            score: true,
            features: true,
            protected: true,
        }
    }
}

#[derive(Clone)]
pub struct PerturbedModel {
    pub name: String,
    pub base: Arc<dyn Predictor>,
    /// Path of the frozen base model file, relative to this model's file.
    pub base_ref: Option<String>,
    pub aux: Mlp,
    pub input_mode: InputMode,
    /// Encoded columns fed to `aux` when `input_mode.features` is set.
    pub feature_columns: Vec<usize>,
    /// One-hot columns of the protected attribute; `a` is read from the second.
    pub protected_columns: [usize; 2],
}

impl std::fmt::Debug for PerturbedModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PerturbedModel")
            .field("name", &self.name)
            .field("base", &self.base.name())
            .field("base_ref", &self.base_ref)
            .field("aux", &self.aux.sizes())
            .field("input_mode", &self.input_mode)
            .finish()
    }
}

/// `head(l(base) + aux)` for one row: sigmoid/logit for two classes,
/// otherwise softmax of the pinned log-ratios. `aux` holds the k-1 free
/// coordinates; the first coordinate of the correction is pinned to zero.
pub fn compose_perturbed(base: &[f64], aux: &[f64]) -> Result<Vec<f64>> {
    if base.len() < 2 || aux.len() + 1 != base.len() {
        return Err(Error::DimensionMismatch {
            expected: base.len().saturating_sub(1),
            got: aux.len(),
        });
    }
    let total: f64 = base.iter().sum();
    if base.iter().any(|v| !v.is_finite() || *v < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidProbability(format!("{base:?}")));
    }
    let mut z = vec![0.0; aux.len()];
    clamped_pinned_logits_into(base, &mut z);
    for (zv, d) in z.iter_mut().zip(aux) {
        *zv += d;
    }
    let mut out = vec![0.0; base.len()];
    head_into(&z, &mut out);
    Ok(out)
}

impl PerturbedModel {
    /// Correction network with the output layer zeroed, so the composition
    /// starts out equal to the base.
    pub fn new(base: Arc<dyn Predictor>, ds: &Dataset, hidden: &[usize], input_mode: InputMode, seed: u64) -> Self {
        let protected = ds.protected_columns();
        let feature_columns: Vec<usize> = (0..ds.n_cols()).filter(|c| !protected.contains(c)).collect();
        let k = base.n_classes();
        let width = Self::aux_width(k, input_mode, feature_columns.len());
        let mut aux = Mlp::new(width, hidden, k - 1, seed);
        aux.zero_output_layer();
        PerturbedModel {
            name: format!("{}+perturbation", base.name()),
            base,
            base_ref: None,
            aux,
            input_mode,
            feature_columns,
            protected_columns: protected,
        }
    }

    fn aux_width(k: usize, mode: InputMode, n_features: usize) -> usize {
        usize::from(mode.score) * (k - 1) + usize::from(mode.features) * n_features + usize::from(mode.protected)
    }

    fn write_aux_input(&self, base: &[f64], x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        if self.input_mode.score {
            out.extend_from_slice(&base[1..]);
        }
        if self.input_mode.features {
            out.extend(self.feature_columns.iter().map(|&c| x[c]));
        }
        if self.input_mode.protected {
            out.push(x[self.protected_columns[1]]);
        }
    }

    /// Free logits of the correction for one row.
    pub fn correction(&self, x: &[f64]) -> Vec<f64> {
        let mut base = vec![0.0; self.base.n_classes()];
        self.base.predict_into(x, &mut base);
        let mut inp = Vec::new();
        self.write_aux_input(&base, x, &mut inp);
        let mut d = vec![0.0; self.aux.n_outputs()];
        self.aux.logits_into(&inp, &mut d);
        d
    }

    /// Checked composition for one row.
    pub fn compose(&self, x: &[f64]) -> Result<Vec<f64>> {
        let base = super::predict_proba(self.base.as_ref(), x)?;
        compose_perturbed(&base, &self.correction(x))
    }

    /// `delta_theta(x) = f_theta(x) - f(x)`.
    pub fn perturbation(&self, x: &[f64]) -> Vec<f64> {
        let mut base = vec![0.0; self.base.n_classes()];
        self.base.predict_into(x, &mut base);
        let mut out = vec![0.0; base.len()];
        self.predict_into(x, &mut out);
        out.iter().zip(&base).map(|(a, b)| a - b).collect()
    }

    fn combine(&self, base: &[f64], aux_out: &[f64], out: &mut [f64]) {
        let mut z = vec![0.0; aux_out.len()];
        clamped_pinned_logits_into(base, &mut z);
        for (zv, d) in z.iter_mut().zip(aux_out) {
            *zv += d;
        }
        head_into(&z, out);
    }
}

impl Predictor for PerturbedModel {
    fn n_classes(&self) -> usize {
        self.base.n_classes()
    }

    fn input_width(&self) -> usize {
        self.base.input_width()
    }

    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        let mut base = vec![0.0; out.len()];
        self.base.predict_into(x, &mut base);
        let mut inp = Vec::with_capacity(self.aux.input_width());
        self.write_aux_input(&base, x, &mut inp);
        let mut d = vec![0.0; self.aux.n_outputs()];
        self.aux.logits_into(&inp, &mut d);
        self.combine(&base, &d, out);
    }

    fn name(&self) -> String {
        self.name.clone()
    }

    fn trainable(&self) -> bool {
        true
    }

    fn linear_stage(&self) -> Option<LinearStage<'_>> {
        let base = self.base.linear_stage()?;
        let d = self.input_width();
        let (w, b) = self.aux.layer(0);
        let n_score = if self.input_mode.score { self.n_classes() - 1 } else { 0 };
        let mut weights = base.weights.into_owned();
        let mut bias = base.bias.into_owned();
        for r in 0..w.nrows() {
            let mut row = vec![0.0; d];
            let mut j = n_score;
            if self.input_mode.features {
                for &c in &self.feature_columns {
                    row[c] = w[[r, j]];
                    j += 1;
                }
            }
            if self.input_mode.protected {
                row[self.protected_columns[1]] = w[[r, j]];
            }
            weights.extend(row);
            bias.push(b[r]);
        }
        Some(LinearStage {
            weights: Cow::Owned(weights),
            bias: Cow::Owned(bias),
        })
    }

    fn stage_rows(&self) -> Option<usize> {
        Some(self.base.stage_rows()? + self.aux.sizes()[1])
    }

    fn predict_from_stage(&self, stage: &[f64], out: &mut [f64]) {
        let n_aux = self.aux.sizes()[1];
        let (base_stage, aux_stage) = stage.split_at(stage.len() - n_aux);
        let mut base = vec![0.0; out.len()];
        self.base.predict_from_stage(base_stage, &mut base);
        let mut pre = aux_stage.to_vec();
        if self.input_mode.score {
            let (w, _) = self.aux.layer(0);
            for (r, p) in pre.iter_mut().enumerate() {
                for (j, s) in base[1..].iter().enumerate() {
                    *p += w[[r, j]] * s;
                }
            }
        }
        let mut d = vec![0.0; self.aux.n_outputs()];
        self.aux.logits_from_first_pre(&pre, &mut d);
        self.combine(&base, &d, out);
    }
}

impl Trainable for PerturbedModel {
    fn params(&self) -> &[f64] {
        self.aux.params()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.aux.params_mut()
    }

    fn n_free_logits(&self) -> usize {
        self.aux.n_outputs()
    }

    fn forward_train(&self, x: ArrayView2<'_, f64>, base: Option<ArrayView2<'_, f64>>) -> TrainCache {
        let n = x.nrows();
        let k = self.n_classes();
        let base: Array2<f64> = match base {
            Some(b) => b.to_owned(),
            None => {
                let mut b = Array2::zeros((n, k));
                for (mut o, r) in b.rows_mut().into_iter().zip(x.rows()) {
                    let row = r.to_vec();
                    self.base.predict_into(&row, o.as_slice_mut().expect("contiguous"));
                }
                b
            }
        };
        let mut inputs = Array2::zeros((n, self.aux.input_width()));
        let mut zb = Array2::zeros((n, k - 1));
        let mut buf = Vec::new();
        for i in 0..n {
            let brow = base.row(i).to_vec();
            let xrow = x.row(i).to_vec();
            self.write_aux_input(&brow, &xrow, &mut buf);
            inputs.row_mut(i).iter_mut().zip(&buf).for_each(|(o, v)| *o = *v);
            clamped_pinned_logits_into(&brow, zb.row_mut(i).as_slice_mut().expect("contiguous"));
        }
        let inner = self.aux.forward_batch(inputs.view());
        let logits = inner.logits() + &zb;
        TrainCache { logits, inner }
    }

    fn backward_train(&self, cache: &TrainCache, dlogits: ArrayView2<'_, f64>, grad: &mut [f64]) {
        self.aux.backward_batch(&cache.inner, dlogits, grad);
    }
}
