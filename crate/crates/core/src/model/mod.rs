//! Predictors: the abstract classifier interface, the feedforward network,
//! and the perturbed composition of a frozen base with a trainable
//! logit-scale correction.

pub mod activation;
mod feedforward;
mod io;
pub mod loss;
mod mlp;
pub mod optim;
mod perturbed;

use std::borrow::Cow;
use std::sync::Arc;

pub use activation::{pinned_log, sigmoid, softmax};
pub use feedforward::FeedForward;
pub use io::{load_model, save_model, sha256_file, Model, MODEL_FORMAT_VERSION};
pub use loss::{backward, loss_value, Gradients, LabeledBatch, LossSpec, Trainable};
pub use mlp::{Mlp, MlpCache};
pub use perturbed::{compose_perturbed, InputMode, PerturbedModel};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Affine map `A x + c` through which a predictor sees its input.
///
/// When a predictor depends on `x` only through such a map, coalition sweeps
/// can update the image incrementally as feature groups are swapped.
#[derive(Clone, Debug)]
pub struct LinearStage<'a> {
    /// `rows x input_width`, row-major.
    pub weights: Cow<'a, [f64]>,
    pub bias: Cow<'a, [f64]>,
}

impl LinearStage<'_> {
    pub fn rows(&self) -> usize {
        self.bias.len()
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.weights[r * d..(r + 1) * d];
            *o = self.bias[r] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

/// A classifier returning a class-probability vector for an encoded row.
///
/// Implementations must be deterministic. Linear combinations of
/// predictors (see [`Difference`]) may return vectors outside the simplex.
pub trait Predictor: Send + Sync {
    fn n_classes(&self) -> usize;

    fn input_width(&self) -> usize;

    /// Writes the output vector for one row. `x.len()` must equal
    /// `input_width()`.
    fn predict_into(&self, x: &[f64], out: &mut [f64]);

    fn name(&self) -> String {
        "predictor".to_string()
    }

    fn trainable(&self) -> bool {
        false
    }

    /// Whether outputs are probabilities of a randomized decision rule
    /// rather than scores to be thresholded.
    fn is_randomized(&self) -> bool {
        false
    }

    fn linear_stage(&self) -> Option<LinearStage<'_>> {
        None
    }

    /// Output from the image of [`Predictor::linear_stage`].
    fn predict_from_stage(&self, _stage: &[f64], _out: &mut [f64]) {
        unreachable!("predictor has no linear stage")
    }

    /// Length of the [`Predictor::linear_stage`] image, if there is one.
    fn stage_rows(&self) -> Option<usize> {
        self.linear_stage().map(|s| s.rows())
    }
}

impl<P: Predictor + ?Sized> Predictor for Arc<P> {
    fn n_classes(&self) -> usize {
        (**self).n_classes()
    }
    fn input_width(&self) -> usize {
        (**self).input_width()
    }
    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        (**self).predict_into(x, out)
    }
    fn name(&self) -> String {
        (**self).name()
    }
    fn trainable(&self) -> bool {
        (**self).trainable()
    }
    fn is_randomized(&self) -> bool {
        (**self).is_randomized()
    }
    fn linear_stage(&self) -> Option<LinearStage<'_>> {
        (**self).linear_stage()
    }
    fn predict_from_stage(&self, stage: &[f64], out: &mut [f64]) {
        (**self).predict_from_stage(stage, out)
    }
    fn stage_rows(&self) -> Option<usize> {
        (**self).stage_rows()
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn n_classes(&self) -> usize {
        (**self).n_classes()
    }
    fn input_width(&self) -> usize {
        (**self).input_width()
    }
    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        (**self).predict_into(x, out)
    }
    fn name(&self) -> String {
        (**self).name()
    }
    fn trainable(&self) -> bool {
        (**self).trainable()
    }
    fn is_randomized(&self) -> bool {
        (**self).is_randomized()
    }
    fn linear_stage(&self) -> Option<LinearStage<'_>> {
        (**self).linear_stage()
    }
    fn predict_from_stage(&self, stage: &[f64], out: &mut [f64]) {
        (**self).predict_from_stage(stage, out)
    }
    fn stage_rows(&self) -> Option<usize> {
        (**self).stage_rows()
    }
}

/// Checked single-row prediction.
pub fn predict_proba(p: &dyn Predictor, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != p.input_width() {
        return Err(Error::DimensionMismatch {
            expected: p.input_width(),
            got: x.len(),
        });
    }
    let mut out = vec![0.0; p.n_classes()];
    p.predict_into(x, &mut out);
    if let Some(v) = out.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{} output {v}", p.name())));
    }
    Ok(out)
}

/// Outputs for `rows` of `ds`, row-major `rows.len() x k`.
pub fn predict_rows(p: &dyn Predictor, ds: &Dataset, rows: &[usize]) -> Vec<f64> {
    let k = p.n_classes();
    let mut out = vec![0.0; rows.len() * k];
    for (o, &i) in out.chunks_mut(k).zip(rows) {
        p.predict_into(ds.row(i), o);
    }
    out
}

/// Predicts the same probability vector everywhere.
#[derive(Clone, Debug, PartialEq)]
pub struct Constant {
    pub probs: Vec<f64>,
    pub width: usize,
}

impl Constant {
    pub fn binary(p1: f64, width: usize) -> Self {
        Constant {
            probs: vec![1.0 - p1, p1],
            width,
        }
    }
}

impl Predictor for Constant {
    fn n_classes(&self) -> usize {
        self.probs.len()
    }
    fn input_width(&self) -> usize {
        self.width
    }
    fn predict_into(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.probs);
    }
    fn name(&self) -> String {
        "constant".into()
    }
}

/// Both operands' stages, `lhs` rows first.
fn stacked_stage<L: Predictor, R: Predictor>(lhs: &L, rhs: &R) -> Option<LinearStage<'static>> {
    let (a, b) = (lhs.linear_stage()?, rhs.linear_stage()?);
    let mut weights = a.weights.into_owned();
    weights.extend_from_slice(&b.weights);
    let mut bias = a.bias.into_owned();
    bias.extend_from_slice(&b.bias);
    Some(LinearStage {
        weights: Cow::Owned(weights),
        bias: Cow::Owned(bias),
    })
}

/// Pointwise `lhs - rhs`, e.g. the perturbation of a corrected model.
pub struct Difference<L, R> {
    pub lhs: L,
    pub rhs: R,
}

impl<L: Predictor, R: Predictor> Predictor for Difference<L, R> {
    fn n_classes(&self) -> usize {
        self.lhs.n_classes()
    }
    fn input_width(&self) -> usize {
        self.lhs.input_width()
    }
    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; out.len()];
        self.lhs.predict_into(x, out);
        self.rhs.predict_into(x, &mut tmp);
        for (o, t) in out.iter_mut().zip(&tmp) {
            *o -= t;
        }
    }
    fn linear_stage(&self) -> Option<LinearStage<'_>> {
        stacked_stage(&self.lhs, &self.rhs)
    }
    fn predict_from_stage(&self, stage: &[f64], out: &mut [f64]) {
        let (l, r) = stage.split_at(self.lhs.stage_rows().expect("stage of a staged predictor"));
        let mut tmp = vec![0.0; out.len()];
        self.lhs.predict_from_stage(l, out);
        self.rhs.predict_from_stage(r, &mut tmp);
        for (o, t) in out.iter_mut().zip(&tmp) {
            *o -= t;
        }
    }
    fn stage_rows(&self) -> Option<usize> {
        Some(self.lhs.stage_rows()? + self.rhs.stage_rows()?)
    }
    fn name(&self) -> String {
        format!("{} - {}", self.lhs.name(), self.rhs.name())
    }
}

/// Pointwise `lhs + rhs`.
pub struct Sum<L, R> {
    pub lhs: L,
    pub rhs: R,
}

impl<L: Predictor, R: Predictor> Predictor for Sum<L, R> {
    fn n_classes(&self) -> usize {
        self.lhs.n_classes()
    }
    fn input_width(&self) -> usize {
        self.lhs.input_width()
    }
    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; out.len()];
        self.lhs.predict_into(x, out);
        self.rhs.predict_into(x, &mut tmp);
        for (o, t) in out.iter_mut().zip(&tmp) {
            *o += t;
        }
    }
    fn linear_stage(&self) -> Option<LinearStage<'_>> {
        stacked_stage(&self.lhs, &self.rhs)
    }
    fn predict_from_stage(&self, stage: &[f64], out: &mut [f64]) {
        let (l, r) = stage.split_at(self.lhs.stage_rows().expect("stage of a staged predictor"));
        let mut tmp = vec![0.0; out.len()];
        self.lhs.predict_from_stage(l, out);
        self.rhs.predict_from_stage(r, &mut tmp);
        for (o, t) in out.iter_mut().zip(&tmp) {
            *o += t;
        }
    }
    fn stage_rows(&self) -> Option<usize> {
        Some(self.lhs.stage_rows()? + self.rhs.stage_rows()?)
    }
    fn name(&self) -> String {
        format!("{} + {}", self.lhs.name(), self.rhs.name())
    }
}
