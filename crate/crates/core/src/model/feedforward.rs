use std::borrow::Cow;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::activation::head_into;
use super::loss::{TrainCache, Trainable};
use super::{LinearStage, Mlp, Predictor};

/// An [`Mlp`] reading a subset of the encoded columns.
///
/// Excluding the protected attribute from the model input is done by
/// leaving its columns out of `input_columns`; the dataset keeps them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedForward {
    pub name: String,
    pub mlp: Mlp,
    pub input_columns: Vec<usize>,
    pub input_width: usize,
}

impl FeedForward {
    pub fn new(name: impl Into<String>, input_width: usize, input_columns: Vec<usize>, hidden: &[usize], n_classes: usize, seed: u64) -> Self {
        let mlp = Mlp::new(input_columns.len(), hidden, n_classes - 1, seed);
        FeedForward {
            name: name.into(),
            mlp,
            input_columns,
            input_width,
        }
    }

    /// Network over every encoded column.
    pub fn full(name: impl Into<String>, input_width: usize, hidden: &[usize], n_classes: usize, seed: u64) -> Self {
        Self::new(name, input_width, (0..input_width).collect(), hidden, n_classes, seed)
    }

    pub fn gather(&self, x: &[f64]) -> Vec<f64> {
        self.input_columns.iter().map(|&c| x[c]).collect()
    }

    pub(crate) fn gather_batch(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros((x.nrows(), self.input_columns.len()));
        for (mut o, r) in out.rows_mut().into_iter().zip(x.rows()) {
            for (ov, &c) in o.iter_mut().zip(&self.input_columns) {
                *ov = r[c];
            }
        }
        out
    }

    pub fn logits_into(&self, x: &[f64], z: &mut [f64]) {
        self.mlp.logits_into(&self.gather(x), z);
    }
}

impl Predictor for FeedForward {
    fn n_classes(&self) -> usize {
        self.mlp.n_classes()
    }

    fn input_width(&self) -> usize {
        self.input_width
    }

    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        let mut z = vec![0.0; self.mlp.n_outputs()];
        self.logits_into(x, &mut z);
        head_into(&z, out);
    }

    fn name(&self) -> String {
        self.name.clone()
    }

    fn trainable(&self) -> bool {
        true
    }

    fn linear_stage(&self) -> Option<LinearStage<'_>> {
        let (w, b) = self.mlp.layer(0);
        let d = self.input_width;
        let mut weights = vec![0.0; w.nrows() * d];
        for r in 0..w.nrows() {
            for (j, &c) in self.input_columns.iter().enumerate() {
                weights[r * d + c] = w[[r, j]];
            }
        }
        Some(LinearStage {
            weights: Cow::Owned(weights),
            bias: Cow::Borrowed(b),
        })
    }

    fn stage_rows(&self) -> Option<usize> {
        Some(self.mlp.sizes()[1])
    }

    fn predict_from_stage(&self, stage: &[f64], out: &mut [f64]) {
        let m = self.mlp.n_outputs();
        if m <= 8 {
            let mut z = [0.0; 8];
            self.mlp.logits_from_first_pre(stage, &mut z[..m]);
            head_into(&z[..m], out);
        } else {
            let mut z = vec![0.0; m];
            self.mlp.logits_from_first_pre(stage, &mut z);
            head_into(&z, out);
        }
    }
}

impl Trainable for FeedForward {
    fn params(&self) -> &[f64] {
        self.mlp.params()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.mlp.params_mut()
    }

    fn n_free_logits(&self) -> usize {
        self.mlp.n_outputs()
    }

    fn forward_train(&self, x: ArrayView2<'_, f64>, _base: Option<ArrayView2<'_, f64>>) -> TrainCache {
        let cache = self.mlp.forward_batch(self.gather_batch(x).view());
        TrainCache {
            logits: cache.logits().clone(),
            inner: cache,
        }
    }

    fn backward_train(&self, cache: &TrainCache, dlogits: ArrayView2<'_, f64>, grad: &mut [f64]) {
        self.mlp.backward_batch(&cache.inner, dlogits, grad);
    }
}
