//! Fully connected ReLU network with a flat parameter vector and
//! hand-derived back-propagation.

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::activation::head_into;
use crate::error::{Error, Result};

/// ReLU that keeps NaN visible instead of clamping it to zero.
fn relu(v: f64) -> f64 {
    if v < 0.0 {
        0.0
    } else {
        v
    }
}

/// Weights are stored per layer as an `out x in` row-major matrix followed by
/// the `out` biases. The final layer emits free logits; class probabilities
/// come from the pinned head (sigmoid for a single logit).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
    seed: u64,
}

/// Activations kept from a batch forward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    /// `acts[0]` is the input batch, `acts[l]` the post-ReLU output of layer l.
    acts: Vec<Array2<f64>>,
    /// Pre-activations of every layer; the last one holds the logits.
    pre: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn logits(&self) -> &Array2<f64> {
        self.pre.last().expect("at least one layer")
    }
}

impl Mlp {
    /// He-style uniform fan-in initialization, zero biases.
    pub fn new(input: usize, hidden: &[usize], outputs: usize, seed: u64) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(outputs);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bound = (6.0 / fan_in.max(1) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)));
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Mlp { sizes, params, seed }
    }

    pub fn zeros(input: usize, hidden: &[usize], outputs: usize) -> Self {
        let mut m = Mlp::new(input, hidden, outputs, 0);
        m.params.iter_mut().for_each(|p| *p = 0.0);
        m
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.sizes.last().expect("non-empty sizes")
    }

    /// Number of classes produced by the pinned head.
    pub fn n_classes(&self) -> usize {
        self.n_outputs() + 1
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn offset(&self, layer: usize) -> usize {
        (0..layer).map(|l| self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1]).sum()
    }

    /// `(weights out x in, biases)` of one layer.
    pub fn layer(&self, layer: usize) -> (ArrayView2<'_, f64>, &[f64]) {
        let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.offset(layer);
        let w = ArrayView2::from_shape((n_out, n_in), &self.params[off..off + n_in * n_out]).expect("layer shape");
        (w, &self.params[off + n_in * n_out..off + n_in * n_out + n_out])
    }

    /// Zeroes the final layer so the network starts as the zero map.
    pub fn zero_output_layer(&mut self) {
        let last = self.n_layers() - 1;
        let off = self.offset(last);
        let len = self.sizes[last] * self.sizes[last + 1] + self.sizes[last + 1];
        self.params[off..off + len].iter_mut().for_each(|p| *p = 0.0);
    }

    /// Runs layers `from..` on an activation vector, writing the logits.
    /// `h` must already be the (post-ReLU when `from > 0`) input of `from`.
    pub(crate) fn forward_from(&self, from: usize, h: &[f64], logits: &mut [f64]) {
        let mut cur = h.to_vec();
        for l in from..self.n_layers() {
            let (w, b) = self.layer(l);
            let last = l + 1 == self.n_layers();
            let mut next = b.to_vec();
            for (r, nv) in next.iter_mut().enumerate() {
                let row = w.row(r);
                let row = row.as_slice().expect("contiguous row");
                let mut acc = 0.0;
                for (wv, hv) in row.iter().zip(&cur) {
                    acc += wv * hv;
                }
                *nv += acc;
                if !last && *nv < 0.0 {
                    *nv = 0.0;
                }
            }
            cur = next;
        }
        logits.copy_from_slice(&cur);
    }

    /// Finishes a forward pass from layer-0 pre-activations.
    pub(crate) fn logits_from_first_pre(&self, pre: &[f64], logits: &mut [f64]) {
        if self.n_layers() == 1 {
            logits.copy_from_slice(pre);
            return;
        }
        if self.n_layers() == 2 {
            let (w, b) = self.layer(1);
            for (r, z) in logits.iter_mut().enumerate() {
                let row = w.row(r);
                let row = row.as_slice().expect("contiguous row");
                // Four independent partial sums keep the adds pipelined.
                let mut acc = [0.0; 4];
                let (wc, pc) = (row.chunks_exact(4), pre.chunks_exact(4));
                let (wr, pr) = (wc.remainder(), pc.remainder());
                for (w4, p4) in wc.zip(pc) {
                    for j in 0..4 {
                        acc[j] += w4[j] * relu(p4[j]);
                    }
                }
                let mut tail = 0.0;
                for (wv, pv) in wr.iter().zip(pr) {
                    tail += wv * relu(*pv);
                }
                *z = b[r] + ((acc[0] + acc[1]) + (acc[2] + acc[3]) + tail);
            }
            return;
        }
        let h: Vec<f64> = pre.iter().map(|&v| relu(v)).collect();
        self.forward_from(1, &h, logits);
    }

    /// Free logits for one input row (unchecked).
    pub fn logits_into(&self, x: &[f64], logits: &mut [f64]) {
        self.forward_from(0, x, logits);
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_width() {
            return Err(Error::DimensionMismatch {
                expected: self.input_width(),
                got: x.len(),
            });
        }
        let mut z = vec![0.0; self.n_outputs()];
        self.logits_into(x, &mut z);
        if let Some(v) = z.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("network activation {v}")));
        }
        Ok(z)
    }

    /// Class probabilities for one row.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.logits(x)?;
        let mut p = vec![0.0; self.n_classes()];
        head_into(&z, &mut p);
        Ok(p)
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> MlpCache {
        let mut acts = vec![x.to_owned()];
        let mut pre = Vec::with_capacity(self.n_layers());
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(l);
            let mut z = acts[l].dot(&w.t());
            for mut row in z.rows_mut() {
                for (v, bv) in row.iter_mut().zip(b) {
                    *v += bv;
                }
            }
            if l + 1 < self.n_layers() {
                acts.push(z.mapv(relu));
            }
            pre.push(z);
        }
        MlpCache { acts, pre }
    }

    /// Accumulates `dL/dparams` into `grad` given `dL/dlogits`, returning
    /// `dL/dinput`.
    pub fn backward_batch(&self, cache: &MlpCache, dlogits: ArrayView2<'_, f64>, grad: &mut [f64]) -> Array2<f64> {
        debug_assert_eq!(grad.len(), self.params.len());
        let mut delta = dlogits.to_owned();
        for l in (0..self.n_layers()).rev() {
            let (w, _) = self.layer(l);
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offset(l);
            let gw = delta.t().dot(&cache.acts[l]);
            for (g, v) in grad[off..off + n_in * n_out].iter_mut().zip(gw.iter()) {
                *g += v;
            }
            let gb = delta.sum_axis(Axis(0));
            for (g, v) in grad[off + n_in * n_out..off + n_in * n_out + n_out].iter_mut().zip(gb.iter()) {
                *g += v;
            }
            let mut dinput = delta.dot(&w);
            if l > 0 {
                let pre_prev = &cache.pre[l - 1];
                ndarray::Zip::from(&mut dinput).and(pre_prev).for_each(|d, &p| {
                    if p <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = dinput;
        }
        delta
    }

    /// Gradient of a squared error on the raw first logit, for one row.
    /// Only meaningful as a calculus check on single-unit networks.
    pub fn squared_error_gradient(&self, x: &[f64], target: f64) -> Vec<f64> {
        let xb = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row");
        let cache = self.forward_batch(xb.view());
        let z = cache.logits()[[0, 0]];
        let mut d = Array2::zeros((1, self.n_outputs()));
        d[[0, 0]] = 2.0 * (z - target);
        let mut g = vec![0.0; self.params.len()];
        self.backward_batch(&cache, d.view(), &mut g);
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_outputs() {
        let m = Mlp::zeros(4, &[3], 1);
        assert_eq!(m.forward(&[1.0, -2.0, 0.5, 3.0]).unwrap(), vec![0.5, 0.5]);
        let m3 = Mlp::zeros(4, &[3], 2);
        for p in m3.forward(&[1.0, -2.0, 0.5, 3.0]).unwrap() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let m = Mlp::new(3, &[4], 1, 1);
        assert!(matches!(m.forward(&[1.0]), Err(Error::DimensionMismatch { expected: 3, got: 1 })));
    }

    #[test]
    fn exploded_parameters_are_reported() {
        let mut m = Mlp::new(2, &[], 1, 1);
        m.params_mut()[0] = f64::INFINITY;
        m.params_mut()[1] = f64::NEG_INFINITY;
        assert!(matches!(m.forward(&[1.0, 1.0]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn single_linear_unit_squared_error() {
        let mut m = Mlp::new(3, &[], 1, 7);
        m.params_mut().copy_from_slice(&[0.5, -1.0, 2.0, 0.25]);
        let x = [1.0, 2.0, -0.5];
        let yhat = 0.5 - 2.0 - 1.0 + 0.25;
        let g = m.squared_error_gradient(&x, 1.0);
        let expect: Vec<f64> = x.iter().map(|v| 2.0 * (yhat - 1.0) * v).chain([2.0 * (yhat - 1.0)]).collect();
        for (a, b) in g.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_and_row_forward_agree() {
        let m = Mlp::new(5, &[7, 4], 2, 3);
        let x: Vec<f64> = (0..15).map(|i| (i as f64 * 0.37).sin()).collect();
        let cache = m.forward_batch(ArrayView2::from_shape((3, 5), &x).unwrap());
        for r in 0..3 {
            let z = m.logits(&x[r * 5..(r + 1) * 5]).unwrap();
            for j in 0..2 {
                assert!((z[j] - cache.logits()[[r, j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        assert_eq!(Mlp::new(6, &[5], 1, 11), Mlp::new(6, &[5], 1, 11));
        assert_ne!(Mlp::new(6, &[5], 1, 11).params(), Mlp::new(6, &[5], 1, 12).params());
    }
}
