//! The aggregated coalition game
//! `V(S) = mean_x coef(x) * mean_x' f_t(x)(x_S ⊔ x'_rest)`.
//!
//! Spliced points are evaluated either directly or, when the predictor
//! exposes an affine first stage, by adding per-group image differences to
//! the background image. Group differences are always added in ascending
//! group order, so a group whose difference is exactly zero leaves every
//! coalition value bit-identical.

use crate::model::Predictor;

/// One aggregation row: its encoded features, weight and explained class.
pub(crate) struct Term<'a> {
    pub x: &'a [f64],
    pub coef: f64,
    pub target: usize,
}

pub(crate) struct Game<'a> {
    pub predictor: &'a dyn Predictor,
    pub groups: &'a [Vec<usize>],
    pub terms: Vec<Term<'a>>,
    /// Background rows, `n_background x width` row-major.
    pub background: &'a [f64],
    pub width: usize,
}

/// Iterates the groups of `mask` in ascending order.
fn members(mask: u64) -> impl Iterator<Item = usize> {
    let mut m = mask;
    std::iter::from_fn(move || {
        if m == 0 {
            return None;
        }
        let g = m.trailing_zeros() as usize;
        m &= m - 1;
        Some(g)
    })
}

impl Game<'_> {
    pub fn n_players(&self) -> usize {
        self.groups.len()
    }

    fn n_background(&self) -> usize {
        self.background.len() / self.width
    }

    /// `V` for every mask in `masks`.
    pub fn values(&self, masks: &[u64]) -> Vec<f64> {
        self.evaluate(Masks::List(masks))
    }

    /// `V` for all `2^n` masks, indexed by mask.
    pub fn all_values(&self) -> Vec<f64> {
        self.evaluate(Masks::All(1usize << self.n_players()))
    }

    fn evaluate(&self, masks: Masks<'_>) -> Vec<f64> {
        let len = masks.len();
        let mut v = vec![0.0; len];
        if self.terms.is_empty() || self.background.is_empty() {
            return v;
        }
        let mut row_acc = vec![0.0; len];
        match self.predictor.linear_stage() {
            Some(stage) => {
                let h = stage.rows();
                let lin = Linear {
                    weights: &stage.weights,
                    groups: self.groups,
                    width: self.width,
                    h,
                };
                let bg_images: Vec<Vec<f64>> = self.background.chunks(self.width).map(|r| lin.group_images(r)).collect();
                let bg_base: Vec<Vec<f64>> = self
                    .background
                    .chunks(self.width)
                    .map(|r| {
                        let mut out = vec![0.0; h];
                        stage.apply(r, &mut out);
                        out
                    })
                    .collect();
                let mut scratch = LinearScratch::new(self.n_players(), h, &masks, self.predictor.n_classes());
                for t in &self.terms {
                    row_acc.iter_mut().for_each(|a| *a = 0.0);
                    let images = lin.group_images(t.x);
                    for (bi, bb) in bg_images.iter().zip(&bg_base) {
                        scratch.accumulate(self.predictor, &images, bi, bb, h, t.target, &masks, &mut row_acc);
                    }
                    self.fold(t.coef, &row_acc, &mut v);
                }
            }
            None => {
                let k = self.predictor.n_classes();
                let mut spliced = vec![0.0; self.width];
                let mut out = vec![0.0; k];
                for t in &self.terms {
                    row_acc.iter_mut().for_each(|a| *a = 0.0);
                    for bg in self.background.chunks(self.width) {
                        for (j, mask) in masks.iter().enumerate() {
                            spliced.copy_from_slice(bg);
                            for g in members(mask) {
                                for &c in &self.groups[g] {
                                    spliced[c] = t.x[c];
                                }
                            }
                            self.predictor.predict_into(&spliced, &mut out);
                            row_acc[j] += out[t.target];
                        }
                    }
                    self.fold(t.coef, &row_acc, &mut v);
                }
            }
        }
        let r = self.terms.len() as f64;
        v.iter_mut().for_each(|x| *x /= r);
        v
    }

    fn fold(&self, coef: f64, row_acc: &[f64], v: &mut [f64]) {
        let b = self.n_background() as f64;
        for (vv, a) in v.iter_mut().zip(row_acc) {
            *vv += coef * (a / b);
        }
    }
}

#[derive(Clone, Copy)]
enum Masks<'a> {
    /// Every mask below the given count.
    All(usize),
    List(&'a [u64]),
}

impl Masks<'_> {
    fn iter(&self) -> Box<dyn Iterator<Item = u64> + '_> {
        match *self {
            Masks::All(n) => Box::new(0..n as u64),
            Masks::List(m) => Box::new(m.iter().copied()),
        }
    }

    fn len(&self) -> usize {
        match self {
            Masks::All(n) => *n,
            Masks::List(m) => m.len(),
        }
    }
}

/// Column-grouped view of an affine stage.
struct Linear<'a> {
    weights: &'a [f64],
    groups: &'a [Vec<usize>],
    width: usize,
    h: usize,
}

impl Linear<'_> {

    /// Per group, `A[:, cols] x[cols]`, flattened `n_groups x h`.
    fn group_images(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.groups.len() * self.h];
        for (g, cols) in self.groups.iter().enumerate() {
            let o = &mut out[g * self.h..(g + 1) * self.h];
            for (r, ov) in o.iter_mut().enumerate() {
                let row = &self.weights[r * self.width..(r + 1) * self.width];
                *ov = cols.iter().map(|&c| row[c] * x[c]).sum();
            }
        }
        out
    }
}

struct LinearScratch {
    diffs: Vec<f64>,
    pre: Vec<f64>,
    out: Vec<f64>,
    n: usize,
}

impl LinearScratch {
    fn new(n: usize, h: usize, masks: &Masks<'_>, k: usize) -> Self {
        let pre_len = match masks {
            Masks::All(count) => count * h,
            Masks::List(_) => h,
        };
        LinearScratch {
            diffs: vec![0.0; n * h],
            pre: vec![0.0; pre_len],
            out: vec![0.0; k],
            n,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn accumulate(
        &mut self,
        predictor: &dyn Predictor,
        x_images: &[f64],
        bg_images: &[f64],
        bg_base: &[f64],
        h: usize,
        target: usize,
        masks: &Masks<'_>,
        acc: &mut [f64],
    ) {
        for (d, (a, b)) in self.diffs.iter_mut().zip(x_images.iter().zip(bg_images)) {
            *d = a - b;
        }
        match masks {
            Masks::All(_) => {
                // pre[m] = pre[m without its top group] + diff[top], so each
                // coalition's image is built in ascending group order.
                self.pre[..h].copy_from_slice(bg_base);
                predictor.predict_from_stage(&self.pre[..h], &mut self.out);
                acc[0] += self.out[target];
                for m in 1usize..(1 << self.n) {
                    let top = usize::BITS as usize - 1 - m.leading_zeros() as usize;
                    let prev = m ^ (1 << top);
                    let (lo, hi) = self.pre.split_at_mut(m * h);
                    let src = &lo[prev * h..(prev + 1) * h];
                    let d = &self.diffs[top * h..(top + 1) * h];
                    let cur = &mut hi[..h];
                    for ((p, s), dv) in cur.iter_mut().zip(src).zip(d) {
                        *p = s + dv;
                    }
                    predictor.predict_from_stage(cur, &mut self.out);
                    acc[m] += self.out[target];
                }
            }
            Masks::List(list) => {
                for (j, &mask) in list.iter().enumerate() {
                    self.pre[..h].copy_from_slice(bg_base);
                    for g in members(mask) {
                        let d = &self.diffs[g * h..(g + 1) * h];
                        for (p, dv) in self.pre[..h].iter_mut().zip(d) {
                            *p += dv;
                        }
                    }
                    predictor.predict_from_stage(&self.pre[..h], &mut self.out);
                    acc[j] += self.out[target];
                }
            }
        }
    }
}
