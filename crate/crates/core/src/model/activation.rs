//! Output heads and the logit-scale maps used by perturbed models.

use crate::error::{Error, Result};

/// Base scores are clamped to this band before taking logits.
pub const PROB_CLAMP: f64 = 1e-7;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Inverse sigmoid of a clamped probability.
pub fn logit(p: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    (p / (1.0 - p)).ln()
}

pub fn softmax_into(z: &[f64], out: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    softmax_into(z, &mut out);
    out
}

/// Log-ratio coordinates with the first logit pinned to zero:
/// `l(s)_i = ln s_i - ln s_1`. Right-inverse of softmax on the simplex.
pub fn pinned_log(s: &[f64]) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Err(Error::InvalidProbability("empty vector".into()));
    }
    if let Some(v) = s.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidProbability(format!("component {v} is not positive")));
    }
    let l0 = s[0].ln();
    Ok(s.iter().map(|v| v.ln() - l0).collect())
}

/// Pinned logits of a base score vector after clamping each component to
/// `[PROB_CLAMP, 1 - PROB_CLAMP]` and renormalizing. Only the free
/// coordinates `1..k` are written.
pub fn clamped_pinned_logits_into(s: &[f64], out: &mut [f64]) {
    debug_assert_eq!(out.len() + 1, s.len());
    if s.len() == 2 {
        out[0] = logit(s[1]);
        return;
    }
    let c0 = s[0].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln();
    for (o, &v) in out.iter_mut().zip(&s[1..]) {
        *o = v.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln() - c0;
    }
}

/// Class probabilities from free logits: sigmoid for one logit, otherwise
/// softmax with a zero first logit. The two agree when `k = 2`.
pub fn head_into(free: &[f64], out: &mut [f64]) {
    debug_assert_eq!(out.len(), free.len() + 1);
    if free.len() == 1 {
        let p = sigmoid(free[0]);
        out[0] = 1.0 - p;
        out[1] = p;
    } else {
        pinned_softmax_into(free, out);
    }
}

/// `softmax((0, free))`, the general pinned head.
pub fn pinned_softmax_into(free: &[f64], out: &mut [f64]) {
    let m = free.iter().copied().fold(0.0f64, f64::max);
    out[0] = (-m).exp();
    let mut s = out[0];
    for (o, &v) in out[1..].iter_mut().zip(free) {
        *o = (v - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

/// Cross-entropy `-ln p_y` of the pinned head, computed in log space.
pub fn pinned_cross_entropy(free: &[f64], y: usize) -> f64 {
    let m = free.iter().copied().fold(0.0f64, f64::max);
    let lse = m + ((-m).exp() + free.iter().map(|v| (v - m).exp()).sum::<f64>()).ln();
    let zy = if y == 0 { 0.0 } else { free[y - 1] };
    lse - zy
}

/// Back-propagates `dL/dp` through the pinned head to the free logits.
pub fn head_backward(probs: &[f64], dprobs: &[f64], dfree: &mut [f64]) {
    let inner: f64 = probs.iter().zip(dprobs).map(|(p, g)| p * g).sum();
    for (j, d) in dfree.iter_mut().enumerate() {
        *d = probs[j + 1] * (dprobs[j + 1] - inner);
    }
}
