//! Small seeded tabular generators for fixtures, demos and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{assign_splits, Dataset, RawFeature, RawValue, Split, TableBuilder};

const SPLITS: [(Split, f64); 3] = [(Split::Train, 0.6), (Split::Validation, 0.2), (Split::Test, 0.2)];

fn sex(a: u8) -> RawValue {
    RawValue::cat(if a == 0 { "f" } else { "m" })
}

fn protected() -> RawFeature {
    RawFeature::categorical("sex", Some(vec!["f".into(), "m".into()])).protected()
}

/// Five features with a proxy of the protected attribute:
/// `sex` (protected), `proxy`, `skill`, `region` (3 levels) and `noise`.
pub fn biased(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = TableBuilder::new("synthetic-biased", 2);
    b.feature(protected())
        .feature(RawFeature::continuous("proxy"))
        .feature(RawFeature::continuous("skill"))
        .feature(RawFeature::categorical("region", Some(vec!["east".into(), "north".into(), "west".into()])))
        .feature(RawFeature::continuous("noise"));
    for i in 0..n {
        let a = u8::from(rng.gen_bool(0.55));
        let proxy = 1.2 * f64::from(a) + rng.sample::<f64, _>(StandardNormal);
        let skill: f64 = rng.sample(StandardNormal);
        let region = (i + rng.gen_range(0..3)) % 3;
        let noise: f64 = rng.sample(StandardNormal);
        let logit = 1.3 * skill + 0.9 * proxy + 0.6 * f64::from(a) + [0.4, 0.0, -0.4][region] - 1.0;
        let y = usize::from(rng.gen::<f64>() < 1.0 / (1.0 + (-2.0 * logit).exp()));
        b.push(
            vec![
                sex(a),
                RawValue::Num(proxy),
                RawValue::Num(skill),
                RawValue::cat(["east", "north", "west"][region]),
                RawValue::Num(noise),
            ],
            y,
            Split::Train,
        );
    }
    b.set_splits(assign_splits(n, &SPLITS, seed));
    b.build().expect("synthetic table is well formed")
}

/// Protected attribute equal to an input (`sex`) plus one informative
/// feature (`score`) independent of it. The label depends on both.
pub fn protected_shortcut(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = TableBuilder::new("synthetic-shortcut", 2);
    b.feature(protected()).feature(RawFeature::continuous("score"));
    for _ in 0..n {
        let a = u8::from(rng.gen_bool(0.5));
        let score: f64 = rng.sample(StandardNormal);
        let logit = 2.5 * score + 2.0 * (f64::from(a) - 0.5);
        let y = usize::from(rng.gen::<f64>() < 1.0 / (1.0 + (-logit).exp()));
        b.push(vec![sex(a), RawValue::Num(score)], y, Split::Train);
    }
    b.set_splits(assign_splits(n, &SPLITS, seed));
    b.build().expect("synthetic table is well formed")
}

/// Two continuous features with a linearly separable label (margin 0.2).
pub fn separable(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = TableBuilder::new("synthetic-separable", 2);
    b.feature(protected())
        .feature(RawFeature::continuous("u"))
        .feature(RawFeature::continuous("v"));
    let mut pushed = 0;
    while pushed < n {
        let u: f64 = rng.gen_range(-2.0..2.0);
        let v: f64 = rng.gen_range(-2.0..2.0);
        let margin = u + 0.5 * v;
        if margin.abs() < 0.2 {
            continue;
        }
        let a = u8::from(rng.gen_bool(0.5));
        b.push(vec![sex(a), RawValue::Num(u), RawValue::Num(v)], usize::from(margin > 0.0), Split::Train);
        pushed += 1;
    }
    b.set_splits(assign_splits(n, &SPLITS, seed));
    b.build().expect("synthetic table is well formed")
}

/// Exactly half the rows have a = 0; one continuous feature.
pub fn balanced(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = TableBuilder::new("synthetic-balanced", 2);
    b.feature(protected()).feature(RawFeature::continuous("z"));
    for i in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        b.push(vec![sex((i % 2) as u8), RawValue::Num(z)], usize::from(z > 0.0), Split::Train);
    }
    b.set_splits(assign_splits(n, &SPLITS, seed));
    b.build().expect("synthetic table is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(biased(80, 4), biased(80, 4));
        assert_ne!(biased(80, 4).x(), biased(80, 5).x());
    }

    #[test]
    fn biased_has_five_players_and_all_splits() {
        let ds = biased(200, 1);
        assert_eq!(ds.n_players(), 5);
        for s in [Split::Train, Split::Validation, Split::Test] {
            assert!(!ds.rows(s).is_empty());
        }
    }
}
