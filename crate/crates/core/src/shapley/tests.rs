use super::*;
use crate::dataset::{synthetic, RawFeature, RawValue, TableBuilder};
use crate::model::{Constant, Difference, FeedForward};

/// Hides any affine first stage so the generic splice path is used.
struct Opaque<'a>(&'a dyn Predictor);

impl Predictor for Opaque<'_> {
    fn n_classes(&self) -> usize {
        self.0.n_classes()
    }
    fn input_width(&self) -> usize {
        self.0.input_width()
    }
    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        self.0.predict_into(x, out)
    }
}

/// `sigmoid(w . x + b)` evaluated directly.
struct Logistic {
    w: Vec<f64>,
    b: f64,
}

impl Predictor for Logistic {
    fn n_classes(&self) -> usize {
        2
    }
    fn input_width(&self) -> usize {
        self.w.len()
    }
    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        let z: f64 = self.b + self.w.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        let p = 1.0 / (1.0 + (-z).exp());
        out[0] = 1.0 - p;
        out[1] = p;
    }
}

fn three_players() -> Dataset {
    synthetic::separable(60, 3)
}

fn all_rows(ds: &Dataset) -> Vec<usize> {
    (0..ds.n_rows()).collect()
}

fn spec(kind: ValueKind, ds: &Dataset, background: &[usize]) -> ValueFunctionSpec {
    ValueFunctionSpec::new(&ExplainSpec::new(kind), ds, &all_rows(ds), background).unwrap()
}

/// Independent oracle: splice group by group and average over the background.
fn naive_value(spec: &ValueFunctionSpec, p: &dyn Predictor, x: &[f64], coef: f64, target: usize, coalition: &[usize]) -> f64 {
    let mut total = 0.0;
    let mut out = vec![0.0; p.n_classes()];
    for bg in spec.background.chunks(spec.width) {
        let mut z = bg.to_vec();
        for &g in coalition {
            for &c in &spec.groups[g] {
                z[c] = x[c];
            }
        }
        p.predict_into(&z, &mut out);
        total += out[target];
    }
    coef * total / spec.n_background() as f64
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for (i, &head) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

#[test]
fn coalition_weights_sum_to_one_over_sizes() {
    for n in 1..10 {
        let w = coalition_weights(n);
        // sum over s of C(n-1, s) * w[s] = 1
        let mut binom = 1.0;
        let mut total = 0.0;
        for (s, ws) in w.iter().enumerate() {
            total += binom * ws;
            binom = binom * (n - 1 - s) as f64 / (s + 1) as f64;
        }
        assert!((total - 1.0).abs() < 1e-12, "n={n}");
    }
}

#[test]
fn constant_predictor_dp_value_is_scaled_constant() {
    let ds = three_players();
    let s = spec(ValueKind::Dp, &ds, &[0, 1, 2, 3]);
    let p0 = s.rates.as_ref().unwrap().cells[0].p[0];
    let c = Constant::binary(0.3, ds.n_cols());
    let i = (0..ds.n_rows()).find(|&i| ds.a()[i] == 0).unwrap();
    let side = SideInfo::of_row(&ds, i, &s);
    for coalition in [vec![], vec![1], vec![0, 2], vec![0, 1, 2]] {
        let v = value_function(&s, &c, ds.row(i), &side, &coalition).unwrap();
        assert!((v - 0.3 / p0).abs() < 1e-15);
    }
}

#[test]
fn full_coalition_evaluates_the_row_itself() {
    let ds = three_players();
    let f = FeedForward::full("f", ds.n_cols(), &[6], 2, 4);
    let s = spec(ValueKind::Accuracy, &ds, &[5, 9, 11]);
    let side = SideInfo::of_row(&ds, 7, &s);
    let v = value_function(&s, &f, ds.row(7), &side, &[0, 1, 2]).unwrap();
    let mut out = [0.0; 2];
    f.predict_into(ds.row(7), &mut out);
    assert!((v - out[ds.y()[7]]).abs() < 1e-14);
}

#[test]
fn value_function_matches_naive_splicing() {
    let ds = three_players();
    let f = FeedForward::full("f", ds.n_cols(), &[5], 2, 8);
    let s = spec(ValueKind::Dp, &ds, &[0, 4, 8, 12, 16]);
    let i = 21;
    let side = SideInfo::of_row(&ds, i, &s);
    let (coef, target) = s.coefficient(&side).unwrap();
    for coalition in [vec![1], vec![0, 2], vec![]] {
        let oracle = naive_value(&s, &f, ds.row(i), coef, target, &coalition);
        let fast = value_function(&s, &f, ds.row(i), &side, &coalition).unwrap();
        let generic = value_function(&s, &Opaque(&f), ds.row(i), &side, &coalition).unwrap();
        assert!((fast - oracle).abs() < 1e-12, "{coalition:?}: {fast} vs {oracle}");
        assert!((generic - oracle).abs() < 1e-12);
    }
}

#[test]
fn unknown_player_and_missing_side_info_are_errors() {
    let ds = three_players();
    let f = FeedForward::full("f", ds.n_cols(), &[5], 2, 8);
    let s = spec(ValueKind::Eo, &ds, &[0, 1]);
    let side = SideInfo::of_row(&ds, 0, &s);
    assert!(matches!(
        value_function(&s, &f, ds.row(0), &side, &[3]),
        Err(Error::UnknownPlayer { index: 3, players: 3 })
    ));
    let no_a = SideInfo { a: None, ..side };
    assert!(matches!(
        value_function(&s, &f, ds.row(0), &no_a, &[0]),
        Err(Error::MissingSideInfo { field: "a", .. })
    ));
}

#[test]
fn exact_matches_brute_force_permutation_average() {
    let ds = three_players();
    let f = FeedForward::full("f", ds.n_cols(), &[7], 2, 12);
    let s = spec(ValueKind::Accuracy, &ds, &[2, 3, 5, 7]);
    for i in [0, 13, 40] {
        let side = SideInfo::of_row(&ds, i, &s);
        let (coef, target) = s.coefficient(&side).unwrap();
        let orders = permutations(&[0, 1, 2]);
        let mut oracle = [0.0; 3];
        for o in &orders {
            let mut prefix = Vec::new();
            for &p in o {
                let before = naive_value(&s, &f, ds.row(i), coef, target, &prefix);
                prefix.push(p);
                let after = naive_value(&s, &f, ds.row(i), coef, target, &prefix);
                oracle[p] += (after - before) / orders.len() as f64;
            }
        }
        let phi = local_shapley_exact(&s, &f, ds.row(i), &side).unwrap();
        for (a, b) in phi.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12, "{phi:?} vs {oracle:?}");
        }
    }
}

#[test]
fn local_efficiency_for_every_kind() {
    let ds = synthetic::biased(120, 5);
    let f = FeedForward::full("f", ds.n_cols(), &[6], 2, 1);
    let bg: Vec<usize> = (0..20).collect();
    for explain in [
        ExplainSpec::new(ValueKind::Accuracy),
        ExplainSpec::new(ValueKind::Dp),
        ExplainSpec::new(ValueKind::Eo),
        ExplainSpec::cdp(&["region"]),
    ] {
        let s = ValueFunctionSpec::new(&explain, &ds, &all_rows(&ds), &bg).unwrap();
        for i in [0, 50, 99] {
            let side = SideInfo::of_row(&ds, i, &s);
            let phi = local_shapley_exact(&s, &f, ds.row(i), &side).unwrap();
            let full = value_function(&s, &f, ds.row(i), &side, &[0, 1, 2, 3, 4]).unwrap();
            let empty = value_function(&s, &f, ds.row(i), &side, &[]).unwrap();
            let gap = phi.iter().sum::<f64>() - (full - empty);
            assert!(gap.abs() < 1e-10, "{}: {gap}", explain.kind);
        }
    }
}

#[test]
fn constant_predictor_gets_zero_attributions() {
    let ds = three_players();
    let c = Constant::binary(0.7, ds.n_cols());
    let s = spec(ValueKind::Dp, &ds, &[0, 1, 2]);
    let side = SideInfo::of_row(&ds, 4, &s);
    assert_eq!(local_shapley_exact(&s, &c, ds.row(4), &side).unwrap(), vec![0.0; 3]);
    for m in [1, 2, 7] {
        let est = local_shapley_sampled(&s, &c, ds.row(4), &side, &CoalitionEstimatorConfig::sampled(m, 9)).unwrap();
        assert_eq!(est.phi, vec![0.0; 3]);
    }
}

#[test]
fn ignored_group_is_an_exact_dummy() {
    let ds = synthetic::biased(100, 2);
    let noise = ds.group_index("noise").unwrap();
    let keep: Vec<usize> = (0..ds.n_cols()).filter(|c| !ds.groups()[noise].column_indices.contains(c)).collect();
    let f = FeedForward::new("f", ds.n_cols(), keep, &[6], 2, 3);
    let cfg = CoalitionEstimatorConfig {
        background: Some(25),
        ..CoalitionEstimatorConfig::exact()
    };
    for kind in [ValueKind::Accuracy, ValueKind::Dp, ValueKind::Eo] {
        let reports = global_shapley(&ExplainSpec::new(kind), &f, &ds, Split::Train, &cfg).unwrap();
        for r in reports {
            assert_eq!(r.phi[noise], 0.0, "{kind}");
        }
    }
}

#[test]
fn duplicated_players_are_symmetric() {
    let mut b = TableBuilder::new("dup", 2);
    b.feature(RawFeature::categorical("sex", Some(vec!["f".into(), "m".into()])).protected())
        .feature(RawFeature::continuous("left"))
        .feature(RawFeature::continuous("right"))
        .feature(RawFeature::continuous("other"));
    for i in 0..40 {
        let t = (i as f64 * 0.37).sin();
        let o = (i as f64 * 1.3).cos();
        let sex = if i % 3 == 0 { "f" } else { "m" };
        b.push(
            vec![RawValue::cat(sex), RawValue::Num(t), RawValue::Num(t), RawValue::Num(o)],
            usize::from(t + 0.2 * o > 0.0),
            Split::Train,
        );
    }
    let ds = b.build().unwrap();
    let mut w = vec![0.0; ds.n_cols()];
    let (l, r, o) = (
        ds.groups()[1].column_indices[0],
        ds.groups()[2].column_indices[0],
        ds.groups()[3].column_indices[0],
    );
    w[l] = 0.8;
    w[r] = 0.8;
    w[o] = -0.5;
    let f = Logistic { w, b: 0.1 };
    let s = spec(ValueKind::Accuracy, &ds, &all_rows(&ds));
    for i in [0, 5, 17] {
        let side = SideInfo::of_row(&ds, i, &s);
        let phi = local_shapley_exact(&s, &f, ds.row(i), &side).unwrap();
        assert!((phi[1] - phi[2]).abs() < 1e-14, "{phi:?}");
    }
}

#[test]
fn cap_is_enforced() {
    let ds = synthetic::biased(60, 1);
    let f = FeedForward::full("f", ds.n_cols(), &[3], 2, 0);
    let cfg = CoalitionEstimatorConfig {
        exact_cap: 4,
        ..CoalitionEstimatorConfig::exact()
    };
    let err = global_shapley(&ExplainSpec::new(ValueKind::Dp), &f, &ds, Split::Train, &cfg).unwrap_err();
    assert!(matches!(err, Error::CapExceeded { players: 5, cap: 4 }));
}

#[test]
fn sampled_is_deterministic_and_validated() {
    let ds = three_players();
    let f = FeedForward::full("f", ds.n_cols(), &[5], 2, 8);
    let s = spec(ValueKind::Dp, &ds, &[0, 4, 8]);
    let side = SideInfo::of_row(&ds, 2, &s);
    let cfg = CoalitionEstimatorConfig::sampled(16, 44);
    let a = local_shapley_sampled(&s, &f, ds.row(2), &side, &cfg).unwrap();
    let b = local_shapley_sampled(&s, &f, ds.row(2), &side, &cfg).unwrap();
    assert_eq!(a, b);
    let zero = CoalitionEstimatorConfig::sampled(0, 1);
    assert!(local_shapley_sampled(&s, &f, ds.row(2), &side, &zero).is_err());
    let no_bg = CoalitionEstimatorConfig {
        background: Some(0),
        ..CoalitionEstimatorConfig::sampled(4, 1)
    };
    assert!(global_shapley(&ExplainSpec::new(ValueKind::Dp), &f, &ds, Split::Train, &no_bg).is_err());
}

#[test]
fn sampled_converges_to_exact_on_three_players() {
    let ds = three_players();
    let f = FeedForward::full("f", ds.n_cols(), &[5], 2, 8);
    let s = spec(ValueKind::Accuracy, &ds, &[1, 2, 3, 4, 5, 6]);
    let side = SideInfo::of_row(&ds, 30, &s);
    let exact = local_shapley_exact(&s, &f, ds.row(30), &side).unwrap();
    let est = local_shapley_sampled(&s, &f, ds.row(30), &side, &CoalitionEstimatorConfig::sampled(2000, 5)).unwrap();
    let se = est.se.unwrap();
    for i in 0..3 {
        assert!((est.phi[i] - exact[i]).abs() <= 3.0 * se[i] + 1e-12, "{i}: {} vs {}", est.phi[i], exact[i]);
    }
}

#[test]
fn global_sum_rules_in_exact_mode() {
    let ds = synthetic::biased(150, 11);
    let f = FeedForward::full("f", ds.n_cols(), &[6], 2, 2);
    let cfg = CoalitionEstimatorConfig::exact();
    for explain in [
        ExplainSpec::new(ValueKind::Accuracy),
        ExplainSpec::new(ValueKind::Dp),
        ExplainSpec::new(ValueKind::Eo),
        ExplainSpec::cdp(&["region"]),
    ] {
        let reports = global_shapley(&explain, &f, &ds, Split::Test, &cfg).unwrap();
        let expected_cells = match explain.kind {
            ValueKind::Eo => metrics::eo_difference(&f, &ds, Split::Test).unwrap().components.len(),
            ValueKind::Cdp => metrics::cdp_difference(&f, &ds, Split::Test, &[3], 1).unwrap().components.len(),
            _ => 1,
        };
        assert_eq!(reports.len(), expected_cells);
        for r in &reports {
            r.validate().unwrap();
            assert!(r.sum_rule_gap().abs() < 1e-9, "{}: {}", r.kind, r.sum_rule_gap());
        }
    }
    let dp = global_shapley(&ExplainSpec::new(ValueKind::Dp), &f, &ds, Split::Test, &cfg).unwrap();
    let direct = metrics::dp_difference(&f, &ds, Split::Test).unwrap();
    assert!((dp[0].total - direct.signed).abs() < 1e-9);
    assert_eq!(dp[0].offset, 0.0);
}

#[test]
fn constant_class_frequency_has_zero_phi_and_offset_metric() {
    let ds = three_players();
    let rows = ds.rows(Split::Train);
    let freq = rows.iter().filter(|&&i| ds.y()[i] == 1).count() as f64 / rows.len() as f64;
    let c = Constant::binary(freq, ds.n_cols());
    let r = &global_shapley(&ExplainSpec::new(ValueKind::Accuracy), &c, &ds, Split::Train, &CoalitionEstimatorConfig::exact()).unwrap()[0];
    assert_eq!(r.phi, vec![0.0; 3]);
    assert!((r.offset - r.metric_value).abs() < 1e-12);
}

#[test]
fn linearity_holds_exact_and_sampled() {
    let ds = synthetic::biased(100, 4);
    let f = FeedForward::full("f", ds.n_cols(), &[4], 2, 1);
    let g = FeedForward::full("g", ds.n_cols(), &[4], 2, 2);
    let delta = Difference { lhs: &g, rhs: &f };
    let zero = Difference { lhs: &f, rhs: &f };
    let exact = CoalitionEstimatorConfig {
        background: Some(20),
        ..CoalitionEstimatorConfig::exact()
    };
    let sampled = CoalitionEstimatorConfig {
        background: Some(20),
        ..CoalitionEstimatorConfig::sampled(32, 7)
    };
    for kind in [ValueKind::Accuracy, ValueKind::Dp, ValueKind::Eo] {
        let e = ExplainSpec::new(kind);
        let r = linearity_check(&e, &f, &zero, &ds, Split::Train, &exact).unwrap();
        assert_eq!(r.max_discrepancy, 0.0, "{kind}");
        for cfg in [&exact, &sampled] {
            let r = linearity_check(&e, &f, &delta, &ds, Split::Train, cfg).unwrap();
            assert!(r.max_discrepancy < 1e-10, "{kind}: {}", r.max_discrepancy);
        }
    }
}

#[test]
fn report_round_trips_through_json_and_csv() {
    let ds = synthetic::biased(80, 6);
    let f = FeedForward::full("f", ds.n_cols(), &[4], 2, 1);
    let cfg = CoalitionEstimatorConfig {
        background: Some(10),
        ..CoalitionEstimatorConfig::sampled(8, 3)
    };
    let r = &global_shapley(&ExplainSpec::new(ValueKind::Eo), &f, &ds, Split::Train, &cfg).unwrap()[0];
    let back = ShapleyReport::from_json(&r.to_json().unwrap()).unwrap();
    assert_eq!(&back, r);
    back.validate().unwrap();
    let csv = r.to_csv();
    assert_eq!(csv.lines().count(), 1 + 5 + 3);
    assert!(csv.starts_with("kind,cell,player,phi,se\neo,y=0,sex,"));
}

#[test]
fn tampered_report_fails_validation() {
    let ds = synthetic::biased(80, 6);
    let f = FeedForward::full("f", ds.n_cols(), &[4], 2, 1);
    let cfg = CoalitionEstimatorConfig {
        background: Some(10),
        ..CoalitionEstimatorConfig::exact()
    };
    let mut r = global_shapley(&ExplainSpec::new(ValueKind::Dp), &f, &ds, Split::Train, &cfg).unwrap().remove(0);
    r.phi[0] += 1e-3;
    assert!(r.validate().is_err());
}
