use proptest::prelude::*;

use fairshap::dataset::{synthetic, FeatureKind, RawFeature, RawValue, Split, TableBuilder};
use fairshap::metrics::{threshold_table, RunRecord};
use fairshap::model::activation::{head_into, logit, pinned_softmax_into, PROB_CLAMP};
use fairshap::model::{compose_perturbed, pinned_log, softmax, FeedForward, Predictor};
use fairshap::shapley::{
    local_shapley_exact, local_shapley_sampled, value_function, CoalitionEstimatorConfig, ExplainSpec, ShapleyReport, SideInfo, ValueFunctionSpec,
    ValueKind,
};

fn simplex(max_dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-6.0f64..6.0, 2..=max_dim).prop_map(|z| softmax(&z))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn softmax_inverts_pinned_log(s in simplex(10)) {
        let back = softmax(&pinned_log(&s).unwrap());
        let err = s.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-12, "error {err}");
    }

    #[test]
    fn two_class_sigmoid_head_matches_pinned_softmax(
        base in PROB_CLAMP..(1.0 - PROB_CLAMP),
        delta in -12.0f64..12.0,
    ) {
        let via_sigmoid = compose_perturbed(&[1.0 - base, base], &[delta]).unwrap();
        let mut via_softmax = [0.0; 2];
        pinned_softmax_into(&[(base.ln() - (1.0 - base).ln()) + delta], &mut via_softmax);
        let mut head = [0.0; 2];
        head_into(&[logit(base) + delta], &mut head);
        for c in 0..2 {
            prop_assert!((via_sigmoid[c] - via_softmax[c]).abs() < 1e-12);
            prop_assert!((head[c] - via_softmax[c]).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn local_efficiency_holds_for_random_networks(
        model_seed in 0u64..1000,
        data_seed in 0u64..1000,
        row in 0usize..80,
        hidden in 1usize..8,
    ) {
        let ds = synthetic::biased(80, data_seed);
        let f = FeedForward::full("f", ds.n_cols(), &[hidden], 2, model_seed);
        let rows: Vec<usize> = (0..ds.n_rows()).collect();
        let bg: Vec<usize> = (0..15).collect();
        let everyone: Vec<usize> = (0..ds.n_players()).collect();
        for explain in [ExplainSpec::new(ValueKind::Accuracy), ExplainSpec::new(ValueKind::Dp), ExplainSpec::new(ValueKind::Eo)] {
            let s = ValueFunctionSpec::new(&explain, &ds, &rows, &bg).unwrap();
            let side = SideInfo::of_row(&ds, row, &s);
            let phi = local_shapley_exact(&s, &f, ds.row(row), &side).unwrap();
            let full = value_function(&s, &f, ds.row(row), &side, &everyone).unwrap();
            let empty = value_function(&s, &f, ds.row(row), &side, &[]).unwrap();
            prop_assert!((phi.iter().sum::<f64>() - (full - empty)).abs() < 1e-10);
            // Sampled permutations telescope to the same total.
            let est = local_shapley_sampled(&s, &f, ds.row(row), &side, &CoalitionEstimatorConfig::sampled(5, model_seed)).unwrap();
            prop_assert!((est.phi.iter().sum::<f64>() - (full - empty)).abs() < 1e-10);
        }
    }

    #[test]
    fn ignored_columns_receive_exactly_zero(model_seed in 0u64..1000, row in 0usize..60, dropped in 0usize..5) {
        let ds = synthetic::biased(60, 11);
        let keep: Vec<usize> = (0..ds.n_cols()).filter(|c| !ds.groups()[dropped].column_indices.contains(c)).collect();
        let f = FeedForward::new("f", ds.n_cols(), keep, &[5], 2, model_seed);
        let rows: Vec<usize> = (0..ds.n_rows()).collect();
        for kind in [ValueKind::Accuracy, ValueKind::Dp, ValueKind::Eo] {
            let s = ValueFunctionSpec::new(&ExplainSpec::new(kind), &ds, &rows, &[1, 2, 3, 5, 8, 13]).unwrap();
            let phi = local_shapley_exact(&s, &f, ds.row(row), &SideInfo::of_row(&ds, row, &s)).unwrap();
            prop_assert_eq!(phi[dropped], 0.0);
        }
    }

    #[test]
    fn interchangeable_players_get_equal_values(
        w in prop::collection::vec(-2.0f64..2.0, 4),
        shared in -2.0f64..2.0,
        seed in 0u64..1000,
    ) {
        let ds = twin_dataset(seed);
        let [l, r] = [ds.groups()[1].column_indices[0], ds.groups()[2].column_indices[0]];
        let f = TwinNet { w, shared, l, r, o: ds.groups()[3].column_indices[0], width: ds.n_cols() };
        let rows: Vec<usize> = (0..ds.n_rows()).collect();
        for kind in [ValueKind::Accuracy, ValueKind::Dp] {
            let s = ValueFunctionSpec::new(&ExplainSpec::new(kind), &ds, &rows, &rows).unwrap();
            for i in [0, 7, 19] {
                let phi = local_shapley_exact(&s, &f, ds.row(i), &SideInfo::of_row(&ds, i, &s)).unwrap();
                prop_assert!((phi[1] - phi[2]).abs() < 1e-12, "{phi:?}");
            }
        }
    }

    #[test]
    fn report_json_round_trips(phi in prop::collection::vec(-1.0f64..1.0, 1..8), offset in 0.0f64..1.0) {
        let ds = synthetic::biased(60, 1);
        let f = FeedForward::full("f", ds.n_cols(), &[3], 2, 0);
        let mut r = fairshap::shapley::global_shapley(&ExplainSpec::new(ValueKind::Accuracy), &f, &ds, Split::Test, &CoalitionEstimatorConfig {
            background: Some(5),
            ..CoalitionEstimatorConfig::exact()
        }).unwrap().remove(0);
        r.players = (0..phi.len()).map(|i| format!("p{i}")).collect();
        r.total = phi.iter().sum();
        r.phi = phi;
        r.offset = offset;
        let back = ShapleyReport::from_json(&r.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, r);
    }
}

/// Two continuous features holding identical values in every row.
fn twin_dataset(seed: u64) -> fairshap::dataset::Dataset {
    let mut b = TableBuilder::new("twins", 2);
    b.feature(RawFeature::categorical("sex", Some(vec!["f".into(), "m".into()])).protected())
        .feature(RawFeature::continuous("left"))
        .feature(RawFeature::continuous("right"))
        .feature(RawFeature::continuous("other"));
    for i in 0..30u64 {
        let t = ((i * 7 + seed) as f64 * 0.37).sin();
        let o = ((i + seed) as f64 * 1.3).cos();
        let sex = if (i + seed) % 3 == 0 { "f" } else { "m" };
        b.push(vec![RawValue::cat(sex), RawValue::Num(t), RawValue::Num(t), RawValue::Num(o)], usize::from(t + 0.2 * o > 0.0), Split::Train);
    }
    b.build().unwrap()
}

/// One hidden layer whose units see `left` and `right` through the same
/// weight, so swapping the two columns leaves the output unchanged.
struct TwinNet {
    w: Vec<f64>,
    shared: f64,
    l: usize,
    r: usize,
    o: usize,
    width: usize,
}

impl Predictor for TwinNet {
    fn n_classes(&self) -> usize {
        2
    }
    fn input_width(&self) -> usize {
        self.width
    }
    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        let h1 = (self.shared * (x[self.l] + x[self.r]) + self.w[0] * x[self.o]).tanh();
        let h2 = (self.w[1] * (x[self.l] * x[self.r]) + self.w[2]).tanh();
        let p = 1.0 / (1.0 + (-(h1 + h2 + self.w[3])).exp());
        out[0] = 1.0 - p;
        out[1] = p;
    }
}

proptest! {
    #[test]
    fn threshold_rows_never_increase(
        runs in prop::collection::vec((0usize..3, 0.5f64..0.9, 0.0f64..0.3), 0..40),
        mut thresholds in prop::collection::vec(0.0f64..0.3, 1..6),
    ) {
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let runs: Vec<RunRecord> = runs
            .into_iter()
            .map(|(m, accuracy, fairness)| RunRecord { method: format!("m{m}"), accuracy, fairness })
            .collect();
        let table = threshold_table("dp", &runs, &thresholds);
        for (_, cells) in &table.rows {
            for pair in cells.windows(2) {
                match (pair[0], pair[1]) {
                    (Some(a), Some(b)) => prop_assert!(b <= a),
                    (None, Some(_)) => prop_assert!(false, "looser threshold had no run"),
                    _ => {}
                }
            }
        }
    }

    #[test]
    fn generators_are_deterministic_and_one_hot(seed in 0u64..10_000, n in 40usize..200) {
        let ds = synthetic::biased(n, seed);
        let again = synthetic::biased(n, seed);
        prop_assert!(ds.x().iter().zip(again.x()).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert_eq!(ds.y(), again.y());
        for (g, spec) in ds.groups().iter().zip(ds.features()) {
            if spec.kind != FeatureKind::Categorical {
                continue;
            }
            for i in 0..ds.n_rows() {
                let row = ds.row(i);
                let ones = g.column_indices.iter().filter(|&&c| row[c] == 1.0).count();
                let zeros = g.column_indices.iter().filter(|&&c| row[c] == 0.0).count();
                prop_assert_eq!((ones, zeros), (1, g.column_indices.len() - 1));
                prop_assert!(ds.decode_category(ds.group_index(&spec.name).unwrap(), row).is_some());
            }
        }
    }

    #[test]
    fn standardization_uses_training_statistics_only(
        values in prop::collection::vec((-50.0f64..50.0, 0usize..3), 12..60),
    ) {
        let splits = [Split::Train, Split::Validation, Split::Test];
        // Every split needs members; force the first three rows.
        let values: Vec<(f64, Split)> = values
            .iter()
            .enumerate()
            .map(|(i, &(v, s))| (v, splits[if i < 3 { i } else { s }]))
            .collect();
        let train: Vec<f64> = values.iter().filter(|(_, s)| *s == Split::Train).map(|(v, _)| *v).collect();
        // A constant training column is rejected by the builder.
        prop_assume!(train.iter().any(|v| (v - train[0]).abs() > 1e-6));
        let mut b = TableBuilder::new("std", 2);
        b.feature(RawFeature::categorical("sex", Some(vec!["f".into(), "m".into()])).protected())
            .feature(RawFeature::continuous("v"));
        for (i, &(v, s)) in values.iter().enumerate() {
            b.push(vec![RawValue::cat(if i % 2 == 0 { "f" } else { "m" }), RawValue::Num(v)], i % 2, s);
        }
        let ds = b.build().unwrap();
        let stats = ds.standardization()[0];
        let mean = train.iter().sum::<f64>() / train.len() as f64;
        let var = train.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / train.len() as f64;
        prop_assert!((stats.mean - mean).abs() < 1e-9);
        prop_assert!((stats.std - var.sqrt()).abs() < 1e-9);
        for (i, &(v, _)) in values.iter().enumerate() {
            let expected = (v - stats.mean) / stats.std;
            prop_assert!((ds.row(i)[stats.column] - expected).abs() < 1e-9);
        }
    }
}
