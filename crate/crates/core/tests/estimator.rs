use fairshap::dataset::{synthetic, Split};
use fairshap::interventions::{train_baseline, Architecture, TrainConfig};
use fairshap::shapley::{global_shapley, CoalitionEstimatorConfig, ExplainSpec, ValueKind};

/// Mean reported standard error over players and seeds shrinks like
/// `M^{-1/2}`: the log-log slope over M = 64, 256, 1024 sits near -0.5.
#[test]
fn sampled_standard_error_shrinks_with_root_permutations() {
    let ds = synthetic::biased(200, 1);
    let cfg = TrainConfig {
        iterations: 300,
        batch_size: 64,
        lr: 0.01,
        eval_every: 50,
        ..TrainConfig::default()
    };
    let (f, _) = train_baseline(&ds, &Architecture::hidden(&[8]), &cfg).unwrap();
    let counts = [64usize, 256, 1024];
    for kind in [ValueKind::Accuracy, ValueKind::Dp] {
        let mut mean_se = Vec::new();
        for &m in &counts {
            let mut total = 0.0;
            let mut n = 0;
            for seed in 0..8 {
                let est = CoalitionEstimatorConfig {
                    background: Some(60),
                    ..CoalitionEstimatorConfig::sampled(m, seed)
                };
                let r = global_shapley(&ExplainSpec::new(kind), &f, &ds, Split::Test, &est).unwrap().remove(0);
                let se = r.se.unwrap();
                total += se.iter().sum::<f64>();
                n += se.len();
            }
            mean_se.push(total / n as f64);
        }
        let xs: Vec<f64> = counts.iter().map(|&m| (m as f64).ln()).collect();
        let ys: Vec<f64> = mean_se.iter().map(|s| s.ln()).collect();
        let (mx, my) = (xs.iter().sum::<f64>() / 3.0, ys.iter().sum::<f64>() / 3.0);
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        assert!((slope + 0.5).abs() < 0.05, "{kind:?}: slope {slope} from mean se {mean_se:?}");
    }
}
