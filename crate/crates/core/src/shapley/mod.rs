//! Shapley attributions of expected accuracy and of group-fairness
//! differences to feature groups.
//!
//! Every explained quantity is a coalition game
//! `V(S) = mean_x coef(x) * mean_x' f_t(x)(x_S ⊔ x'_rest)`: the local value
//! function of one row is the single-term case, and a global explanation is
//! the Shapley value of the game averaged over the aggregation rows, which by
//! linearity equals the average of the local values.

mod game;
mod report;

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{empirical_group_rates, empirical_group_rates_lenient, CellKey, Conditioning, Dataset, GroupRates, Split};
use crate::metrics::{self, MetricName};
use crate::model::{Predictor, Sum};
use crate::{Error, Result};

use game::{Game, Term};
pub use report::{EstimatorMeta, ShapleyReport};

pub const DEFAULT_EXACT_CAP: usize = 14;
pub const DEFAULT_PERMUTATIONS: usize = 256;
pub const DEFAULT_SAMPLED_BACKGROUND: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Accuracy,
    Dp,
    Eo,
    Cdp,
}

impl ValueKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ValueKind::Accuracy => "accuracy",
            ValueKind::Dp => "dp",
            ValueKind::Eo => "eo",
            ValueKind::Cdp => "cdp",
        }
    }

    /// The distribution local values are averaged over.
    pub fn aggregation(self) -> &'static str {
        match self {
            ValueKind::Accuracy => "p(x,y)",
            ValueKind::Dp => "p(x,a)",
            ValueKind::Eo => "p(x,a|y)",
            ValueKind::Cdp => "p(x,a|v)",
        }
    }

    pub fn is_fairness(self) -> bool {
        self != ValueKind::Accuracy
    }

    pub fn metric(self) -> MetricName {
        match self {
            ValueKind::Accuracy => MetricName::ExpectedAccuracy,
            ValueKind::Dp => MetricName::DpDifference,
            ValueKind::Eo => MetricName::EoDifference,
            ValueKind::Cdp => MetricName::CdpDifference,
        }
    }

    fn conditioning(self, resolving: &[usize]) -> Conditioning {
        match self {
            ValueKind::Accuracy | ValueKind::Dp => Conditioning::None,
            ValueKind::Eo => Conditioning::Label,
            ValueKind::Cdp => Conditioning::Resolving(resolving.to_vec()),
        }
    }
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ValueKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(ValueKind::Accuracy),
            "dp" => Ok(ValueKind::Dp),
            "eo" => Ok(ValueKind::Eo),
            "cdp" => Ok(ValueKind::Cdp),
            other => Err(Error::InvalidConfig(format!("unknown explanation kind `{other}`"))),
        }
    }
}

/// What to explain, independent of any particular rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainSpec {
    pub kind: ValueKind,
    /// Class whose probability dp and cdp explain. Eo always explains the
    /// probability of the row's own label.
    #[serde(default = "default_target")]
    pub target_class: usize,
    /// Player names of the cdp resolving variables.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub resolving: Vec<String>,
}

fn default_target() -> usize {
    1
}

impl ExplainSpec {
    pub fn new(kind: ValueKind) -> Self {
        ExplainSpec {
            kind,
            target_class: 1,
            resolving: Vec::new(),
        }
    }

    pub fn cdp(resolving: &[&str]) -> Self {
        ExplainSpec {
            resolving: resolving.iter().map(|s| s.to_string()).collect(),
            ..ExplainSpec::new(ValueKind::Cdp)
        }
    }

    fn resolving_groups(&self, ds: &Dataset) -> Result<Vec<usize>> {
        if self.kind == ValueKind::Cdp && self.resolving.is_empty() {
            return Err(Error::InvalidConfig("cdp needs at least one resolving variable".into()));
        }
        self.resolving
            .iter()
            .map(|name| {
                ds.group_index(name)
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown resolving variable `{name}`")))
            })
            .collect()
    }
}

/// A fully materialized value function: kind, weights and background.
#[derive(Clone, Debug)]
pub struct ValueFunctionSpec {
    pub kind: ValueKind,
    pub target_class: usize,
    pub resolving: Vec<usize>,
    /// Protected-group frequencies; absent for accuracy.
    pub rates: Option<GroupRates>,
    pub players: Vec<String>,
    pub groups: Vec<Vec<usize>>,
    /// Background rows, `n x width` row-major.
    pub background: Vec<f64>,
    pub width: usize,
}

impl ValueFunctionSpec {
    /// Weights come from `weight_rows`, the marginalizing sample from
    /// `background_rows`.
    pub fn new(explain: &ExplainSpec, ds: &Dataset, weight_rows: &[usize], background_rows: &[usize]) -> Result<Self> {
        if background_rows.is_empty() {
            return Err(Error::EmptySplit("background".into()));
        }
        let resolving = explain.resolving_groups(ds)?;
        let conditioning = explain.kind.conditioning(&resolving);
        let rates = match explain.kind {
            ValueKind::Accuracy => None,
            ValueKind::Dp | ValueKind::Eo => Some(empirical_group_rates(ds, weight_rows, &conditioning)?),
            ValueKind::Cdp => Some(empirical_group_rates_lenient(ds, weight_rows, &conditioning)?),
        };
        if explain.target_class >= ds.n_classes() {
            return Err(Error::InvalidConfig(format!(
                "target class {} out of range for {} classes",
                explain.target_class,
                ds.n_classes()
            )));
        }
        let mut background = Vec::with_capacity(background_rows.len() * ds.n_cols());
        for &i in background_rows {
            background.extend_from_slice(ds.row(i));
        }
        Ok(ValueFunctionSpec {
            kind: explain.kind,
            target_class: explain.target_class,
            resolving,
            rates,
            players: ds.groups().iter().map(|g| g.player_name.clone()).collect(),
            groups: ds.groups().iter().map(|g| g.column_indices.clone()).collect(),
            background,
            width: ds.n_cols(),
        })
    }

    pub fn n_players(&self) -> usize {
        self.groups.len()
    }

    pub fn n_background(&self) -> usize {
        self.background.len() / self.width
    }

    fn conditioning(&self) -> Conditioning {
        self.kind.conditioning(&self.resolving)
    }

    /// Integrand weight and explained class for a row.
    fn coefficient(&self, side: &SideInfo) -> Result<(f64, usize)> {
        let kind = self.kind.as_str();
        let need_y = || side.y.ok_or(Error::MissingSideInfo { kind, field: "y" });
        let need_a = || side.a.ok_or(Error::MissingSideInfo { kind, field: "a" });
        let (key, target) = match self.kind {
            ValueKind::Accuracy => return Ok((1.0, need_y()?)),
            ValueKind::Dp => (CellKey(Vec::new()), self.target_class),
            ValueKind::Eo => {
                let y = need_y()?;
                (CellKey(vec![y as u64]), y)
            }
            ValueKind::Cdp => (
                side.cell.clone().ok_or(Error::MissingSideInfo { kind, field: "cell" })?,
                self.target_class,
            ),
        };
        let a = need_a()?;
        let rates = self.rates.as_ref().expect("fairness kinds carry rates");
        let cell = rates.cell(&key).ok_or_else(|| Error::DegenerateCell {
            cell: format!("{:?}", key.0),
            group: a,
        })?;
        let sign = if a == 0 { 1.0 } else { -1.0 };
        Ok((sign / cell.p[usize::from(a)], target))
    }

    fn check_predictor(&self, predictor: &dyn Predictor) -> Result<()> {
        if predictor.input_width() != self.width {
            return Err(Error::DimensionMismatch {
                expected: self.width,
                got: predictor.input_width(),
            });
        }
        if self.target_class >= predictor.n_classes() {
            return Err(Error::InvalidConfig(format!(
                "target class {} out of range for a {}-class predictor",
                self.target_class,
                predictor.n_classes()
            )));
        }
        Ok(())
    }

    fn local_game<'a>(&'a self, predictor: &'a dyn Predictor, x: &'a [f64], side: &SideInfo) -> Result<Game<'a>> {
        self.check_predictor(predictor)?;
        if x.len() != self.width {
            return Err(Error::DimensionMismatch {
                expected: self.width,
                got: x.len(),
            });
        }
        let (coef, target) = self.coefficient(side)?;
        Ok(Game {
            predictor,
            groups: &self.groups,
            terms: vec![Term { x, coef, target }],
            background: &self.background,
            width: self.width,
        })
    }
}

/// Per-row facts the value functions condition on.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SideInfo {
    pub y: Option<usize>,
    pub a: Option<u8>,
    /// Resolving cell (cdp).
    pub cell: Option<CellKey>,
}

impl SideInfo {
    /// Everything `spec` may need for row `i` of `ds`.
    pub fn of_row(ds: &Dataset, i: usize, spec: &ValueFunctionSpec) -> Self {
        SideInfo {
            y: Some(ds.y()[i]),
            a: Some(ds.a()[i]),
            cell: (spec.kind == ValueKind::Cdp).then(|| ds.cell_key(i, &spec.conditioning())),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorMode {
    #[default]
    Exact,
    Sampled,
}

impl fmt::Display for EstimatorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorMode::Exact => "exact",
            EstimatorMode::Sampled => "sampled",
        })
    }
}

impl std::str::FromStr for EstimatorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(EstimatorMode::Exact),
            "sampled" => Ok(EstimatorMode::Sampled),
            other => Err(Error::InvalidConfig(format!("unknown estimator `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoalitionEstimatorConfig {
    pub mode: EstimatorMode,
    /// Sampled orderings; each is also evaluated reversed.
    pub permutations: usize,
    /// Background rows drawn from the training split. `None` means the whole
    /// split in exact mode and [`DEFAULT_SAMPLED_BACKGROUND`] when sampling.
    pub background: Option<usize>,
    /// Aggregation rows drawn from the explained split (`None`: all).
    pub rows: Option<usize>,
    pub seed: u64,
    pub exact_cap: usize,
}

impl Default for CoalitionEstimatorConfig {
    fn default() -> Self {
        CoalitionEstimatorConfig {
            mode: EstimatorMode::Exact,
            permutations: DEFAULT_PERMUTATIONS,
            background: None,
            rows: None,
            seed: 0,
            exact_cap: DEFAULT_EXACT_CAP,
        }
    }
}

impl CoalitionEstimatorConfig {
    pub fn exact() -> Self {
        Self::default()
    }

    pub fn sampled(permutations: usize, seed: u64) -> Self {
        CoalitionEstimatorConfig {
            mode: EstimatorMode::Sampled,
            permutations,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == EstimatorMode::Sampled && self.permutations == 0 {
            return Err(Error::InvalidConfig("permutation count must be at least 1".into()));
        }
        if self.background == Some(0) {
            return Err(Error::InvalidConfig("background size must be at least 1".into()));
        }
        if self.rows == Some(0) {
            return Err(Error::InvalidConfig("row sample size must be at least 1".into()));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

const BACKGROUND_STREAM: u64 = 1;
const ROWS_STREAM: u64 = 2;
const PERMUTATION_STREAM: u64 = 3;

/// Attributions with their Monte Carlo standard errors (sampled mode only).
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub phi: Vec<f64>,
    pub se: Option<Vec<f64>>,
    /// `V(∅)` and `V(N)`.
    pub empty: f64,
    pub full: f64,
}

fn mask_of(coalition: &[usize], n: usize) -> Result<u64> {
    let mut mask = 0u64;
    for &i in coalition {
        if i >= n {
            return Err(Error::UnknownPlayer { index: i, players: n });
        }
        mask |= 1 << i;
    }
    Ok(mask)
}

/// Local value of `coalition` (player indices) for the row `x`.
pub fn value_function(
    spec: &ValueFunctionSpec,
    predictor: &dyn Predictor,
    x: &[f64],
    side: &SideInfo,
    coalition: &[usize],
) -> Result<f64> {
    let mask = mask_of(coalition, spec.n_players())?;
    Ok(spec.local_game(predictor, x, side)?.values(&[mask])[0])
}

pub fn local_shapley_exact(spec: &ValueFunctionSpec, predictor: &dyn Predictor, x: &[f64], side: &SideInfo) -> Result<Vec<f64>> {
    let game = spec.local_game(predictor, x, side)?;
    Ok(exact(&game, DEFAULT_EXACT_CAP)?.phi)
}

pub fn local_shapley_sampled(
    spec: &ValueFunctionSpec,
    predictor: &dyn Predictor,
    x: &[f64],
    side: &SideInfo,
    cfg: &CoalitionEstimatorConfig,
) -> Result<Estimate> {
    if cfg.mode != EstimatorMode::Sampled {
        return Err(Error::InvalidConfig("local_shapley_sampled needs a sampled estimator config".into()));
    }
    cfg.validate()?;
    let game = spec.local_game(predictor, x, side)?;
    Ok(sampled(&game, cfg.permutations, &mut cfg.rng(PERMUTATION_STREAM)))
}

/// `|S|! (n - |S| - 1)! / n!` for each coalition size.
fn coalition_weights(n: usize) -> Vec<f64> {
    // 1 / (n * C(n-1, s))
    let mut binom = 1.0;
    let mut w = Vec::with_capacity(n);
    for s in 0..n {
        w.push(1.0 / (n as f64 * binom));
        binom = binom * (n - 1 - s) as f64 / (s + 1) as f64;
    }
    w
}

fn exact(game: &Game<'_>, cap: usize) -> Result<Estimate> {
    let n = game.n_players();
    if n > cap || n >= 64 {
        return Err(Error::CapExceeded { players: n, cap });
    }
    let v = game.all_values();
    let w = coalition_weights(n);
    let mut phi = vec![0.0; n];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        for m in 0..v.len() {
            if m & bit == 0 {
                *p += w[m.count_ones() as usize] * (v[m | bit] - v[m]);
            }
        }
    }
    Ok(Estimate {
        phi,
        se: None,
        empty: v[0],
        full: v[v.len() - 1],
    })
}

/// Antithetic permutation sampling: every drawn ordering is paired with its
/// reverse and the pair's mean marginal contributions form one sample.
fn sampled(game: &Game<'_>, permutations: usize, rng: &mut ChaCha8Rng) -> Estimate {
    let n = game.n_players();
    let orders: Vec<Vec<usize>> = (0..permutations)
        .map(|_| {
            let mut o: Vec<usize> = (0..n).collect();
            o.shuffle(rng);
            o
        })
        .collect();
    let mut index: BTreeMap<u64, usize> = BTreeMap::new();
    for o in &orders {
        let mut fwd = 0u64;
        let mut rev = 0u64;
        index.insert(0, 0);
        for k in 0..n {
            fwd |= 1 << o[k];
            rev |= 1 << o[n - 1 - k];
            index.insert(fwd, 0);
            index.insert(rev, 0);
        }
    }
    let masks: Vec<u64> = index.keys().copied().collect();
    for (j, m) in masks.iter().enumerate() {
        index.insert(*m, j);
    }
    let v = game.values(&masks);
    let value = |m: u64| v[index[&m]];

    let mut samples = vec![vec![0.0; n]; permutations];
    for (o, sample) in orders.iter().zip(&mut samples) {
        let mut prefix = 0u64;
        for &i in o {
            let next = prefix | 1 << i;
            sample[i] += 0.5 * (value(next) - value(prefix));
            prefix = next;
        }
        prefix = 0;
        for &i in o.iter().rev() {
            let next = prefix | 1 << i;
            sample[i] += 0.5 * (value(next) - value(prefix));
            prefix = next;
        }
    }
    let m = permutations as f64;
    let phi: Vec<f64> = (0..n).map(|i| samples.iter().map(|s| s[i]).sum::<f64>() / m).collect();
    let se = (permutations > 1).then(|| {
        (0..n)
            .map(|i| {
                let ss: f64 = samples.iter().map(|s| (s[i] - phi[i]).powi(2)).sum();
                (ss / (m - 1.0)).sqrt() / m.sqrt()
            })
            .collect()
    });
    let full = (1u64 << n) - 1;
    Estimate {
        phi,
        se,
        empty: value(0),
        full: value(full),
    }
}

fn estimate(game: &Game<'_>, cfg: &CoalitionEstimatorConfig) -> Result<Estimate> {
    match cfg.mode {
        EstimatorMode::Exact => exact(game, cfg.exact_cap),
        EstimatorMode::Sampled => Ok(sampled(game, cfg.permutations, &mut cfg.rng(PERMUTATION_STREAM))),
    }
}

/// Sorted seeded subsample of `rows`, or all of them when `take` covers it.
fn subsample(rows: Vec<usize>, take: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match take {
        Some(t) if t < rows.len() => {
            let mut picked: Vec<usize> = rand::seq::index::sample(rng, rows.len(), t).into_iter().map(|j| rows[j]).collect();
            picked.sort_unstable();
            picked
        }
        _ => rows,
    }
}

/// Aggregation and background rows for an explanation of `split`.
pub fn explanation_rows(ds: &Dataset, split: Split, cfg: &CoalitionEstimatorConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    cfg.validate()?;
    let rows = ds.rows(split);
    if rows.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    let train = ds.rows(Split::Train);
    if train.is_empty() {
        return Err(Error::EmptySplit(Split::Train.to_string()));
    }
    let b = match (cfg.background, cfg.mode) {
        (Some(b), _) => Some(b),
        (None, EstimatorMode::Exact) => None,
        (None, EstimatorMode::Sampled) => Some(DEFAULT_SAMPLED_BACKGROUND),
    };
    let background = subsample(train, b, &mut cfg.rng(BACKGROUND_STREAM));
    let rows = subsample(rows, cfg.rows, &mut cfg.rng(ROWS_STREAM));
    Ok((rows, background))
}

/// Global attributions over rows of `split`: one report for accuracy and dp,
/// one per conditioning cell for eo and cdp. Background rows come from the
/// training split.
pub fn global_shapley(
    explain: &ExplainSpec,
    predictor: &dyn Predictor,
    ds: &Dataset,
    split: Split,
    cfg: &CoalitionEstimatorConfig,
) -> Result<Vec<ShapleyReport>> {
    let (rows, background) = explanation_rows(ds, split, cfg)?;
    global_shapley_rows(explain, predictor, ds, &rows, &background, split, cfg)
}

/// [`global_shapley`] over explicit aggregation and background rows.
pub fn global_shapley_rows(
    explain: &ExplainSpec,
    predictor: &dyn Predictor,
    ds: &Dataset,
    rows: &[usize],
    background: &[usize],
    split: Split,
    cfg: &CoalitionEstimatorConfig,
) -> Result<Vec<ShapleyReport>> {
    cfg.validate()?;
    if rows.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    let spec = ValueFunctionSpec::new(explain, ds, rows, background)?;
    spec.check_predictor(predictor)?;
    let conditioning = spec.conditioning();

    // Metric values on exactly the aggregated rows, so sum rules are checkable.
    let metric = match spec.kind {
        ValueKind::Accuracy => metrics::expected_accuracy_rows(predictor, ds, rows)?,
        ValueKind::Dp => metrics::dp_difference_rows(predictor, ds, rows)?,
        ValueKind::Eo => metrics::eo_difference_rows(predictor, ds, rows)?,
        ValueKind::Cdp => metrics::cdp_difference_rows(predictor, ds, rows, &spec.resolving, spec.target_class)?,
    };
    let rates = spec.rates.clone();
    let cells: Vec<(Option<String>, Option<CellKey>)> = match (&rates, spec.kind) {
        (_, ValueKind::Accuracy | ValueKind::Dp) | (None, _) => vec![(None, None)],
        (Some(r), _) => r.cells.iter().map(|c| (Some(c.label.clone()), Some(c.key.clone()))).collect(),
    };

    let mut reports = Vec::with_capacity(cells.len());
    for (label, key) in cells {
        let members: Vec<usize> = match &key {
            None => rows.to_vec(),
            Some(k) => rows.iter().copied().filter(|&i| &ds.cell_key(i, &conditioning) == k).collect(),
        };
        let mut terms = Vec::with_capacity(members.len());
        for &i in &members {
            let (coef, target) = spec.coefficient(&SideInfo::of_row(ds, i, &spec))?;
            terms.push(Term { x: ds.row(i), coef, target });
        }
        let game = Game {
            predictor,
            groups: &spec.groups,
            terms,
            background: &spec.background,
            width: spec.width,
        };
        let est = estimate(&game, cfg)?;
        let metric_value = match &label {
            None => metric.signed,
            Some(l) => metric
                .components
                .iter()
                .find(|c| &c.cell == l)
                .map(|c| c.signed)
                .ok_or_else(|| Error::Degenerate(format!("no metric component for cell {l}")))?,
        };
        let offset = if spec.kind.is_fairness() { 0.0 } else { est.empty };
        let total = est.phi.iter().sum();
        reports.push(ShapleyReport {
            kind: spec.kind,
            aggregation: spec.kind.aggregation().to_string(),
            cell: label,
            target_class: match spec.kind {
                ValueKind::Dp | ValueKind::Cdp => Some(spec.target_class),
                _ => None,
            },
            model: predictor.name(),
            players: spec.players.clone(),
            phi: est.phi,
            se: est.se,
            offset,
            total,
            metric: metric.name,
            metric_value: if spec.kind.is_fairness() { metric_value } else { metric.value },
            empty_value: est.empty,
            full_value: est.full,
            estimator: EstimatorMeta {
                mode: cfg.mode,
                permutations: (cfg.mode == EstimatorMode::Sampled).then_some(cfg.permutations),
                antithetic: cfg.mode == EstimatorMode::Sampled,
                background: spec.n_background(),
                seed: cfg.seed,
            },
            split,
            n_rows: members.len(),
            dropped_cells: rates.as_ref().map(|r| r.dropped.clone()).unwrap_or_default(),
        });
    }
    Ok(reports)
}

/// A predictor with its affine first stage hidden.
struct Direct<'a>(&'a dyn Predictor);

impl Predictor for Direct<'_> {
    fn n_classes(&self) -> usize {
        self.0.n_classes()
    }
    fn input_width(&self) -> usize {
        self.0.input_width()
    }
    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        self.0.predict_into(x, out)
    }
    fn name(&self) -> String {
        self.0.name()
    }
}

/// Outcome of comparing attributions of `f + delta` with the sum of the
/// separate attributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearityReport {
    pub kind: ValueKind,
    pub max_discrepancy: f64,
    pub per_report: Vec<f64>,
}

/// Checks `Φ(f + δ) = Φ(f) + Φ(δ)` with shared rows, background and seed.
pub fn linearity_check(
    explain: &ExplainSpec,
    f: &dyn Predictor,
    delta: &dyn Predictor,
    ds: &Dataset,
    split: Split,
    cfg: &CoalitionEstimatorConfig,
) -> Result<LinearityReport> {
    if f.input_width() != delta.input_width() {
        return Err(Error::DimensionMismatch {
            expected: f.input_width(),
            got: delta.input_width(),
        });
    }
    if f.n_classes() != delta.n_classes() {
        return Err(Error::DimensionMismatch {
            expected: f.n_classes(),
            got: delta.n_classes(),
        });
    }
    let (rows, background) = explanation_rows(ds, split, cfg)?;
    // All three games go through the same splice path so that rounding is
    // shared and a zero delta gives a zero discrepancy.
    let (f, delta) = (Direct(f), Direct(delta));
    let sum = Sum { lhs: &f, rhs: &delta };
    let run = |p: &dyn Predictor| global_shapley_rows(explain, p, ds, &rows, &background, split, cfg);
    let (rf, rd, rs) = (run(&f)?, run(&delta)?, run(&sum)?);
    let mut per_report = Vec::with_capacity(rs.len());
    for ((a, b), s) in rf.iter().zip(&rd).zip(&rs) {
        if a.players != b.players || a.players != s.players || a.cell != s.cell {
            return Err(Error::InvalidConfig("linearity check over mismatched player sets".into()));
        }
        let worst = s
            .phi
            .iter()
            .zip(a.phi.iter().zip(&b.phi))
            .map(|(s, (a, b))| (s - (a + b)).abs())
            .fold(0.0, f64::max);
        per_report.push(worst);
    }
    Ok(LinearityReport {
        kind: explain.kind,
        max_discrepancy: per_report.iter().copied().fold(0.0, f64::max),
        per_report,
    })
}

#[cfg(test)]
mod tests;
