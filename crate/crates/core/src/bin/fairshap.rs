use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fairshap::config::{DatasetChoice, ExperimentConfig, Method, SampleSize};
use fairshap::dataset::{read_bundle, write_bundle, Dataset, Split};
use fairshap::metrics::{threshold_table, RunRecord};
use fairshap::model::loss::Notion;
use fairshap::model::{load_model, Difference, Model, Predictor};
use fairshap::pipeline::{self, DatasetSummary, ModelMetrics};
use fairshap::plot::{render_waterfall, WaterfallOptions};
use fairshap::shapley::{global_shapley, EstimatorMode, ShapleyReport, ValueKind};
use fairshap::{write_atomic, Error, Result};

#[derive(Parser)]
#[command(name = "fairshap", version, about = "Shapley explanations of accuracy and unfairness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset preparation.
    #[command(subcommand)]
    Data(DataCommand),
    /// Train the baseline and one intervention; writes models, logs and metrics.
    Train(TrainArgs),
    /// Global Shapley reports for a stored model.
    Explain(ExplainArgs),
    /// Metrics of stored models, optionally as an accuracy-at-threshold table.
    Evaluate(EvaluateArgs),
    /// Waterfall SVGs from stored reports.
    Plot(PlotArgs),
    /// Re-check hashes and invariants of a run directory.
    Verify {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Every stage of a config file in one go.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DataCommand {
    /// Load, encode and split a dataset, then store it as a bundle.
    Prepare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        dataset: Option<DatasetChoice>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Split seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Where the data comes from: a prepared bundle, or the raw files named by
/// the config (with flag overrides).
#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, conflicts_with_all = ["dataset", "data_dir", "split_seed"])]
    bundle: Option<PathBuf>,
    #[arg(long, value_enum)]
    dataset: Option<DatasetChoice>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    split_seed: Option<u64>,
}

impl DataArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(self.config.as_deref())?;
        if let Some(d) = self.dataset {
            cfg.dataset = d;
        }
        if let Some(d) = &self.data_dir {
            cfg.data_dir = d.clone();
        }
        if let Some(s) = self.split_seed {
            cfg.split_seed = s;
        }
        Ok(cfg)
    }

    fn load(&self, cfg: &ExperimentConfig) -> Result<Dataset> {
        match &self.bundle {
            Some(dir) => read_bundle(dir),
            None => cfg.load_dataset(),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    method: Option<Method>,
    #[arg(long)]
    notion: Option<Notion>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Reuse this baseline network instead of training one.
    #[arg(long)]
    base: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    /// Explain `model - base` instead of the model itself.
    #[arg(long)]
    base: Option<PathBuf>,
    #[arg(long = "explain-kind")]
    kinds: Vec<ValueKind>,
    #[arg(long)]
    estimator: Option<EstimatorMode>,
    #[arg(long)]
    permutations: Option<usize>,
    /// Background rows, or `all`.
    #[arg(long)]
    background: Option<SampleSize>,
    /// Aggregation rows, or `all`.
    #[arg(long)]
    rows: Option<SampleSize>,
    #[arg(long)]
    split: Option<Split>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    target_class: Option<usize>,
    /// Resolving feature for cdp; repeat for several.
    #[arg(long)]
    resolving: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, num_args = 1..)]
    model: Vec<PathBuf>,
    /// Extra finished runs (JSON list or CSV with method,accuracy,fairness).
    #[arg(long)]
    runs: Vec<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Fairness metric for the threshold table.
    #[arg(long, default_value = "dp", value_parser = ["dp", "eo"])]
    metric: String,
    #[arg(long, value_delimiter = ',')]
    thresholds: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long, required = true)]
    report: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into())
}

fn json_bytes<T: serde::Serialize>(v: &T) -> Result<Vec<u8>> {
    Ok((serde_json::to_string_pretty(v)? + "\n").into_bytes())
}

fn read_reports(path: &Path) -> Result<Vec<ShapleyReport>> {
    let text = std::fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
    match serde_json::from_str::<Vec<ShapleyReport>>(&text) {
        Ok(v) => Ok(v),
        Err(_) => Ok(vec![ShapleyReport::from_json(&text)?]),
    }
}

fn read_runs(path: &Path) -> Result<Vec<RunRecord>> {
    let text = std::fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
    if path.extension().is_some_and(|e| e == "csv") {
        csv::Reader::from_reader(text.as_bytes())
            .deserialize()
            .enumerate()
            .map(|(i, r)| r.map_err(|e| Error::Parse { file: path.display().to_string(), row: i + 1, message: e.to_string() }))
            .collect()
    } else {
        Ok(serde_json::from_str(&text)?)
    }
}

fn data_prepare(config: Option<PathBuf>, dataset: Option<DatasetChoice>, data_dir: Option<PathBuf>, seed: Option<u64>, out: &Path) -> Result<()> {
    let args = DataArgs {
        config,
        bundle: None,
        dataset,
        data_dir,
        split_seed: seed,
    };
    let ds = args.load(&args.config()?)?;
    write_bundle(&ds, out)?;
    let s = DatasetSummary::of(&ds);
    println!("{}: {} columns, {} players", s.name, s.columns, s.players.len());
    for (split, n) in &s.rows {
        println!("  {split}: {n} rows");
    }
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = a.data.config()?;
    if let Some(m) = a.method {
        cfg.method = m;
    }
    if let Some(n) = a.notion {
        cfg.notion = n;
    }
    if let Some(l) = a.lambda {
        cfg.lambda = l;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let ds = a.data.load(&cfg)?;
    let base = match &a.base {
        Some(p) => match load_model(p)? {
            Model::FeedForward(f) => Some(f),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "{}: base must be a plain network, found `{}`",
                    p.display(),
                    other.kind()
                )))
            }
        },
        None => None,
    };
    let trained = pipeline::train_with(&cfg, &ds, base)?;
    pipeline::save_trained(&trained, &a.out)?;
    for (name, p) in trained.predictors().into_iter().filter(|(n, _)| n != "perturbation") {
        let m = pipeline::evaluate(&name, p.as_ref(), &ds, Split::Test)?;
        print_metrics(&m);
        write_atomic(&a.out.join(format!("metrics/{name}.json")), &json_bytes(&m)?)?;
    }
    Ok(())
}

fn print_metrics(m: &ModelMetrics) {
    println!(
        "{}: accuracy {:.4} (hard {:.4}), dp {:.4}, eo {:.4}",
        m.model,
        m.accuracy.value,
        m.accuracy.hard_accuracy.unwrap_or(f64::NAN),
        m.dp.value,
        m.eo.value
    );
}

fn explain(a: &ExplainArgs) -> Result<()> {
    let mut cfg = a.data.config()?;
    if !a.kinds.is_empty() {
        cfg.explain = a.kinds.clone();
    }
    if let Some(e) = a.estimator {
        cfg.estimator = e;
    }
    if let Some(m) = a.permutations {
        cfg.permutations = m;
    }
    if let Some(b) = a.background {
        cfg.background = b;
    }
    if let Some(r) = a.rows {
        cfg.rows = r;
    }
    if let Some(s) = a.split {
        cfg.explain_split = s;
    }
    if let Some(s) = a.seed {
        cfg.explain_seed = s;
    }
    if let Some(t) = a.target_class {
        cfg.target_class = t;
    }
    if !a.resolving.is_empty() {
        cfg.resolving = a.resolving.clone();
    }
    cfg.validate()?;
    let ds = a.data.load(&cfg)?;
    let model = load_model(&a.model)?;
    let base = a.base.as_deref().map(load_model).transpose()?;
    let (name, predictor): (String, Box<dyn Predictor + '_>) = match &base {
        Some(b) => (
            format!("{}-minus-{}", file_stem(&a.model), file_stem(a.base.as_deref().unwrap())),
            Box::new(Difference { lhs: &model, rhs: b }),
        ),
        None => (file_stem(&a.model), Box::new(&model)),
    };
    let est = cfg.estimator_config();
    for &kind in &cfg.explain {
        let reports = global_shapley(&cfg.explain_spec(kind), predictor.as_ref(), &ds, cfg.explain_split, &est)?;
        pipeline::write_reports(&a.out, &name, kind.as_str(), &reports)?;
        for r in &reports {
            print_report(r);
        }
    }
    Ok(())
}

fn print_report(r: &ShapleyReport) {
    match &r.cell {
        Some(c) => println!("{} [{c}] metric {:.6}, offset {:.6}", r.kind, r.metric_value, r.offset),
        None => println!("{} metric {:.6}, offset {:.6}", r.kind, r.metric_value, r.offset),
    }
    for i in r.ranked() {
        match &r.se {
            Some(se) => println!("  {:<20} {:+.6} (se {:.6})", r.players[i], r.phi[i], se[i]),
            None => println!("  {:<20} {:+.6}", r.players[i], r.phi[i]),
        }
    }
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let mut runs = Vec::new();
    if !a.model.is_empty() {
        let cfg = a.data.config()?;
        let ds = a.data.load(&cfg)?;
        for path in &a.model {
            let model = load_model(path)?;
            let m = pipeline::evaluate(&file_stem(path), &model, &ds, a.split)?;
            print_metrics(&m);
            if let Some(out) = &a.out {
                write_atomic(&out.join(format!("metrics/{}.json", m.model)), &json_bytes(&m)?)?;
            }
            runs.push(RunRecord {
                method: m.model.clone(),
                accuracy: m.accuracy.hard_accuracy.unwrap_or(m.accuracy.value),
                fairness: if a.metric == "eo" { m.eo.value } else { m.dp.value },
            });
        }
    }
    for path in &a.runs {
        runs.extend(read_runs(path)?);
    }
    if !a.thresholds.is_empty() {
        let table = threshold_table(&a.metric, &runs, &a.thresholds);
        print!("{}", table.to_text());
        if let Some(out) = &a.out {
            write_atomic(&out.join(format!("tables/{}_thresholds.csv", a.metric)), table.to_csv().as_bytes())?;
            write_atomic(&out.join(format!("tables/{}_thresholds.txt", a.metric)), table.to_text().as_bytes())?;
        }
    }
    Ok(())
}

fn plot(a: &PlotArgs) -> Result<()> {
    for path in &a.report {
        for r in read_reports(path)? {
            r.validate()?;
            let file = file_stem(path);
            let prefix = file.strip_suffix(&format!("_{}", r.kind)).unwrap_or(&file);
            let stem = pipeline::report_stem(prefix, &r);
            let target = a.out.join(format!("{stem}.svg"));
            write_atomic(&target, render_waterfall(&r, &WaterfallOptions::default()).as_bytes())?;
            println!("{}", target.display());
        }
    }
    Ok(())
}

fn verify(dir: &Path) -> Result<bool> {
    let v = pipeline::verify_dir(dir)?;
    for c in &v.checks {
        if !c.ok {
            println!("FAIL {}: {}", c.name, c.detail);
        }
    }
    let failed = v.checks.iter().filter(|c| !c.ok).count();
    println!("{} checks, {} failed", v.checks.len(), failed);
    Ok(v.ok())
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Data(DataCommand::Prepare {
            config,
            dataset,
            data_dir,
            seed,
            out,
        }) => data_prepare(config, dataset, data_dir, seed, &out)?,
        Command::Train(a) => train(&a)?,
        Command::Explain(a) => explain(&a)?,
        Command::Evaluate(a) => evaluate(&a)?,
        Command::Plot(a) => plot(&a)?,
        Command::Verify { dir } => return verify(&dir),
        Command::Run { config, out } => {
            let mut cfg = ExperimentConfig::load(config.as_deref())?;
            if let Some(o) = out {
                cfg.out = o;
            }
            let dir = pipeline::run(&cfg)?;
            println!("{}", dir.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(2)
        }
    }
}
