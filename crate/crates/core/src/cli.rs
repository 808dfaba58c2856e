//! The `gbfs` command-line tool.
//!
//! Flag errors exit with status 2 (through clap), data and model errors
//! with status 1.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::baseline::{l1lr_train, smooth_loss, LinearModel, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::boosting::{error_rate_from_margins, BoostingRun, Ensemble, GbfsConfig, IterationRecord};
use crate::costmodel::{load_bags, load_cost_table, BagAssignment, CostPolicy, FeatureState};
use crate::data::{
    load_csv, load_csv_features, load_libsvm, make_synthetic_bags, make_synthetic_box,
    make_synthetic_xor, split, BaggedDataConfig, Dataset, LabelColumn,
};
use crate::error::{GbfsError, Result};
use crate::objective::{feature_weights, gbfs_objective, ObjectiveReport};
use crate::persist::{load_model, save_model, SavedModel};

/// The trade-off values swept by default: 2^k for k in {-3..3, 5, 7, 9}.
pub const DEFAULT_MU_GRID: [f64; 10] = [0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 32.0, 128.0, 512.0];

#[derive(Debug, Parser)]
#[command(name = "gbfs", version, about = "Gradient boosted trees with embedded feature selection")]
pub struct Cli {
    /// Log progress to standard error (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write it as JSON.
    Train(TrainArgs),
    /// Apply a model to a data file.
    Predict(PredictArgs),
    /// Train across a grid of mu values and write error curves as CSV.
    Sweep(SweepArgs),
    /// Print selected features, weights, objective terms and history as JSON.
    Report(ReportArgs),
    /// Write a synthetic dataset.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Libsvm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Gbfs,
    L1lr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Synthetic {
    Xor,
    Box,
    Bags,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Training data file.
    #[arg(long)]
    pub data: PathBuf,

    /// File format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<Format>,

    /// CSV label column: zero-based index, header name, or "last".
    #[arg(long, default_value = "last")]
    pub label_column: LabelColumn,
}

#[derive(Debug, Args)]
pub struct HoldoutArgs {
    /// Separate test file in the same format as --data.
    #[arg(long, conflicts_with = "split")]
    pub test: Option<PathBuf>,

    /// Fraction of --data used for training; the rest is the test set.
    #[arg(long, value_parser = parse_fraction)]
    pub split: Option<f64>,

    #[arg(long, default_value_t = 13)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    /// JSON bag assignment: {"bags": {"name": [feature, ...]}}.
    #[arg(long, conflicts_with = "costs")]
    pub bags: Option<PathBuf>,

    /// JSON cost table: {"default": c, "costs": {...}, "groups": {...}}.
    #[arg(long)]
    pub costs: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BoostArgs {
    #[arg(long, default_value_t = 1.0, value_parser = parse_mu, allow_hyphen_values = true)]
    pub mu: f64,

    /// Maximum number of trees.
    #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u64).range(1..))]
    pub iters: u64,

    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    pub depth: u64,

    #[arg(long, default_value_t = 0.1, value_parser = parse_learning_rate)]
    pub learning_rate: f64,

    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub min_leaf: u64,

    /// Rescale every tree to unit norm on the training set.
    #[arg(long)]
    pub normalize_trees: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub holdout: HoldoutArgs,
    #[command(flatten)]
    pub costs: CostArgs,
    #[command(flatten)]
    pub boost: BoostArgs,

    /// Output model file.
    #[arg(long)]
    pub model: PathBuf,

    #[arg(long, value_enum, default_value = "gbfs")]
    pub method: Method,

    /// L1 weight for the logistic regression baseline.
    #[arg(long, required_if_eq("method", "l1lr"), value_parser = parse_non_negative)]
    pub lambda: Option<f64>,

    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    pub max_iters: usize,

    #[arg(long, default_value_t = DEFAULT_TOL, value_parser = parse_non_negative)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[arg(long)]
    pub model: PathBuf,

    /// Treat every CSV column as a feature.
    #[arg(long)]
    pub unlabeled: bool,

    /// Write raw margins instead of labels.
    #[arg(long)]
    pub margins: bool,

    /// Output file; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub holdout: HoldoutArgs,
    #[command(flatten)]
    pub costs: CostArgs,
    #[command(flatten)]
    pub boost: BoostArgs,

    /// Comma-separated mu values.
    #[arg(long, value_parser = parse_mu_grid, allow_hyphen_values = true)]
    pub mu_grid: Option<MuGrid>,

    /// Output CSV; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub model: PathBuf,

    /// Data for the loss terms of the objective.
    #[arg(long)]
    pub data: Option<PathBuf>,

    #[arg(long, value_enum, requires = "data")]
    pub format: Option<Format>,

    #[arg(long, default_value = "last", requires = "data")]
    pub label_column: LabelColumn,

    /// Bag assignment used to list the bags the model touches.
    #[arg(long)]
    pub bags: Option<PathBuf>,

    /// Trade-off used for the penalty term.
    #[arg(long, default_value_t = 1.0, value_parser = parse_mu, allow_hyphen_values = true)]
    pub mu: f64,

    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub kind: Synthetic,

    #[arg(long, default_value_t = 1000)]
    pub n: usize,

    #[arg(long, default_value_t = 13)]
    pub seed: u64,

    /// Output CSV.
    #[arg(long)]
    pub output: PathBuf,

    /// Where to write the bag assignment for --kind bags.
    #[arg(long)]
    pub bags_output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MuGrid(pub Vec<f64>);

fn parse_mu(s: &str) -> std::result::Result<f64, String> {
    match s.trim().parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        Ok(_) => Err("mu must be non-negative".into()),
        Err(_) => Err(format!("mu must be a number, got {s:?}")),
    }
}

fn parse_mu_grid(s: &str) -> std::result::Result<MuGrid, String> {
    let values = s
        .split(',')
        .map(parse_mu)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(MuGrid(values))
}

fn parse_fraction(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v < 1.0 => Ok(v),
        _ => Err("split must be a fraction strictly between 0 and 1".into()),
    }
}

fn parse_learning_rate(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v <= 1.0 => Ok(v),
        _ => Err("learning rate must lie in (0, 1]".into()),
    }
}

fn parse_non_negative(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err("value must be a non-negative number".into()),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit status.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(args) => run_train(&args),
        Command::Predict(args) => run_predict(&args),
        Command::Sweep(args) => run_sweep(&args),
        Command::Report(args) => run_report(&args),
        Command::Generate(args) => run_generate(&args),
    }
}

fn resolve_format(path: &Path, format: Option<Format>) -> Format {
    format.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some("libsvm" | "svm") => Format::Libsvm,
        _ => Format::Csv,
    })
}

fn load_data(
    path: &Path,
    format: Option<Format>,
    label_column: &LabelColumn,
    n_features: Option<usize>,
) -> Result<Dataset> {
    match resolve_format(path, format) {
        Format::Csv => load_csv(path, label_column),
        Format::Libsvm => load_libsvm(path, n_features),
    }
}

fn check_dims(expected: usize, found: usize, what: &str) -> Result<()> {
    if expected != found {
        return Err(GbfsError::InvalidArgument(format!(
            "model has {expected} features but {what} has {found}"
        )));
    }
    Ok(())
}

/// Training and optional test sets from --data plus --test or --split.
fn load_train_test(
    data: &DataArgs,
    holdout: &HoldoutArgs,
    default_split: Option<f64>,
) -> Result<(Dataset, Option<Dataset>)> {
    let full = load_data(&data.data, data.format, &data.label_column, None)?;
    if let Some(test_path) = &holdout.test {
        let test = load_data(test_path, data.format, &data.label_column, Some(full.n_features()))?;
        if test.n_features() != full.n_features() {
            return Err(GbfsError::InvalidArgument(format!(
                "training data has {} features but test data has {}",
                full.n_features(),
                test.n_features()
            )));
        }
        return Ok((full, Some(test)));
    }
    match holdout.split.or(default_split) {
        Some(frac) => {
            let (train, test) = split(&full, frac, holdout.seed)?;
            Ok((train, Some(test)))
        }
        None => Ok((full, None)),
    }
}

fn cost_state(costs: &CostArgs, d: usize) -> Result<FeatureState> {
    let policy = if let Some(path) = &costs.bags {
        CostPolicy::Bags(load_bags(path, d)?)
    } else if let Some(path) = &costs.costs {
        CostPolicy::CustomTable(load_cost_table(path, d)?)
    } else {
        CostPolicy::Uniform
    };
    FeatureState::new(d, policy)
}

fn boost_config(boost: &BoostArgs, mu: f64, seed: u64) -> GbfsConfig {
    GbfsConfig {
        mu,
        iterations: boost.iters as usize,
        learning_rate: boost.learning_rate,
        depth: boost.depth as usize,
        min_leaf: boost.min_leaf as usize,
        seed,
        normalize_trees: boost.normalize_trees,
    }
}

fn feature_label(ds_names: Option<&[String]>, f: usize) -> String {
    ds_names
        .and_then(|n| n.get(f).cloned())
        .unwrap_or_else(|| format!("f{f}"))
}

fn name_list(names: Option<&[String]>, features: &[usize]) -> Vec<String> {
    features.iter().map(|&f| feature_label(names, f)).collect()
}

fn run_train(args: &TrainArgs) -> Result<()> {
    let (train, test) = load_train_test(&args.data, &args.holdout, None)?;
    let (model, selected) = match args.method {
        Method::Gbfs => {
            let state = cost_state(&args.costs, train.n_features())?;
            let config = boost_config(&args.boost, args.boost.mu, args.holdout.seed);
            let ensemble = crate::boosting::train(&train, &config, state)?;
            let selected = ensemble.selected_features().to_vec();
            (SavedModel::Gbfs(ensemble), selected)
        }
        Method::L1lr => {
            let lambda = args.lambda.expect("clap requires --lambda with l1lr");
            let linear = l1lr_train(&train, lambda, args.max_iters, args.tol)?;
            let selected = linear.support();
            (SavedModel::Linear(linear), selected)
        }
    };
    save_model(&args.model, &model)?;

    let train_err = dataset_error(&model, &train)?;
    let names = name_list(train.feature_names(), &selected);
    let mut summary = format!(
        "{}: {} selected features [{}], train error {:.4}",
        model.kind(),
        selected.len(),
        names.join(", "),
        train_err
    );
    if let SavedModel::Gbfs(m) = &model {
        summary = format!("{summary}, {} trees", m.len());
    }
    if let Some(test) = &test {
        summary = format!("{summary}, test error {:.4}", dataset_error(&model, test)?);
    }
    println!("{summary}");
    Ok(())
}

fn model_margins(model: &SavedModel, ds: &Dataset) -> Result<Vec<f64>> {
    check_dims(model.n_features(), ds.n_features(), "the data")?;
    match model {
        SavedModel::Gbfs(m) => m.margins(ds),
        SavedModel::Linear(m) => m.margins(ds),
    }
}

fn dataset_error(model: &SavedModel, ds: &Dataset) -> Result<f64> {
    Ok(error_rate_from_margins(ds.labels(), &model_margins(model, ds)?))
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| GbfsError::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| GbfsError::io("<stdout>", e))
        }
    }
}

fn run_predict(args: &PredictArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let d = model.n_features();
    let (margins, labels) = if args.unlabeled {
        if resolve_format(&args.data.data, args.data.format) != Format::Csv {
            return Err(GbfsError::InvalidArgument(
                "--unlabeled applies to CSV input only".into(),
            ));
        }
        let rows = load_csv_features(&args.data.data)?;
        let mut margins = Vec::with_capacity(rows.len());
        for row in &rows {
            check_dims(d, row.len(), "the data")?;
            margins.push(model.margin(row)?);
        }
        (margins, None)
    } else {
        let ds = load_data(&args.data.data, args.data.format, &args.data.label_column, Some(d))?;
        (model_margins(&model, &ds)?, Some(ds.labels().to_vec()))
    };

    let mut text = String::with_capacity(margins.len() * 8);
    for &m in &margins {
        if args.margins {
            text.push_str(&format!("{m}\n"));
        } else {
            text.push_str(if m >= 0.0 { "1\n" } else { "-1\n" });
        }
    }
    write_output(args.output.as_deref(), &text)?;
    if let Some(labels) = labels {
        let err = error_rate_from_margins(&labels, &margins);
        let wrong = (err * labels.len() as f64).round() as usize;
        eprintln!("error rate {err:.4} ({wrong}/{})", labels.len());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub mu: f64,
    pub iterations_used: usize,
    pub num_selected: usize,
    pub train_error: f64,
    pub test_error: f64,
    pub selected: Vec<usize>,
}

/// Iteration counts at which sweep rows are recorded: powers of two up to
/// `iterations`, plus `iterations` itself.
pub fn checkpoints(iterations: usize) -> Vec<usize> {
    let mut out: Vec<usize> = std::iter::successors(Some(1usize), |c| c.checked_mul(2))
        .take_while(|&c| c < iterations)
        .collect();
    out.push(iterations);
    out
}

/// Trains one model per `mu` and records errors at each checkpoint. Rows
/// come back sorted by `(mu, iterations_used)`.
pub fn sweep(
    train: &Dataset,
    test: &Dataset,
    state: &FeatureState,
    base: &GbfsConfig,
    grid: &[f64],
) -> Result<Vec<SweepRow>> {
    let per_mu: Vec<Result<Vec<SweepRow>>> = grid
        .par_iter()
        .map(|&mu| sweep_one(train, test, state, &GbfsConfig { mu, ..base.clone() }))
        .collect();
    let mut rows = Vec::new();
    for r in per_mu {
        rows.extend(r?);
    }
    rows.sort_by(|a, b| {
        a.mu.total_cmp(&b.mu)
            .then(a.iterations_used.cmp(&b.iterations_used))
    });
    Ok(rows)
}

fn sweep_one(
    train: &Dataset,
    test: &Dataset,
    state: &FeatureState,
    config: &GbfsConfig,
) -> Result<Vec<SweepRow>> {
    let mut run = BoostingRun::new(train, config.clone(), state.clone())?;
    let mut test_margins = vec![0.0; test.n_samples()];
    let mut rows: Vec<SweepRow> = Vec::new();
    for target in checkpoints(config.iterations) {
        while run.ensemble().len() < target && run.step()? {
            let tree = run.ensemble().trees().last().expect("a tree was just added");
            for (i, m) in test_margins.iter_mut().enumerate() {
                *m += config.learning_rate * tree.predict_sample(test, i);
            }
        }
        let used = run.ensemble().len();
        if rows.last().is_some_and(|r| r.iterations_used == used) {
            break;
        }
        let selected = run.ensemble().selected_features().to_vec();
        rows.push(SweepRow {
            mu: config.mu,
            iterations_used: used,
            num_selected: selected.len(),
            train_error: error_rate_from_margins(train.labels(), run.margins()),
            test_error: error_rate_from_margins(test.labels(), &test_margins),
            selected,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("mu,iters,num_selected,train_error,test_error\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6}\n",
            r.mu, r.iterations_used, r.num_selected, r.train_error, r.test_error
        ));
    }
    out
}

fn run_sweep(args: &SweepArgs) -> Result<()> {
    let (train, test) = load_train_test(&args.data, &args.holdout, Some(0.8))?;
    let test = test.expect("a test set always exists for sweeps");
    let state = cost_state(&args.costs, train.n_features())?;
    let base = boost_config(&args.boost, args.boost.mu, args.holdout.seed);
    let grid = args
        .mu_grid
        .as_ref()
        .map_or_else(|| DEFAULT_MU_GRID.to_vec(), |g| g.0.clone());
    let rows = sweep(&train, &test, &state, &base, &grid)?;
    write_output(args.output.as_deref(), &sweep_csv(&rows))
}

#[derive(Serialize)]
struct GbfsReport<'a> {
    kind: &'static str,
    selected: &'a [usize],
    selected_names: Vec<String>,
    feature_weights: Vec<f64>,
    objective: Option<ObjectiveReport>,
    history: &'a [IterationRecord],
    bags_touched: Option<Vec<String>>,
}

#[derive(Serialize)]
struct LinearReport<'a> {
    kind: &'static str,
    selected: Vec<usize>,
    weights: &'a [f64],
    bias: f64,
    lambda: f64,
    objective: Option<f64>,
    bags_touched: Option<Vec<String>>,
}

fn touched_names(bags: Option<&BagAssignment>, features: &[usize]) -> Option<Vec<String>> {
    bags.map(|b| {
        b.bags_touched(features)
            .into_iter()
            .map(|bag| b.bag_name(bag).to_string())
            .collect()
    })
}

/// JSON report for a trained ensemble.
pub fn gbfs_report(
    model: &Ensemble,
    ds: Option<&Dataset>,
    bags: Option<&BagAssignment>,
    mu: f64,
) -> Result<String> {
    let objective = ds
        .map(|ds| gbfs_objective(model, ds, mu, model.learning_rate()))
        .transpose()?;
    let report = GbfsReport {
        kind: "gbfs",
        selected: model.selected_features(),
        selected_names: name_list(model.feature_names(), model.selected_features()),
        feature_weights: feature_weights(model),
        objective,
        history: model.history(),
        bags_touched: touched_names(bags, model.selected_features()),
    };
    Ok(serde_json::to_string_pretty(&report)?)
}

fn linear_report(
    model: &LinearModel,
    ds: Option<&Dataset>,
    bags: Option<&BagAssignment>,
) -> Result<String> {
    let objective = ds
        .map(|ds| -> Result<f64> {
            let l1: f64 = model.weights.iter().map(|w| w.abs()).sum();
            Ok(smooth_loss(ds, &model.weights, model.bias)? + model.lambda * l1)
        })
        .transpose()?;
    let selected = model.support();
    let report = LinearReport {
        kind: "linear",
        bags_touched: touched_names(bags, &selected),
        selected,
        weights: &model.weights,
        bias: model.bias,
        lambda: model.lambda,
        objective,
    };
    Ok(serde_json::to_string_pretty(&report)?)
}

fn run_report(args: &ReportArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let d = model.n_features();
    let ds = args
        .data
        .as_ref()
        .map(|p| load_data(p, args.format, &args.label_column, Some(d)))
        .transpose()?;
    if let Some(ds) = &ds {
        check_dims(d, ds.n_features(), "the data")?;
    }
    let bags = args.bags.as_ref().map(|p| load_bags(p, d)).transpose()?;
    let text = match &model {
        SavedModel::Gbfs(m) => gbfs_report(m, ds.as_ref(), bags.as_ref(), args.mu)?,
        SavedModel::Linear(m) => linear_report(m, ds.as_ref(), bags.as_ref())?,
    };
    write_output(args.output.as_deref(), &(text + "\n"))
}

fn run_generate(args: &GenerateArgs) -> Result<()> {
    if args.bags_output.is_some() && args.kind != Synthetic::Bags {
        return Err(GbfsError::InvalidArgument(
            "--bags-output applies to --kind bags only".into(),
        ));
    }
    let ds = match args.kind {
        Synthetic::Xor => make_synthetic_xor(args.n, args.seed)?,
        Synthetic::Box => make_synthetic_box(args.n, args.seed)?,
        Synthetic::Bags => {
            let config = BaggedDataConfig { n: args.n, ..Default::default() };
            let (ds, bags) = make_synthetic_bags(&config, args.seed)?;
            if let Some(path) = &args.bags_output {
                fs::write(path, bags.to_json() + "\n").map_err(|e| GbfsError::io(path, e))?;
            }
            ds
        }
    };
    ds.write_csv(&args.output)
}
