//! Command-line front end: `train`, `predict`, `eval`, and `bench`.
//!
//! Exit codes: 0 on success, 1 on runtime or validation failures, 2 on
//! usage errors. `train` prints one `round,train_metric[,valid_metric]`
//! line per evaluation period followed by a `#`-prefixed stage-time
//! summary; `bench` prints a machine-readable CSV to stdout and an aligned
//! table to stderr. Besides file paths, `--data` accepts
//! `synthetic:regression:ROWSxCOLS` or `synthetic:classification:ROWSxCOLS`
//! to generate data from `--seed` on the fly.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::booster::{save_model, train, BoosterConfig, TrainReport};
use crate::data::{load_csv, load_libsvm, make_synthetic, DataMatrix, IndexBase, SyntheticKind};
use crate::error::{Error, Result};
use crate::grower::{GrowPolicy, TrainParams};
use crate::model::Model;
use crate::objective::{sigmoid, Metric, Objective};

#[derive(Parser)]
#[command(
    name = "histboost",
    version,
    about = "Histogram-based gradient boosted decision trees"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and report metrics per evaluation period
    Train(TrainCmd),
    /// Write one margin (or probability) per input row
    Predict(PredictCmd),
    /// Evaluate a saved model on a dataset
    Eval(EvalCmd),
    /// Train across a grid of worker counts and report per-stage times
    Bench(BenchCmd),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FileFormat {
    Csv,
    Libsvm,
}

#[derive(Args)]
struct DataArgs {
    /// Input file, or synthetic:<regression|classification>:<ROWS>x<COLS>
    #[arg(long)]
    data: String,
    /// Input file format
    #[arg(long, value_enum, default_value_t = FileFormat::Csv)]
    format: FileFormat,
    /// Label column index for CSV input
    #[arg(long, default_value_t = 0)]
    label_column: usize,
    /// Treat the first CSV line as a header
    #[arg(long, default_value_t = false)]
    header: bool,
    /// Feature index base of libsvm input (0 or 1)
    #[arg(long, default_value_t = 1)]
    libsvm_base: u8,
}

#[derive(Args)]
struct TrainOpts {
    #[arg(long, default_value = "reg:squarederror")]
    objective: String,
    /// Metric tag (rmse, accuracy, logloss); defaults per objective
    #[arg(long)]
    metric: Option<String>,
    #[arg(long, default_value_t = 100)]
    rounds: usize,
    #[arg(long, default_value_t = 6)]
    max_depth: usize,
    /// Leaf budget for lossguide growth; 0 = unbounded
    #[arg(long, default_value_t = 0)]
    max_leaves: usize,
    #[arg(long, default_value = "depthwise")]
    grow_policy: String,
    #[arg(long, default_value_t = 0.3)]
    eta: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    min_child_weight: f64,
    #[arg(long, default_value_t = 255)]
    max_bins: usize,
    /// Logical worker count; results do not depend on it
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Seed for synthetic data generation
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rounds between metric reports
    #[arg(long, default_value_t = 10)]
    eval_period: usize,
}

#[derive(Args)]
struct TrainCmd {
    #[command(flatten)]
    data: DataArgs,
    /// Optional validation dataset (same format flags)
    #[arg(long)]
    valid: Option<String>,
    #[command(flatten)]
    opts: TrainOpts,
    /// Write the trained model here
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictCmd {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model_in: PathBuf,
    /// Output file (stdout when absent)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Emit sigmoid(margin) instead of the raw margin (logistic models)
    #[arg(long, default_value_t = false)]
    output_prob: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalCmd {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model_in: PathBuf,
    /// Metric tag; defaults to the model objective's metric
    #[arg(long)]
    metric: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchCmd {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    opts: TrainOpts,
    /// Comma-separated worker counts, e.g. 1,2,4
    #[arg(long, default_value = "1,2,4")]
    workers_list: String,
}

/// Parse argv and dispatch. Returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap exits 0 for --help/--version, 2 for usage errors.
            e.exit();
        }
    };
    let result = match cli.command {
        Command::Train(cmd) => cmd_train(cmd),
        Command::Predict(cmd) => cmd_predict(cmd),
        Command::Eval(cmd) => cmd_eval(cmd),
        Command::Bench(cmd) => cmd_bench(cmd),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn parse_index_base(v: u8) -> Result<IndexBase> {
    match v {
        0 => Ok(IndexBase::Zero),
        1 => Ok(IndexBase::One),
        other => Err(Error::InvalidInput(format!(
            "--libsvm-base must be 0 or 1, got {other}"
        ))),
    }
}

/// `synthetic:<kind>:<rows>x<cols>` pseudo-paths generate data on the fly.
fn parse_synthetic_spec(spec: &str) -> Result<(SyntheticKind, usize, usize)> {
    let usage = "expected synthetic:<regression|classification>:<ROWS>x<COLS>";
    let mut parts = spec.splitn(3, ':');
    let _ = parts.next(); // "synthetic"
    let kind = match parts.next() {
        Some("regression") => SyntheticKind::Regression,
        Some("classification") => SyntheticKind::Classification,
        _ => return Err(Error::InvalidInput(format!("{usage}, got '{spec}'"))),
    };
    let shape = parts
        .next()
        .ok_or_else(|| Error::InvalidInput(format!("{usage}, got '{spec}'")))?;
    let (rows, cols) = shape
        .split_once('x')
        .ok_or_else(|| Error::InvalidInput(format!("{usage}, got '{spec}'")))?;
    let rows: usize = rows
        .parse()
        .map_err(|_| Error::InvalidInput(format!("bad row count in '{spec}'")))?;
    let cols: usize = cols
        .parse()
        .map_err(|_| Error::InvalidInput(format!("bad column count in '{spec}'")))?;
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidInput("synthetic shape must be >= 1x1".to_string()));
    }
    Ok((kind, rows, cols))
}

fn load_dataset(spec: &str, args: &DataArgs, seed: u64) -> Result<DataMatrix> {
    if spec.starts_with("synthetic:") {
        let (kind, rows, cols) = parse_synthetic_spec(spec)?;
        return Ok(make_synthetic(kind, rows, cols, seed));
    }
    match args.format {
        FileFormat::Csv => load_csv(spec, args.label_column, args.header),
        FileFormat::Libsvm => load_libsvm(spec, parse_index_base(args.libsvm_base)?),
    }
}

fn booster_config(opts: &TrainOpts, workers: usize) -> Result<BoosterConfig> {
    let objective = Objective::from_tag(&opts.objective)?;
    let metric = match &opts.metric {
        Some(tag) => Metric::from_tag(tag)?,
        None => objective.default_metric(),
    };
    Ok(BoosterConfig {
        params: TrainParams {
            max_depth: opts.max_depth,
            max_leaves: opts.max_leaves,
            learning_rate: opts.eta,
            reg_lambda: opts.lambda,
            gamma: opts.gamma,
            min_child_weight: opts.min_child_weight,
            grow_policy: GrowPolicy::from_tag(&opts.grow_policy)?,
        },
        n_rounds: opts.rounds,
        objective,
        metric,
        max_bins: opts.max_bins,
        workers,
        seed: opts.seed,
        eval_period: opts.eval_period,
        record_round_margins: false,
    })
}

fn print_metric_lines(report: &TrainReport) {
    for r in &report.records {
        match r.valid_metric {
            Some(v) => println!("{},{},{}", r.round, r.train_metric, v),
            None => println!("{},{}", r.round, r.train_metric),
        }
    }
}

fn print_stage_summary(report: &TrainReport) {
    let s = &report.stages;
    println!(
        "# stages: quantize_s={:.6} histogram_s={:.6} evaluate_s={:.6} predict_s={:.6} gradient_s={:.6} total_s={:.6}",
        s.quantize.as_secs_f64(),
        s.histogram.as_secs_f64(),
        s.evaluate.as_secs_f64(),
        s.predict.as_secs_f64(),
        s.gradient.as_secs_f64(),
        report.total.as_secs_f64(),
    );
}

fn cmd_train(cmd: TrainCmd) -> Result<()> {
    let config = booster_config(&cmd.opts, cmd.opts.workers)?;
    let dtrain = load_dataset(&cmd.data.data, &cmd.data, cmd.opts.seed)?;
    let dvalid = cmd
        .valid
        .as_ref()
        .map(|v| load_dataset(v, &cmd.data, cmd.opts.seed.wrapping_add(1)))
        .transpose()?;
    let (model, report) = train(&config, &dtrain, dvalid.as_ref())?;
    print_metric_lines(&report);
    print_stage_summary(&report);
    if let Some(path) = &cmd.model_out {
        save_model(&model, path)?;
    }
    Ok(())
}

fn check_feature_counts(model: &Model, data: &DataMatrix) {
    if data.n_features() > model.n_features() {
        eprintln!(
            "note: data has {} features, model uses {}; extra features are ignored as missing",
            data.n_features(),
            model.n_features()
        );
    }
}

fn cmd_predict(cmd: PredictCmd) -> Result<()> {
    let model = crate::booster::load_model(&cmd.model_in)?;
    if cmd.output_prob && model.objective != Objective::Logistic {
        return Err(Error::InvalidInput(format!(
            "--output-prob requires a binary:logistic model, found {}",
            model.objective.tag()
        )));
    }
    let data = load_dataset(&cmd.data.data, &cmd.data, cmd.seed)?;
    check_feature_counts(&model, &data);
    let margins = model.predict(&data, None);
    let mut out = String::with_capacity(margins.len() * 20);
    for &m in &margins {
        let value = if cmd.output_prob { sigmoid(m) } else { m };
        out.push_str(&value.to_string());
        out.push('\n');
    }
    match &cmd.out {
        Some(path) => fs::write(path, out).map_err(|e| Error::io(path, e))?,
        None => print!("{out}"),
    }
    Ok(())
}

fn cmd_eval(cmd: EvalCmd) -> Result<()> {
    let model = crate::booster::load_model(&cmd.model_in)?;
    let metric = match &cmd.metric {
        Some(tag) => Metric::from_tag(tag)?,
        None => model.objective.default_metric(),
    };
    let data = load_dataset(&cmd.data.data, &cmd.data, cmd.seed)?;
    check_feature_counts(&model, &data);
    let margins = model.predict(&data, None);
    let value = metric.eval(&margins, data.labels())?;
    println!("{} {}", metric.tag(), value);
    Ok(())
}

fn parse_workers_list(list: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for tok in list.split(',') {
        let w: usize = tok.trim().parse().map_err(|_| {
            Error::InvalidInput(format!("bad worker count '{tok}' in --workers-list"))
        })?;
        if w == 0 {
            return Err(Error::InvalidInput(
                "worker counts must be >= 1".to_string(),
            ));
        }
        out.push(w);
    }
    if out.is_empty() {
        return Err(Error::InvalidInput("--workers-list is empty".to_string()));
    }
    Ok(out)
}

pub const BENCH_CSV_HEADER: &str =
    "workers,total_s,quantize_s,histogram_s,evaluate_s,predict_s,gradient_s,metric";

fn cmd_bench(cmd: BenchCmd) -> Result<()> {
    let workers_list = parse_workers_list(&cmd.workers_list)?;
    let data = load_dataset(&cmd.data.data, &cmd.data, cmd.opts.seed)?;
    let metric_tag = {
        let config = booster_config(&cmd.opts, 1)?;
        config.metric.tag()
    };

    struct BenchRow {
        workers: usize,
        total: f64,
        quantize: f64,
        histogram: f64,
        evaluate: f64,
        predict: f64,
        gradient: f64,
        metric: f64,
    }

    let mut rows = Vec::new();
    for &w in &workers_list {
        let config = booster_config(&cmd.opts, w)?;
        let (_, report) = train(&config, &data, None)?;
        let s = &report.stages;
        rows.push(BenchRow {
            workers: w,
            total: report.total.as_secs_f64(),
            quantize: s.quantize.as_secs_f64(),
            histogram: s.histogram.as_secs_f64(),
            evaluate: s.evaluate.as_secs_f64(),
            predict: s.predict.as_secs_f64(),
            gradient: s.gradient.as_secs_f64(),
            metric: report
                .records
                .last()
                .map(|r| r.train_metric)
                .unwrap_or(f64::NAN),
        });
    }

    // Machine-readable CSV on stdout.
    println!("{BENCH_CSV_HEADER}");
    for r in &rows {
        println!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            r.workers, r.total, r.quantize, r.histogram, r.evaluate, r.predict, r.gradient, r.metric
        );
    }

    // Human table on stderr, metric column labeled by its tag.
    let mut t = String::new();
    let _ = writeln!(
        t,
        "{:>7} {:>10} {:>11} {:>12} {:>11} {:>10} {:>11} {:>14}",
        "workers", "total(s)", "quantize(s)", "histogram(s)", "evaluate(s)", "predict(s)",
        "gradient(s)", metric_tag
    );
    for r in &rows {
        let _ = writeln!(
            t,
            "{:>7} {:>10.3} {:>11.3} {:>12.3} {:>11.3} {:>10.3} {:>11.3} {:>14.6}",
            r.workers, r.total, r.quantize, r.histogram, r.evaluate, r.predict, r.gradient,
            r.metric
        );
    }
    eprint!("{t}");
    Ok(())
}
