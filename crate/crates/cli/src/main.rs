//! `affect`: evaluation, fairness, zero-shot compound recognition, gradient
//! checking and toy multi-task training over sample-record files.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 I/O error, 4 data/schema
//! error, 5 numeric failure (gradient check failed, training diverged).

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use affect_core::coupling::LossWeights;
use affect_core::gradcheck;
use affect_core::io::{read_records, DataError, Format};
use affect_core::metrics::MetricError;
use affect_core::prep::{filter_va_expr_consistency, subsample_frames, PrepError};
use affect_core::record::{Attribute, SampleRecord};
use affect_core::relatedness::{load_tables_from_path, CompoundTable, RelatednessTable, TableError};
use affect_core::report::{
    cer_records, evaluate_overall, fairness_for_attribute, EvaluationReport, TaskSelection,
};
use affect_core::trainer::{ablate, train, TrainConfig, TrainError, ABLATION_VARIANTS};

#[derive(Parser)]
#[command(
    name = "affect",
    version,
    about = "Facial behaviour evaluation: overall metrics, fairness, zero-shot compound recognition and a desk-scale multi-task trainer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Overall metrics (macro F1, mean AU F1, CCC) over a record file
    Evaluate(EvaluateArgs),
    /// Fairness metrics (EOP, EOD, fCCC) per demographic attribute
    Fairness(FairnessArgs),
    /// Zero-shot compound-expression recognition from the prediction heads
    Cer(CerArgs),
    /// Finite-difference verification of every loss gradient
    CheckGrads(CheckGradsArgs),
    /// Train the toy multi-task model on synthetic data
    TrainToy(TrainArgs),
    /// Run the coupling-loss ablation grid (four configurations)
    Ablate(AblateArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Input record file
    #[arg(long)]
    input: PathBuf,
    /// Input format (jsonl or csv); inferred from the extension when omitted
    #[arg(long)]
    format: Option<String>,
    /// Keep every STRIDE-th frame per video before evaluating
    #[arg(long, default_value_t = 1)]
    stride: u64,
    /// Drop records whose expression and VA labels are inconsistent
    #[arg(long)]
    clean_va: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    ingest: IngestArgs,
    /// Comma-separated task list (expr,au,va); default all
    #[arg(long)]
    tasks: Option<String>,
    /// Write the report document here (printed to stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FairnessArgs {
    #[command(flatten)]
    ingest: IngestArgs,
    /// Demographic attribute: age, gender, race or all
    #[arg(long, default_value = "all")]
    attribute: String,
    /// Comma-separated task list (expr,au,va); default all
    #[arg(long)]
    tasks: Option<String>,
    /// Write the report document here (printed to stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CerArgs {
    #[command(flatten)]
    ingest: IngestArgs,
    /// Relatedness/compound table override document (TOML)
    #[arg(long)]
    table: Option<PathBuf>,
    /// Write the report document here (printed to stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckGradsArgs {
    #[arg(long, default_value_t = 17)]
    seed: u64,
    /// Random instances per loss check
    #[arg(long, default_value_t = 200)]
    instances: usize,
    /// Random instances per objective-level (parameter-space) check
    #[arg(long, default_value_t = 100)]
    objective_instances: usize,
    /// Write the report document here (printed to stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Training samples per task set
    #[arg(long, default_value_t = 2500)]
    train_per_task: usize,
    /// Held-out samples per task set
    #[arg(long, default_value_t = 600)]
    val_per_task: usize,
    #[arg(long, default_value_t = 0.02)]
    noise_rate: f64,
    #[arg(long, default_value_t = 32)]
    feature_dim: usize,
    /// Hidden layer widths, comma separated
    #[arg(long, default_value = "64,64")]
    hidden: String,
    /// Five objective weights: expr au va dm sca
    #[arg(long, num_args = 5, value_names = ["EXPR", "AU", "VA", "DM", "SCA"])]
    lambda: Option<Vec<f64>>,
    /// Write the history document here (printed to stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    train: TrainArgs,
}

// ---------------------------------------------------------------------------
// Error-to-exit-code mapping
// ---------------------------------------------------------------------------

enum AppError {
    Usage(String),
    Io(String),
    Data(String),
    Numeric(String),
}

impl AppError {
    fn exit_code(&self) -> u8 {
        match self {
            AppError::Usage(_) => 2,
            AppError::Io(_) => 3,
            AppError::Data(_) => 4,
            AppError::Numeric(_) => 5,
        }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Usage(m) | AppError::Io(m) | AppError::Data(m) | AppError::Numeric(m) => {
                f.write_str(m)
            }
        }
    }
}

impl From<DataError> for AppError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } => AppError::Io(e.to_string()),
            _ => AppError::Data(e.to_string()),
        }
    }
}

impl From<TableError> for AppError {
    fn from(e: TableError) -> Self {
        match e {
            TableError::Io { .. } => AppError::Io(e.to_string()),
            _ => AppError::Data(e.to_string()),
        }
    }
}

impl From<PrepError> for AppError {
    fn from(e: PrepError) -> Self {
        match e {
            PrepError::ZeroStride => AppError::Usage(e.to_string()),
            PrepError::MissingFrameIndex { .. } => AppError::Data(e.to_string()),
        }
    }
}

impl From<MetricError> for AppError {
    fn from(e: MetricError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<TrainError> for AppError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) | TrainError::ZeroCount => AppError::Usage(e.to_string()),
            TrainError::Diverged { .. } | TrainError::NonFiniteGradient { .. } => {
                AppError::Numeric(e.to_string())
            }
            TrainError::DimensionMismatch { .. } => AppError::Data(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Evaluate(args) => evaluate(args),
        Command::Fairness(args) => fairness(args),
        Command::Cer(args) => cer(args),
        Command::CheckGrads(args) => check_grads(args),
        Command::TrainToy(args) => train_toy(args),
        Command::Ablate(args) => run_ablate(args),
    }
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

struct Ingested {
    records: Vec<SampleRecord>,
    read: usize,
    subsampled_out: usize,
    cleaned_out: usize,
}

fn ingest(args: &IngestArgs) -> Result<Ingested, AppError> {
    let format = match &args.format {
        Some(s) => Format::from_str(s).map_err(AppError::Usage)?,
        None => Format::infer(&args.input),
    };
    let mut records = read_records(&args.input, format)?;
    let read = records.len();
    if args.stride != 1 {
        records = subsample_frames(records, args.stride)?;
    }
    let subsampled_out = read - records.len();
    let mut cleaned_out = 0;
    if args.clean_va {
        let outcome = filter_va_expr_consistency(records);
        cleaned_out = outcome.removed.len();
        records = outcome.kept;
    }
    Ok(Ingested { records, read, subsampled_out, cleaned_out })
}

fn ingest_config_json(args: &IngestArgs, ingested: &Ingested) -> serde_json::Value {
    serde_json::json!({
        "input": args.input.display().to_string(),
        "stride": args.stride,
        "clean_va": args.clean_va,
        "records_read": ingested.read,
        "removed_by_subsampling": ingested.subsampled_out,
        "removed_by_cleaning": ingested.cleaned_out,
    })
}

fn parse_tasks(tasks: &Option<String>) -> Result<TaskSelection, AppError> {
    match tasks {
        None => Ok(TaskSelection::default()),
        Some(s) => TaskSelection::parse(s).map_err(AppError::Usage),
    }
}

fn emit_document(out: &Option<PathBuf>, json: &str) -> Result<(), AppError> {
    match out {
        Some(path) => {
            std::fs::write(path, format!("{json}\n"))
                .map_err(|e| AppError::Io(format!("failed to write {}: {e}", path.display())))?;
            println!("report written to {}", path.display());
            Ok(())
        }
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn load_tables_opt(table: &Option<PathBuf>) -> Result<(RelatednessTable, CompoundTable), AppError> {
    match table {
        Some(path) => Ok(load_tables_from_path(path)?),
        None => {
            let relatedness = RelatednessTable::builtin();
            let compounds = CompoundTable::builtin(&relatedness);
            Ok((relatedness, compounds))
        }
    }
}

fn parse_attributes(s: &str) -> Result<Vec<Attribute>, AppError> {
    if s == "all" {
        return Ok(Attribute::ALL.to_vec());
    }
    Ok(vec![Attribute::from_str(s).map_err(AppError::Usage)?])
}

fn parse_lambda(lambda: &Option<Vec<f64>>) -> Result<Option<LossWeights>, AppError> {
    match lambda {
        None => Ok(None),
        Some(values) => {
            let [expr, au, va, dm, sca]: [f64; 5] = values
                .clone()
                .try_into()
                .map_err(|_| AppError::Usage("--lambda takes exactly five values".into()))?;
            LossWeights::new(expr, au, va, dm, sca)
                .map(Some)
                .map_err(|e| AppError::Usage(e.to_string()))
        }
    }
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig, AppError> {
    let hidden: Vec<usize> = args
        .hidden
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| AppError::Usage(format!("invalid hidden width '{part}'")))
        })
        .collect::<Result<_, _>>()?;
    let defaults = TrainConfig::default();
    Ok(TrainConfig {
        seed: args.seed,
        feature_dim: args.feature_dim,
        hidden,
        train_per_task: args.train_per_task,
        val_per_task: args.val_per_task,
        noise_rate: args.noise_rate,
        weights: parse_lambda(&args.lambda)?.unwrap_or(defaults.weights),
        learning_rate: args.lr,
        momentum: args.momentum,
        epochs: args.epochs,
        batch_size: args.batch_size,
    })
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn evaluate(args: EvaluateArgs) -> Result<(), AppError> {
    let tasks = parse_tasks(&args.tasks)?;
    let ingested = ingest(&args.ingest)?;
    let overall = evaluate_overall(&ingested.records, &tasks);

    if let Some(expr) = &overall.expr {
        println!("expr     macro F1 {:.4}  ({} records)", expr.macro_f1, expr.records);
    }
    if let Some(au) = &overall.au {
        println!(
            "au       mean F1  {:.4}  ({} records, {} active AUs)",
            au.mean_f1,
            au.records,
            au.active_aus.len()
        );
    }
    if let Some(va) = &overall.va {
        println!(
            "va       CCC      {:.4}  (valence {:.4}, arousal {:.4}, {} records)",
            va.ccc, va.ccc_valence, va.ccc_arousal, va.records
        );
    }
    for note in &overall.notes {
        println!("note: {note}");
    }

    let mut report = EvaluationReport::new(
        "evaluate",
        ingest_config_json(&args.ingest, &ingested),
        ingested.records.len(),
    );
    report.overall = Some(overall);
    emit_document(&args.out, &report.to_json_pretty())
}

fn fairness(args: FairnessArgs) -> Result<(), AppError> {
    let tasks = parse_tasks(&args.tasks)?;
    let attributes = parse_attributes(&args.attribute)?;
    let ingested = ingest(&args.ingest)?;

    let mut report = EvaluationReport::new(
        "fairness",
        ingest_config_json(&args.ingest, &ingested),
        ingested.records.len(),
    );
    for attribute in attributes {
        let (reports, notes) = fairness_for_attribute(&ingested.records, attribute, &tasks);
        report.fairness.extend(reports);
        report.notes.extend(notes);
    }
    if report.fairness.is_empty() {
        return Err(AppError::Data(format!(
            "no fairness metric could be computed: {}",
            report.notes.join("; ")
        )));
    }

    for fr in &report.fairness {
        use affect_core::metrics::FairnessReport as FR;
        match fr {
            FR::Eop(r) => println!(
                "eop  [{}] {:.4}  ({})",
                r.attribute,
                r.score,
                if r.fair { "fair" } else { "not fair" }
            ),
            FR::Eod(r) => println!(
                "eod  [{}] {:.4}  ({})",
                r.attribute,
                r.score,
                if r.fair { "fair" } else { "not fair" }
            ),
            FR::Fccc(r) => println!("fccc [{}] {:.4}", r.attribute, r.score),
        }
    }
    for note in &report.notes {
        println!("note: {note}");
    }
    emit_document(&args.out, &report.to_json_pretty())
}

fn cer(args: CerArgs) -> Result<(), AppError> {
    let (_, compounds) = load_tables_opt(&args.table)?;
    let ingested = ingest(&args.ingest)?;
    let outcome = cer_records(&ingested.records, &compounds);

    println!(
        "scored {} records ({} skipped for missing heads)",
        outcome.scored, outcome.skipped_missing_heads
    );
    if let Some(accuracy) = outcome.accuracy {
        println!("accuracy {:.4} over {} labeled records", accuracy, outcome.labeled);
    }
    if let Some(f1) = outcome.macro_f1 {
        println!("macro F1 {f1:.4}");
    }

    let document = serde_json::json!({
        "schema_version": affect_core::report::REPORT_SCHEMA_VERSION,
        "tool": affect_core::report::ToolInfo::default(),
        "command": "cer",
        "config": ingest_config_json(&args.ingest, &ingested),
        "record_count": ingested.records.len(),
        "cer": outcome,
    });
    emit_document(&args.out, &serde_json::to_string_pretty(&document).expect("serializes"))
}

fn check_grads(args: CheckGradsArgs) -> Result<(), AppError> {
    if args.instances == 0 || args.objective_instances == 0 {
        return Err(AppError::Usage("instance counts must be positive".into()));
    }
    let report = gradcheck::run_all(args.seed, args.instances, args.objective_instances);
    for outcome in &report.outcomes {
        println!(
            "{: <20} max rel err {:.3e}  over {} instances x {} coords  [{}]",
            outcome.name,
            outcome.max_rel_err,
            outcome.instances,
            outcome.coordinates,
            if outcome.pass { "PASS" } else { "FAIL" }
        );
    }
    let json = serde_json::to_string_pretty(&report).expect("serializes");
    emit_document(&args.out, &json)?;
    if report.pass {
        Ok(())
    } else {
        Err(AppError::Numeric(format!(
            "gradient check failed (tolerance {})",
            report.tolerance
        )))
    }
}

fn train_toy(args: TrainArgs) -> Result<(), AppError> {
    let config = train_config(&args)?;
    let history = train(&config)?;
    for epoch in &history.epochs {
        println!(
            "epoch {:>3}  loss {:.4}  val: macro-F1 {:.4}  AU-F1 {:.4}  CCC {:.4}  consistency {:.4}",
            epoch.epoch,
            epoch.train_loss.total,
            epoch.val_macro_f1,
            epoch.val_au_f1,
            epoch.val_ccc,
            epoch.consistency
        );
    }
    let json = serde_json::to_string_pretty(&history).expect("serializes");
    emit_document(&args.out, &json)
}

fn run_ablate(args: AblateArgs) -> Result<(), AppError> {
    let config = train_config(&args.train)?;
    let summary = ablate(&config)?;

    println!(
        "{:<14} {:>11} {:>9} {:>8} {:>8}",
        "variant", "consistency", "macro-F1", "AU-F1", "CCC"
    );
    for (name, _, _) in ABLATION_VARIANTS {
        let run = summary.run(name).expect("variant present");
        let last = run.history.final_epoch();
        println!(
            "{:<14} {:>11.4} {:>9.4} {:>8.4} {:>8.4}",
            name, last.consistency, last.val_macro_f1, last.val_au_f1, last.val_ccc
        );
    }

    if let Some(out) = &args.train.out {
        // per-variant history files next to the summary
        for run in &summary.runs {
            let path = variant_path(out, &run.name);
            let json = serde_json::to_string_pretty(&run.history).expect("serializes");
            std::fs::write(&path, format!("{json}\n"))
                .map_err(|e| AppError::Io(format!("failed to write {}: {e}", path.display())))?;
            println!("history written to {}", path.display());
        }
    }
    let json = serde_json::to_string_pretty(&summary).expect("serializes");
    emit_document(&args.train.out, &json)
}

fn variant_path(out: &Path, variant: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("ablation");
    let ext = out.extension().and_then(|s| s.to_str()).unwrap_or("json");
    out.with_file_name(format!("{stem}.{variant}.{ext}"))
}
