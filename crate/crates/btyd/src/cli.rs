//! Command-line front end.
//!
//! Every command resolves its options from flags, then an optional flat
//! JSON config file (flags win), echoes the resolved values into the output
//! metadata, and writes bytes that are identical across reruns unless
//! `--stamp` asks for a generation timestamp. Usage problems exit 2, data
//! and numeric problems exit 1.

use crate::bgnbd::{
    frequency_recency_matrix, fit_bgnbd, BgnbdParams, FitConfig, MatrixMode,
};
use crate::clv::{churn_timeline, predict_customers};
use crate::evaluate::{calibration_holdout_eval, repeat_frequency_comparison};
use crate::gammagamma::{fit_gg, GgCoefs, GgParams};
use crate::ingest::{
    calibration_holdout_summary, parse_timestamp, parse_transactions, purchase_days,
    read_calibration_csv, read_rfm_csv, summarize_rfm, write_calibration_csv, write_rfm_csv,
    ColumnMapping, IngestError, TimeUnit,
};
use crate::numerics::{NumericsError, OptimizerConfig};
use crate::simulate::{simulate, SimulationConfig};
use chrono::{DateTime, SecondsFormat, Utc};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<NumericsError> for CliError {
    fn from(e: NumericsError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("io error: {e}"))
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "btyd",
    version,
    about = "Repeat-purchase and spend modeling over transaction logs"
)]
struct Cli {
    /// Flat JSON object supplying defaults for long flags; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Record the generation time in the output metadata.
    #[arg(long, global = true)]
    stamp: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Reduce a transaction log to per-customer purchase summaries.
    Summarize(SummarizeArgs),
    /// Fit the purchase-frequency model to a summary table.
    FitBgnbd(FitBgnbdArgs),
    /// Fit the transaction-value model to a summary table.
    FitGg(FitGgArgs),
    /// Per-customer survival, purchase and value predictions.
    Predict(PredictArgs),
    /// Survival probability through time for one customer.
    ChurnTimeline(ChurnTimelineArgs),
    /// Prediction surface over integer (frequency, recency) histories.
    Matrix(MatrixArgs),
    /// Draw a synthetic cohort from explicit coefficients.
    Simulate(SimulateArgs),
    /// Compare model output against observed behavior.
    #[command(subcommand)]
    Evaluate(EvaluateCommand),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Text,
    Json,
}

#[derive(Args, Debug)]
struct SummarizeArgs {
    /// Delimiter-separated transaction log.
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    #[arg(long, value_name = "NAME")]
    user_col: Option<String>,
    #[arg(long, value_name = "NAME")]
    id_col: Option<String>,
    #[arg(long, value_name = "NAME")]
    time_col: Option<String>,
    #[arg(long, value_name = "NAME")]
    value_col: Option<String>,
    /// End of the observation window (timestamp).
    #[arg(long, value_name = "TS")]
    observation_end: Option<String>,
    /// Also split histories here and count holdout repeats (timestamp).
    #[arg(long, value_name = "TS")]
    calibration_end: Option<String>,
    /// Length of one model time unit, in days.
    #[arg(long, value_name = "DAYS")]
    time_unit_days: Option<f64>,
    /// Field delimiter of the input file.
    #[arg(long, value_name = "CHAR")]
    delimiter: Option<String>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Output path, or - for stdout.
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitBgnbdArgs {
    /// Per-customer summary table (csv).
    #[arg(long, value_name = "FILE")]
    rfm: Option<PathBuf>,
    /// Quadratic penalty weight on the log-scale parameters.
    #[arg(long)]
    penalizer: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    simplex_scale: Option<f64>,
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitGgArgs {
    #[arg(long, value_name = "FILE")]
    rfm: Option<PathBuf>,
    /// Warn when |corr(frequency, spend)| exceeds this.
    #[arg(long)]
    correlation_threshold: Option<f64>,
    #[arg(long)]
    penalizer: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    simplex_scale: Option<f64>,
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long, value_name = "FILE")]
    rfm: Option<PathBuf>,
    /// Fitted purchase-frequency parameters (json).
    #[arg(long, value_name = "FILE")]
    bgnbd: Option<PathBuf>,
    /// Fitted transaction-value parameters (json).
    #[arg(long, value_name = "FILE")]
    gg: Option<PathBuf>,
    /// Prediction horizon in model time units.
    #[arg(long)]
    horizon: Option<f64>,
    /// Continuous discount rate per time unit.
    #[arg(long)]
    discount_rate: Option<f64>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ChurnTimelineArgs {
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    #[arg(long, value_name = "NAME")]
    user_col: Option<String>,
    #[arg(long, value_name = "NAME")]
    id_col: Option<String>,
    #[arg(long, value_name = "NAME")]
    time_col: Option<String>,
    #[arg(long, value_name = "NAME")]
    value_col: Option<String>,
    /// Customer to trace.
    #[arg(long, value_name = "ID")]
    user: Option<String>,
    #[arg(long, value_name = "FILE")]
    bgnbd: Option<PathBuf>,
    #[arg(long, value_name = "TS")]
    observation_end: Option<String>,
    /// Sampling interval of the curve, in model time units.
    #[arg(long)]
    grid_step: Option<f64>,
    #[arg(long, value_name = "DAYS")]
    time_unit_days: Option<f64>,
    #[arg(long, value_name = "CHAR")]
    delimiter: Option<String>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum MatrixModeArg {
    #[value(alias = "p_alive")]
    PAlive,
    #[value(alias = "expected_purchases")]
    ExpectedPurchases,
}

#[derive(Args, Debug)]
struct MatrixArgs {
    #[arg(long, value_name = "FILE")]
    bgnbd: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<MatrixModeArg>,
    #[arg(long)]
    max_frequency: Option<u64>,
    #[arg(long)]
    max_recency: Option<u64>,
    /// Common customer age for every cell, in model time units.
    #[arg(long)]
    age: Option<f64>,
    /// Horizon for expected purchases.
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Cohort size.
    #[arg(long)]
    n: Option<usize>,
    /// Observation span after each acquisition, in model time units.
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    /// Attach a spend model: value shape.
    #[arg(long)]
    p_shape: Option<f64>,
    /// Attach a spend model: mixing shape.
    #[arg(long)]
    q_shape: Option<f64>,
    /// Attach a spend model: mixing scale.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Timestamp of every acquisition.
    #[arg(long, value_name = "TS")]
    epoch: Option<String>,
    #[arg(long, value_name = "DAYS")]
    time_unit_days: Option<f64>,
    /// Also write per-customer latent draws here.
    #[arg(long, value_name = "FILE")]
    latents: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum EvaluateCommand {
    /// Observed vs model-implied repeat-frequency histogram.
    Frequency(EvaluateFrequencyArgs),
    /// Calibration/holdout backtest grouped by calibration frequency.
    Holdout(EvaluateHoldoutArgs),
}

#[derive(Args, Debug)]
struct EvaluateFrequencyArgs {
    #[arg(long, value_name = "FILE")]
    rfm: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    bgnbd: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated customers per observed customer.
    #[arg(long)]
    multiplier: Option<usize>,
    /// Highest dedicated frequency bin; larger counts pool into "max+".
    #[arg(long)]
    max_bin: Option<u64>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateHoldoutArgs {
    /// Calibration/holdout summary table (csv).
    #[arg(long, value_name = "FILE")]
    calibration: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    bgnbd: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

/// Defaults pulled from the --config JSON, keyed by long flag name.
struct Cfg(Map<String, Value>);

impl Cfg {
    fn load(path: Option<&Path>) -> CliResult<Cfg> {
        let Some(path) = path else {
            return Ok(Cfg(Map::new()));
        };
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::Usage(format!("cannot read config {}: {e}", path.display()))
        })?;
        match serde_json::from_str::<Value>(&text) {
            Ok(Value::Object(map)) => Ok(Cfg(map)),
            Ok(_) => Err(CliError::Usage(format!(
                "config {} must be a flat JSON object",
                path.display()
            ))),
            Err(e) => Err(CliError::Usage(format!(
                "config {} is not valid JSON: {e}",
                path.display()
            ))),
        }
    }

    fn f64(&self, key: &str) -> CliResult<Option<f64>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(Value::Number(n)) => Ok(n.as_f64()),
            Some(v) => Err(CliError::Usage(format!(
                "config key '{key}' must be a number, got {v}"
            ))),
        }
    }

    fn u64(&self, key: &str) -> CliResult<Option<u64>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(Value::Number(n)) => n.as_u64().map(Some).ok_or_else(|| {
                CliError::Usage(format!("config key '{key}' must be a nonnegative integer"))
            }),
            Some(v) => Err(CliError::Usage(format!(
                "config key '{key}' must be an integer, got {v}"
            ))),
        }
    }

    fn usize(&self, key: &str) -> CliResult<Option<usize>> {
        Ok(self.u64(key)?.map(|v| v as usize))
    }

    fn string(&self, key: &str) -> CliResult<Option<String>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(v) => Err(CliError::Usage(format!(
                "config key '{key}' must be a string, got {v}"
            ))),
        }
    }

    fn path(&self, key: &str) -> CliResult<Option<PathBuf>> {
        Ok(self.string(key)?.map(PathBuf::from))
    }

    fn format(&self, key: &str) -> CliResult<Option<FormatArg>> {
        match self.string(key)?.as_deref() {
            None => Ok(None),
            Some("text") => Ok(Some(FormatArg::Text)),
            Some("json") => Ok(Some(FormatArg::Json)),
            Some(other) => Err(CliError::Usage(format!(
                "config key '{key}' must be 'text' or 'json', got '{other}'"
            ))),
        }
    }
}

fn require<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Usage(format!("missing required --{flag}")))
}

fn parse_flag_timestamp(s: &str, flag: &str) -> CliResult<DateTime<Utc>> {
    parse_timestamp(s)
        .ok_or_else(|| CliError::Usage(format!("--{flag}: unparseable timestamp '{s}'")))
}

fn parse_delimiter(s: &str) -> CliResult<u8> {
    match s {
        "\\t" | "\t" => Ok(b'\t'),
        s if s.len() == 1 && s.is_ascii() => Ok(s.as_bytes()[0]),
        other => Err(CliError::Usage(format!(
            "--delimiter must be a single ascii character or \\t, got '{other}'"
        ))),
    }
}

/// Ordered metadata echoed into every output.
struct Meta(Vec<(String, Value)>);

impl Meta {
    fn new(command: &str, stamp: bool) -> Meta {
        let mut m = Meta(vec![("command".into(), json!(command))]);
        if stamp {
            m.push(
                "generated_at",
                json!(Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true)),
            );
        }
        m
    }

    fn push(&mut self, key: &str, value: Value) {
        self.0.push((key.to_string(), value));
    }

    fn text_lines(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.0 {
            let rendered = match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            out.push_str(&format!("# {k} = {rendered}\n"));
        }
        out
    }

    fn json_object(&self) -> Value {
        let mut map = Map::new();
        for (k, v) in &self.0 {
            map.insert(k.clone(), v.clone());
        }
        Value::Object(map)
    }
}

fn write_output(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if path == Path::new("-") {
        std::io::stdout().write_all(bytes)?;
        return Ok(());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn json_document(meta: &Meta, body: Vec<(&str, Value)>) -> String {
    let mut map = Map::new();
    map.insert("metadata".to_string(), meta.json_object());
    for (k, v) in body {
        map.insert(k.to_string(), v);
    }
    let mut s = serde_json::to_string_pretty(&Value::Object(map)).expect("plain data serializes");
    s.push('\n');
    s
}

fn load_bgnbd(path: &Path) -> CliResult<BgnbdParams> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    Ok(BgnbdParams::from_json(&text)?)
}

fn load_gg(path: &Path) -> CliResult<GgParams> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    Ok(GgParams::from_json(&text)?)
}

fn load_rfm(path: &Path) -> CliResult<Vec<crate::ingest::RfmRow>> {
    let file = fs::File::open(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    Ok(read_rfm_csv(file)?)
}

/// Run with the given argv (program name first); returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{e}");
                    2
                }
            };
        }
    };
    let result = (|| -> CliResult<()> {
        let cfg = Cfg::load(cli.config.as_deref())?;
        match cli.command {
            Command::Summarize(args) => cmd_summarize(args, &cfg, cli.stamp),
            Command::FitBgnbd(args) => cmd_fit_bgnbd(args, &cfg),
            Command::FitGg(args) => cmd_fit_gg(args, &cfg),
            Command::Predict(args) => cmd_predict(args, &cfg, cli.stamp),
            Command::ChurnTimeline(args) => cmd_churn_timeline(args, &cfg, cli.stamp),
            Command::Matrix(args) => cmd_matrix(args, &cfg, cli.stamp),
            Command::Simulate(args) => cmd_simulate(args, &cfg, cli.stamp),
            Command::Evaluate(EvaluateCommand::Frequency(args)) => {
                cmd_evaluate_frequency(args, &cfg, cli.stamp)
            }
            Command::Evaluate(EvaluateCommand::Holdout(args)) => {
                cmd_evaluate_holdout(args, &cfg, cli.stamp)
            }
        }
    })();
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn cmd_summarize(args: SummarizeArgs, cfg: &Cfg, stamp: bool) -> CliResult<()> {
    let input = require(args.input.or(cfg.path("input")?), "input")?;
    let mapping = ColumnMapping {
        user_id: require(args.user_col.or(cfg.string("user-col")?), "user-col")?,
        transaction_id: require(args.id_col.or(cfg.string("id-col")?), "id-col")?,
        timestamp: require(args.time_col.or(cfg.string("time-col")?), "time-col")?,
        value: require(args.value_col.or(cfg.string("value-col")?), "value-col")?,
    };
    let observation_end_raw = require(
        args.observation_end.or(cfg.string("observation-end")?),
        "observation-end",
    )?;
    let observation_end = parse_flag_timestamp(&observation_end_raw, "observation-end")?;
    let calibration_end_raw = args.calibration_end.or(cfg.string("calibration-end")?);
    let unit_days = args.time_unit_days.or(cfg.f64("time-unit-days")?).unwrap_or(1.0);
    let unit = TimeUnit::days(unit_days)?;
    let delimiter_raw = args
        .delimiter
        .or(cfg.string("delimiter")?)
        .unwrap_or_else(|| ",".to_string());
    let delimiter = parse_delimiter(&delimiter_raw)?;
    let format = args.format.or(cfg.format("format")?).unwrap_or(FormatArg::Text);
    let output = require(args.output.or(cfg.path("output")?), "output")?;

    let file = fs::File::open(&input)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", input.display())))?;
    let (log, report) = parse_transactions(file, &mapping, delimiter)?;
    for rej in &report.rejected {
        eprintln!("warning: skipped line {}: {}", rej.line, rej.reason);
    }

    let mut meta = Meta::new("summarize", stamp);
    meta.push("input", json!(input.display().to_string()));
    meta.push("user_col", json!(mapping.user_id));
    meta.push("id_col", json!(mapping.transaction_id));
    meta.push("time_col", json!(mapping.timestamp));
    meta.push("value_col", json!(mapping.value));
    meta.push("observation_end", json!(observation_end_raw));
    meta.push("time_unit_days", json!(unit_days));
    meta.push("delimiter", json!(delimiter_raw));
    meta.push("rows_accepted", json!(report.accepted));
    meta.push("rows_rejected", json!(report.rejected.len()));

    let bytes = match calibration_end_raw {
        None => {
            let rows = summarize_rfm(&log, observation_end, unit)?;
            meta.push("customers", json!(rows.len()));
            match format {
                FormatArg::Text => {
                    let mut buf = meta.text_lines().into_bytes();
                    write_rfm_csv(&mut buf, &rows)?;
                    buf
                }
                FormatArg::Json => json_document(
                    &meta,
                    vec![("rows", serde_json::to_value(&rows).expect("plain data"))],
                )
                .into_bytes(),
            }
        }
        Some(cal_raw) => {
            let calibration_end = parse_flag_timestamp(&cal_raw, "calibration-end")?;
            let summary =
                calibration_holdout_summary(&log, calibration_end, observation_end, unit)?;
            meta.push("calibration_end", json!(cal_raw));
            meta.push("customers", json!(summary.rows.len()));
            meta.push("customers_excluded", json!(summary.excluded));
            match format {
                FormatArg::Text => {
                    let mut buf = meta.text_lines().into_bytes();
                    write_calibration_csv(&mut buf, &summary.rows)?;
                    buf
                }
                FormatArg::Json => json_document(
                    &meta,
                    vec![(
                        "rows",
                        serde_json::to_value(&summary.rows).expect("plain data"),
                    )],
                )
                .into_bytes(),
            }
        }
    };
    write_output(&output, &bytes)
}

fn optimizer_from(
    tolerance: Option<f64>,
    max_iterations: Option<usize>,
    restarts: Option<usize>,
    simplex_scale: Option<f64>,
) -> OptimizerConfig {
    let mut opt = OptimizerConfig::default();
    if let Some(t) = tolerance {
        opt.tolerance = t;
    }
    if let Some(m) = max_iterations {
        opt.max_iterations = m;
    }
    if let Some(r) = restarts {
        opt.restarts = r;
    }
    if let Some(s) = simplex_scale {
        opt.initial_simplex_scale = s;
    }
    opt
}

fn cmd_fit_bgnbd(args: FitBgnbdArgs, cfg: &Cfg) -> CliResult<()> {
    let rfm_path = require(args.rfm.or(cfg.path("rfm")?), "rfm")?;
    let output = require(args.output.or(cfg.path("output")?), "output")?;
    let config = FitConfig {
        optimizer: optimizer_from(
            args.tolerance.or(cfg.f64("tolerance")?),
            args.max_iterations.or(cfg.usize("max-iterations")?),
            args.restarts.or(cfg.usize("restarts")?),
            args.simplex_scale.or(cfg.f64("simplex-scale")?),
        ),
        penalizer: args.penalizer.or(cfg.f64("penalizer")?).unwrap_or(0.0),
    };
    let rows = load_rfm(&rfm_path)?;
    let params = fit_bgnbd(&rows, &config)?;
    if !params.fit.converged {
        eprintln!(
            "warning: optimizer stopped after {} iterations without meeting the tolerance",
            params.fit.iterations
        );
    }
    write_output(&output, params.to_json().as_bytes())
}

fn cmd_fit_gg(args: FitGgArgs, cfg: &Cfg) -> CliResult<()> {
    let rfm_path = require(args.rfm.or(cfg.path("rfm")?), "rfm")?;
    let output = require(args.output.or(cfg.path("output")?), "output")?;
    let threshold = args
        .correlation_threshold
        .or(cfg.f64("correlation-threshold")?)
        .unwrap_or(0.1);
    let config = FitConfig {
        optimizer: optimizer_from(
            args.tolerance.or(cfg.f64("tolerance")?),
            args.max_iterations.or(cfg.usize("max-iterations")?),
            args.restarts.or(cfg.usize("restarts")?),
            args.simplex_scale.or(cfg.f64("simplex-scale")?),
        ),
        penalizer: args.penalizer.or(cfg.f64("penalizer")?).unwrap_or(0.0),
    };
    let rows = load_rfm(&rfm_path)?;
    let outcome = fit_gg(&rows, &config, threshold)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    write_output(&output, outcome.params.to_json().as_bytes())
}

fn cmd_predict(args: PredictArgs, cfg: &Cfg, stamp: bool) -> CliResult<()> {
    let rfm_path = require(args.rfm.or(cfg.path("rfm")?), "rfm")?;
    let bgnbd_path = require(args.bgnbd.or(cfg.path("bgnbd")?), "bgnbd")?;
    let gg_path = require(args.gg.or(cfg.path("gg")?), "gg")?;
    let horizon = require(args.horizon.or(cfg.f64("horizon")?), "horizon")?;
    let discount_rate = args.discount_rate.or(cfg.f64("discount-rate")?).unwrap_or(0.0);
    let format = args.format.or(cfg.format("format")?).unwrap_or(FormatArg::Text);
    let output = require(args.output.or(cfg.path("output")?), "output")?;

    let bgnbd = load_bgnbd(&bgnbd_path)?;
    let gg = load_gg(&gg_path)?;
    if bgnbd.coefs.a <= 1.0 {
        eprintln!(
            "warning: a = {} is at most 1; purchase expectations grow without bound \
             as the horizon does, treat long horizons with care",
            bgnbd.coefs.a
        );
    }
    let mut rows = load_rfm(&rfm_path)?;
    rows.sort_by(|x, y| x.user_id.cmp(&y.user_id));
    let preds = predict_customers(&bgnbd.coefs, &gg.coefs, &rows, horizon, discount_rate)?;

    let mut meta = Meta::new("predict", stamp);
    meta.push("rfm", json!(rfm_path.display().to_string()));
    meta.push("bgnbd", json!(bgnbd_path.display().to_string()));
    meta.push("gg", json!(gg_path.display().to_string()));
    meta.push("horizon", json!(horizon));
    meta.push("discount_rate", json!(discount_rate));
    meta.push("customers", json!(preds.len()));

    let bytes = match format {
        FormatArg::Text => {
            let mut buf = meta.text_lines();
            buf.push_str("user_id,p_alive,expected_txns,expected_value,expected_clv,horizon\n");
            for p in &preds {
                buf.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    p.user_id,
                    p.p_alive,
                    p.expected_transactions,
                    p.expected_value_per_transaction,
                    p.expected_clv,
                    p.horizon
                ));
            }
            buf.into_bytes()
        }
        FormatArg::Json => {
            let rows: Vec<Value> = preds
                .iter()
                .map(|p| {
                    json!({
                        "user_id": p.user_id,
                        "p_alive": p.p_alive,
                        "expected_txns": p.expected_transactions,
                        "expected_value": p.expected_value_per_transaction,
                        "expected_clv": p.expected_clv,
                        "horizon": p.horizon,
                    })
                })
                .collect();
            json_document(&meta, vec![("rows", Value::Array(rows))]).into_bytes()
        }
    };
    write_output(&output, &bytes)
}

fn cmd_churn_timeline(args: ChurnTimelineArgs, cfg: &Cfg, stamp: bool) -> CliResult<()> {
    let input = require(args.input.or(cfg.path("input")?), "input")?;
    let mapping = ColumnMapping {
        user_id: require(args.user_col.or(cfg.string("user-col")?), "user-col")?,
        transaction_id: require(args.id_col.or(cfg.string("id-col")?), "id-col")?,
        timestamp: require(args.time_col.or(cfg.string("time-col")?), "time-col")?,
        value: require(args.value_col.or(cfg.string("value-col")?), "value-col")?,
    };
    let user = require(args.user.or(cfg.string("user")?), "user")?;
    let bgnbd_path = require(args.bgnbd.or(cfg.path("bgnbd")?), "bgnbd")?;
    let observation_end_raw = require(
        args.observation_end.or(cfg.string("observation-end")?),
        "observation-end",
    )?;
    let observation_end = parse_flag_timestamp(&observation_end_raw, "observation-end")?;
    let grid_step = args.grid_step.or(cfg.f64("grid-step")?).unwrap_or(1.0);
    let unit_days = args.time_unit_days.or(cfg.f64("time-unit-days")?).unwrap_or(1.0);
    let unit = TimeUnit::days(unit_days)?;
    let delimiter_raw = args
        .delimiter
        .or(cfg.string("delimiter")?)
        .unwrap_or_else(|| ",".to_string());
    let delimiter = parse_delimiter(&delimiter_raw)?;
    let format = args.format.or(cfg.format("format")?).unwrap_or(FormatArg::Text);
    let output = require(args.output.or(cfg.path("output")?), "output")?;

    let file = fs::File::open(&input)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", input.display())))?;
    let (log, _) = parse_transactions(file, &mapping, delimiter)?;
    let records: Vec<_> = log
        .records
        .iter()
        .filter(|r| r.user_id == user)
        .cloned()
        .collect();
    if records.is_empty() {
        return Err(CliError::Runtime(format!(
            "no transactions found for user '{user}'"
        )));
    }
    let days = purchase_days(&records);
    let first_day = days[0].0;
    let times: Vec<f64> = days.iter().map(|(d, _)| unit.span(first_day, *d)).collect();
    let as_of = unit.span(first_day, observation_end);
    let bgnbd = load_bgnbd(&bgnbd_path)?;
    let points = churn_timeline(&times, &bgnbd.coefs, grid_step, as_of)?;

    let mut meta = Meta::new("churn-timeline", stamp);
    meta.push("input", json!(input.display().to_string()));
    meta.push("user", json!(user));
    meta.push("bgnbd", json!(bgnbd_path.display().to_string()));
    meta.push("observation_end", json!(observation_end_raw));
    meta.push("grid_step", json!(grid_step));
    meta.push("time_unit_days", json!(unit_days));
    meta.push(
        "first_purchase_day",
        json!(first_day.to_rfc3339_opts(SecondsFormat::Secs, true)),
    );
    meta.push("purchase_days", json!(times.len()));

    let bytes = match format {
        FormatArg::Text => {
            let mut buf = meta.text_lines();
            buf.push_str("time,p_alive,is_purchase\n");
            for p in &points {
                buf.push_str(&format!("{},{},{}\n", p.time, p.p_alive, p.is_purchase));
            }
            buf.into_bytes()
        }
        FormatArg::Json => json_document(
            &meta,
            vec![("points", serde_json::to_value(&points).expect("plain data"))],
        )
        .into_bytes(),
    };
    write_output(&output, &bytes)
}

fn cmd_matrix(args: MatrixArgs, cfg: &Cfg, stamp: bool) -> CliResult<()> {
    let bgnbd_path = require(args.bgnbd.or(cfg.path("bgnbd")?), "bgnbd")?;
    let mode_arg = require(
        args.mode.or(match cfg.string("mode")?.as_deref() {
            None => None,
            Some("p-alive") | Some("p_alive") => Some(MatrixModeArg::PAlive),
            Some("expected-purchases") | Some("expected_purchases") => {
                Some(MatrixModeArg::ExpectedPurchases)
            }
            Some(other) => {
                return Err(CliError::Usage(format!(
                    "config key 'mode' must be 'p-alive' or 'expected-purchases', got '{other}'"
                )))
            }
        }),
        "mode",
    )?;
    let max_frequency = require(args.max_frequency.or(cfg.u64("max-frequency")?), "max-frequency")?;
    let max_recency = require(args.max_recency.or(cfg.u64("max-recency")?), "max-recency")?;
    let age = require(args.age.or(cfg.f64("age")?), "age")?;
    let horizon = args.horizon.or(cfg.f64("horizon")?).unwrap_or(1.0);
    let format = args.format.or(cfg.format("format")?).unwrap_or(FormatArg::Text);
    let output = require(args.output.or(cfg.path("output")?), "output")?;

    let bgnbd = load_bgnbd(&bgnbd_path)?;
    let (mode, mode_name) = match mode_arg {
        MatrixModeArg::PAlive => (MatrixMode::PAlive, "p-alive"),
        MatrixModeArg::ExpectedPurchases => (MatrixMode::ExpectedPurchases, "expected-purchases"),
    };
    if mode == MatrixMode::ExpectedPurchases && bgnbd.coefs.a <= 1.0 {
        eprintln!(
            "warning: a = {} is at most 1; purchase expectations grow without bound \
             as the horizon does, treat long horizons with care",
            bgnbd.coefs.a
        );
    }
    let matrix =
        frequency_recency_matrix(&bgnbd.coefs, mode, max_frequency, max_recency, age, horizon)?;

    let mut meta = Meta::new("matrix", stamp);
    meta.push("bgnbd", json!(bgnbd_path.display().to_string()));
    meta.push("mode", json!(mode_name));
    meta.push("max_frequency", json!(max_frequency));
    meta.push("max_recency", json!(max_recency));
    meta.push("age", json!(age));
    meta.push("horizon", json!(horizon));

    let bytes = match format {
        FormatArg::Text => {
            let mut buf = meta.text_lines();
            buf.push_str("recency");
            for x in 0..=max_frequency {
                buf.push_str(&format!(",{x}"));
            }
            buf.push('\n');
            for (recency, row) in matrix.cells.iter().enumerate() {
                buf.push_str(&recency.to_string());
                for cell in row {
                    match cell {
                        Some(v) => buf.push_str(&format!(",{v}")),
                        None => buf.push(','),
                    }
                }
                buf.push('\n');
            }
            buf.into_bytes()
        }
        FormatArg::Json => json_document(
            &meta,
            vec![(
                "cells",
                serde_json::to_value(&matrix.cells).expect("plain data"),
            )],
        )
        .into_bytes(),
    };
    write_output(&output, &bytes)
}

fn cmd_simulate(args: SimulateArgs, cfg: &Cfg, stamp: bool) -> CliResult<()> {
    let n = require(args.n.or(cfg.usize("n")?), "n")?;
    let horizon = require(args.horizon.or(cfg.f64("horizon")?), "horizon")?;
    let r = require(args.r.or(cfg.f64("r")?), "r")?;
    let alpha = require(args.alpha.or(cfg.f64("alpha")?), "alpha")?;
    let a = require(args.a.or(cfg.f64("a")?), "a")?;
    let b = require(args.b.or(cfg.f64("b")?), "b")?;
    let p_shape = args.p_shape.or(cfg.f64("p-shape")?);
    let q_shape = args.q_shape.or(cfg.f64("q-shape")?);
    let gamma = args.gamma.or(cfg.f64("gamma")?);
    let seed = require(args.seed.or(cfg.u64("seed")?), "seed")?;
    let epoch_raw = args
        .epoch
        .or(cfg.string("epoch")?)
        .unwrap_or_else(|| "2022-01-01T00:00:00Z".to_string());
    let epoch = parse_flag_timestamp(&epoch_raw, "epoch")?;
    let unit_days = args.time_unit_days.or(cfg.f64("time-unit-days")?).unwrap_or(1.0);
    let unit = TimeUnit::days(unit_days)?;
    let output = require(args.output.or(cfg.path("output")?), "output")?;

    let spend = match (p_shape, q_shape, gamma) {
        (None, None, None) => None,
        (Some(p), Some(q), Some(g)) => Some(GgCoefs { p, q, gamma: g }),
        _ => {
            return Err(CliError::Usage(
                "--p-shape, --q-shape and --gamma must be given together".into(),
            ))
        }
    };
    let config = SimulationConfig {
        n_customers: n,
        horizon,
        coefs: crate::bgnbd::BgnbdCoefs { r, alpha, a, b },
        spend,
        seed,
    };
    let base = simulate(&config)?;
    let log = base.to_transaction_log(epoch, unit);

    let mut meta = Meta::new("simulate", stamp);
    meta.push("n", json!(n));
    meta.push("horizon", json!(horizon));
    meta.push("r", json!(r));
    meta.push("alpha", json!(alpha));
    meta.push("a", json!(a));
    meta.push("b", json!(b));
    if let Some(gg) = &config.spend {
        meta.push("p_shape", json!(gg.p));
        meta.push("q_shape", json!(gg.q));
        meta.push("gamma", json!(gg.gamma));
    }
    meta.push("seed", json!(seed));
    meta.push("epoch", json!(epoch_raw));
    meta.push("time_unit_days", json!(unit_days));
    meta.push("transactions", json!(log.records.len()));

    let mut buf = meta.text_lines().into_bytes();
    crate::ingest::write_transactions_csv(&mut buf, &log)?;
    write_output(&output, &buf)?;

    if let Some(latents_path) = args.latents.or(cfg.path("latents")?) {
        let mut lbuf = meta.text_lines();
        lbuf.push_str("user_id,lambda,p_dropout,spend_rate\n");
        for c in &base.customers {
            match c.spend_rate {
                Some(nu) => lbuf.push_str(&format!(
                    "{},{},{},{nu}\n",
                    c.user_id, c.lambda, c.p_dropout
                )),
                None => {
                    lbuf.push_str(&format!("{},{},{},\n", c.user_id, c.lambda, c.p_dropout))
                }
            }
        }
        write_output(&latents_path, lbuf.as_bytes())?;
    }
    Ok(())
}

fn cmd_evaluate_frequency(args: EvaluateFrequencyArgs, cfg: &Cfg, stamp: bool) -> CliResult<()> {
    let rfm_path = require(args.rfm.or(cfg.path("rfm")?), "rfm")?;
    let bgnbd_path = require(args.bgnbd.or(cfg.path("bgnbd")?), "bgnbd")?;
    let seed = args.seed.or(cfg.u64("seed")?).unwrap_or(0);
    let multiplier = args.multiplier.or(cfg.usize("multiplier")?).unwrap_or(10);
    let max_bin = args.max_bin.or(cfg.u64("max-bin")?).unwrap_or(7);
    let format = args.format.or(cfg.format("format")?).unwrap_or(FormatArg::Text);
    let output = require(args.output.or(cfg.path("output")?), "output")?;

    let rows = load_rfm(&rfm_path)?;
    let bgnbd = load_bgnbd(&bgnbd_path)?;
    let cmp = repeat_frequency_comparison(&rows, &bgnbd.coefs, seed, multiplier, max_bin)?;

    let mut meta = Meta::new("evaluate frequency", stamp);
    meta.push("rfm", json!(rfm_path.display().to_string()));
    meta.push("bgnbd", json!(bgnbd_path.display().to_string()));
    meta.push("seed", json!(seed));
    meta.push("multiplier", json!(multiplier));
    meta.push("max_bin", json!(max_bin));
    meta.push("customers", json!(rows.len()));

    let bytes = match format {
        FormatArg::Text => {
            let mut buf = meta.text_lines();
            buf.push_str("bin,actual,predicted\n");
            for ((bin, act), pred) in cmp.bins.iter().zip(&cmp.actual).zip(&cmp.predicted) {
                buf.push_str(&format!("{bin},{act},{pred}\n"));
            }
            buf.into_bytes()
        }
        FormatArg::Json => {
            let rows: Vec<Value> = cmp
                .bins
                .iter()
                .zip(&cmp.actual)
                .zip(&cmp.predicted)
                .map(|((bin, act), pred)| {
                    json!({"bin": bin, "actual": act, "predicted": pred})
                })
                .collect();
            json_document(&meta, vec![("bins", Value::Array(rows))]).into_bytes()
        }
    };
    write_output(&output, &bytes)
}

fn cmd_evaluate_holdout(args: EvaluateHoldoutArgs, cfg: &Cfg, stamp: bool) -> CliResult<()> {
    let calibration_path = require(args.calibration.or(cfg.path("calibration")?), "calibration")?;
    let bgnbd_path = require(args.bgnbd.or(cfg.path("bgnbd")?), "bgnbd")?;
    let format = args.format.or(cfg.format("format")?).unwrap_or(FormatArg::Text);
    let output = require(args.output.or(cfg.path("output")?), "output")?;

    let file = fs::File::open(&calibration_path).map_err(|e| {
        CliError::Runtime(format!("cannot read {}: {e}", calibration_path.display()))
    })?;
    let rows = read_calibration_csv(file)?;
    let bgnbd = load_bgnbd(&bgnbd_path)?;
    let eval = calibration_holdout_eval(&bgnbd.coefs, &rows)?;

    let mut meta = Meta::new("evaluate holdout", stamp);
    meta.push("calibration", json!(calibration_path.display().to_string()));
    meta.push("bgnbd", json!(bgnbd_path.display().to_string()));
    meta.push("customers", json!(rows.len()));
    meta.push("holdout_duration", json!(eval.holdout_duration));
    meta.push("mse", json!(eval.metrics.mse));
    meta.push("mae", json!(eval.metrics.mae));
    meta.push("msle", json!(eval.metrics.msle));

    let bytes = match format {
        FormatArg::Text => {
            let mut buf = meta.text_lines();
            buf.push_str("frequency,n,mean_actual,mean_predicted,low_support\n");
            for g in &eval.groups {
                buf.push_str(&format!(
                    "{},{},{},{},{}\n",
                    g.frequency, g.n, g.mean_actual, g.mean_predicted, g.low_support
                ));
            }
            buf.into_bytes()
        }
        FormatArg::Json => json_document(
            &meta,
            vec![
                (
                    "metrics",
                    serde_json::to_value(eval.metrics).expect("plain data"),
                ),
                (
                    "groups",
                    serde_json::to_value(&eval.groups).expect("plain data"),
                ),
            ],
        )
        .into_bytes(),
    };
    write_output(&output, &bytes)
}
