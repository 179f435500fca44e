//! `bessplan` command-line front end.
//!
//! Every failure ends with one JSON line on stderr,
//! `{"error": "<kind>", "message": "..."}`, and a kind-specific exit code:
//! 2 for unparsable input, 3 for input that violates a domain rule, 1 for
//! anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bessplan::assembly::{check_physics, ModelConfig};
use bessplan::conformal::Thresholds;
use bessplan::formats::{
    self, load_boxes, load_network, load_timeseries, save_csv, save_json, save_network, save_text, save_timeseries,
    FormatError, NetworkData, PlotRow, RunConfig, Units,
};
use bessplan::predictor::{Checkpoint, PredictorError};
use bessplan::robust::{build_at, solve_stage, RobustError};
use bessplan::solver::SolverOptions;
use bessplan::synth::{apply_pv, generate, ScenarioSpec};
use bessplan::training::{self, Dataset, Mode, TrainError};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "bessplan", version, about = "Battery siting and sizing under forecast uncertainty")]
struct Cli {
    /// Seed overriding the one in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for output files.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic feeder, time series and run configuration.
    Gen {
        /// Scenario specification (TOML); defaults are used when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Solve the single-stage planning model for explicit boxes.
    Solve {
        /// Feeder description (JSON)
        #[arg(long)]
        network: PathBuf,
        /// Price and load boxes plus the solar profile (JSON)
        #[arg(long)]
        boxes: PathBuf,
    },
    /// Train a forecaster.
    Train {
        /// Training mode; overrides the configuration
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Calibrate conformal thresholds for a checkpoint.
    Calibrate {
        /// Trained forecaster (JSON)
        #[arg(long)]
        checkpoint: PathBuf,
        /// Miscoverage level; overrides the configuration
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Evaluate a calibrated checkpoint on the test split.
    Evaluate {
        /// Trained forecaster (JSON)
        #[arg(long)]
        checkpoint: PathBuf,
        /// Calibrated thresholds (JSON)
        #[arg(long)]
        thresholds: PathBuf,
    },
    /// Write the planning LP as labeled text rows.
    ExportLp {
        /// Feeder description (JSON)
        #[arg(long)]
        network: PathBuf,
        /// Price and load boxes plus the solar profile (JSON)
        #[arg(long)]
        boxes: PathBuf,
    },
    /// Write per-step slack power with forecast boxes and truths as CSV.
    ExportPlot {
        /// Trained forecaster (JSON)
        #[arg(long)]
        checkpoint: PathBuf,
        /// Calibrated thresholds (JSON)
        #[arg(long)]
        thresholds: PathBuf,
        /// Index of the test sample to plot.
        #[arg(long, default_value_t = 0)]
        sample: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Eto,
    EndToEnd,
}

#[derive(Debug)]
enum CliError {
    Parse(String),
    Validation(String),
    Other(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Other(_) => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Parse(_) => "parse",
            CliError::Validation(_) => "validation",
            CliError::Other(_) => "runtime",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Parse(m) | CliError::Validation(m) | CliError::Other(m) => m,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Parse { .. } => CliError::Parse(e.to_string()),
            FormatError::Validation { .. } => CliError::Validation(e.to_string()),
            FormatError::Io { .. } => CliError::Other(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::ConfigInvalid(_)
            | TrainError::Dataset(_)
            | TrainError::Robust(_)
            | TrainError::EmptyTestSet
            | TrainError::MissingThreshold => CliError::Validation(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<RobustError> for CliError {
    fn from(e: RobustError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<PredictorError> for CliError {
    fn from(e: PredictorError) -> Self {
        match e {
            PredictorError::Checkpoint(_) => CliError::Parse(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            report(&CliError::Parse(e.kind().to_string()));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(e.code())
        }
    }
}

fn report(e: &CliError) {
    let line = serde_json::json!({ "error": e.kind(), "message": e.message() });
    eprintln!("{line}");
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Gen { spec } => gen(cli, spec.as_deref()),
        Command::Solve { network, boxes } => solve(cli, network, boxes),
        Command::Train { mode } => train(cli, *mode),
        Command::Calibrate { checkpoint, alpha } => calibrate(cli, checkpoint, *alpha),
        Command::Evaluate { checkpoint, thresholds } => evaluate(cli, checkpoint, thresholds),
        Command::ExportLp { network, boxes } => export_lp(cli, network, boxes),
        Command::ExportPlot { checkpoint, thresholds, sample } => export_plot(cli, checkpoint, thresholds, *sample),
    }
}

fn config(cli: &Cli) -> CliResult<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.train.seed = s;
    }
    Ok(c)
}

fn out_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    // defaults to the configuration's directory, so a generated run.toml
    // keeps all artifacts together
    let config_dir = cli.config.as_ref().and_then(|c| c.parent()).map(Path::to_path_buf);
    cli.out_dir.clone().or_else(|| cfg.paths.out_dir.clone()).or(config_dir).unwrap_or_else(|| PathBuf::from("."))
}

fn gen(cli: &Cli, spec_path: Option<&Path>) -> CliResult<()> {
    let mut spec = match spec_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Other(format!("{}: {e}", p.display())))?;
            toml::from_str::<ScenarioSpec>(&text).map_err(|e| CliError::Parse(format!("{}: {e}", p.display())))?
        }
        None => ScenarioSpec::default(),
    };
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    let sc = generate(&spec).map_err(|e| CliError::Validation(e.to_string()))?;
    let dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let data = NetworkData {
        network: sc.network.clone(),
        units: Units::Pu,
        pv_capacity: sc.pv_capacity.clone(),
        load_weights: sc.weights.clone(),
    };
    save_network(&dir.join("network.json"), &data)?;
    save_timeseries(&dir.join("timeseries.csv"), &sc.series)?;
    save_text(&dir.join("scenario.toml"), &toml::to_string_pretty(&spec).expect("spec serializes"))?;
    let mut run = RunConfig::default();
    run.paths.network = Some("network.json".into());
    run.paths.timeseries = Some("timeseries.csv".into());
    run.data.history = spec.history;
    run.model.horizon = spec.horizon;
    run.train.seed = spec.seed;
    save_text(&dir.join("run.toml"), &run.to_toml())?;
    println!("wrote network.json, timeseries.csv, scenario.toml and run.toml to {}", dir.display());
    Ok(())
}

/// Plan summary printed and written by `solve`.
#[derive(Debug, Serialize)]
struct SolveSummary {
    objective: f64,
    eta: f64,
    x: Vec<f64>,
    /// Real slack-bus power per step and phase.
    slack_power: Vec<[f64; 3]>,
    iterations: usize,
}

fn stage_from_files(
    cfg: &RunConfig,
    network: &Path,
    boxes: &Path,
) -> CliResult<(NetworkData, ModelConfig, bessplan::robust::SingleStage)> {
    let data = load_network(network)?;
    let b = load_boxes(boxes)?;
    let mut model = cfg.model.clone();
    model.horizon = b.price.steps();
    let net =
        if b.solar.is_empty() { data.network.clone() } else { apply_pv(&data.network, &data.pv_capacity, &b.solar) };
    let price = bessplan::robust::worst_case_price(&b.price);
    let load = bessplan::robust::dominant_load(&b.load);
    let stage = build_at(&net, &model, &data.load_weights, price, load)?;
    Ok((NetworkData { network: net, ..data }, model, stage))
}

fn solve(cli: &Cli, network: &Path, boxes: &Path) -> CliResult<()> {
    let cfg = config(cli)?;
    let (data, model, stage) = stage_from_files(&cfg, network, boxes)?;
    let (r, plan) = solve_stage(&stage, &SolverOptions::default())?;
    let phys = check_physics(&data.network, &model, &plan);
    let summary = SolveSummary {
        objective: plan.objective,
        eta: plan.eta,
        x: plan.x.clone(),
        slack_power: plan.s0.iter().map(|s| s.re()).collect(),
        iterations: r.iterations,
    };
    println!("objective {}", summary.objective);
    println!("x {}", join(&summary.x));
    for (t, s) in summary.slack_power.iter().enumerate() {
        println!("s0[{t}] {}", join(s));
    }
    println!(
        "physics power_balance={:e} soc_telescoping={:e} soc_bounds={:e} voltage_bounds={:e}",
        phys.power_balance, phys.soc_telescoping, phys.soc_bounds, phys.voltage_bounds
    );
    if let Some(dir) = &cli.out_dir {
        save_json(&dir.join("solution.json"), &summary)?;
    }
    Ok(())
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn dataset(cfg: &RunConfig) -> CliResult<Dataset> {
    let net_path = cfg.paths.network.as_ref().ok_or_else(|| CliError::Validation("paths.network is not set".into()))?;
    let ts_path =
        cfg.paths.timeseries.as_ref().ok_or_else(|| CliError::Validation("paths.timeseries is not set".into()))?;
    let data = load_network(net_path)?;
    let series = load_timeseries(ts_path, &data.unit_scale())?;
    Ok(Dataset::from_parts(
        &data.network,
        &data.load_weights,
        &data.pv_capacity,
        &series,
        cfg.data.history,
        &cfg.model,
        &cfg.data.options,
    )?)
}

fn read_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
    Ok(Checkpoint::from_json(&text)?)
}

fn train(cli: &Cli, mode: Option<ModeArg>) -> CliResult<()> {
    let mut cfg = config(cli)?;
    if let Some(m) = mode {
        cfg.train.mode = match m {
            ModeArg::Eto => Mode::Eto,
            ModeArg::EndToEnd => Mode::EndToEnd,
        };
    }
    let data = dataset(&cfg)?;
    let out = training::train(&data, &cfg.train)?;
    let dir = out_dir(cli, &cfg);
    let mut ck = Checkpoint::new(out.forecaster);
    let meta = serde_json::to_value(&cfg.train).expect("train config serializes");
    ck.metadata.insert("train".into(), meta);
    ck.metadata.insert("task_scale".into(), data.template.scale.into());
    save_text(&dir.join("checkpoint.json"), &ck.to_json())?;
    let mut buf = Vec::new();
    training::write_history(&out.history, &mut buf)?;
    save_text(&dir.join("history.csv"), &String::from_utf8(buf).expect("csv is utf-8"))?;
    if let Some(last) = out.history.last() {
        println!("epoch {} pred_loss {} task_loss {}", last.epoch, last.pred_loss, last.task_loss);
    }
    println!("wrote checkpoint.json and history.csv to {}", dir.display());
    Ok(())
}

fn calibrate(cli: &Cli, checkpoint: &Path, alpha: Option<f64>) -> CliResult<()> {
    let cfg = config(cli)?;
    let ck = read_checkpoint(checkpoint)?;
    let data = dataset(&cfg)?;
    let alpha = alpha.unwrap_or(cfg.eval.alpha);
    let th = training::calibrate(&ck.forecaster, &data.split.calibration, alpha, cfg.eval.rule, cfg.eval.per_target)
        .map_err(|e| match e {
            TrainError::Conformal(c) => CliError::Validation(c.to_string()),
            other => other.into(),
        })?;
    let dir = out_dir(cli, &cfg);
    save_json(&dir.join("thresholds.json"), &th)?;
    println!("price q* {} load q* {}", th.price_q(), th.load_q());
    Ok(())
}

fn evaluate(cli: &Cli, checkpoint: &Path, thresholds: &Path) -> CliResult<()> {
    let cfg = config(cli)?;
    let ck = read_checkpoint(checkpoint)?;
    let th: Thresholds = formats::load_json(thresholds)?;
    let data = dataset(&cfg)?;
    let rep = training::evaluate(
        &ck.forecaster,
        Some(&th),
        &data.split.test,
        &data.template,
        &data.limits,
        cfg.train.loss_weight,
    )?;
    let dir = out_dir(cli, &cfg);
    save_csv(&dir.join("eval.csv"), &[rep])?;
    save_json(&dir.join("eval.json"), &rep)?;
    println!(
        "task_loss {} pred_loss {} total_raw {} total_weighted {} coverage {}",
        rep.task_loss, rep.pred_loss, rep.total_raw, rep.total_weighted, rep.coverage
    );
    Ok(())
}

fn export_lp(cli: &Cli, network: &Path, boxes: &Path) -> CliResult<()> {
    let cfg = config(cli)?;
    let (_, _, stage) = stage_from_files(&cfg, network, boxes)?;
    let text = stage.program.dump();
    match &cli.out_dir {
        Some(dir) => save_text(&dir.join("model.lp"), &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn export_plot(cli: &Cli, checkpoint: &Path, thresholds: &Path, sample: usize) -> CliResult<()> {
    let cfg = config(cli)?;
    let ck = read_checkpoint(checkpoint)?;
    let th: Thresholds = formats::load_json(thresholds)?;
    let data = dataset(&cfg)?;
    let s = data.split.test.get(sample).ok_or_else(|| {
        CliError::Validation(format!("test split has {} samples, asked for index {sample}", data.split.test.len()))
    })?;
    let (_, boxes) = training::inflated_boxes(&ck.forecaster, s, &th, &data.limits)?;
    let (_, _, plan) = data.template.solve_at(s, boxes.price.upper.clone(), boxes.load.upper.clone())?;
    let mut rows = Vec::new();
    for t in 0..data.horizon {
        let slack = plan.s0[t].re();
        for (p, phase) in ['a', 'b', 'c'].into_iter().enumerate() {
            rows.push(PlotRow {
                step: t,
                phase,
                slack_power: slack[p],
                load_lower: boxes.load.lower[t][p],
                load_upper: boxes.load.upper[t][p],
                load_truth: s.load[t][p],
                price_lower: boxes.price.lower[t][p],
                price_upper: boxes.price.upper[t][p],
                price_truth: s.price[t][p],
            });
        }
    }
    let dir = out_dir(cli, &cfg);
    save_csv(&dir.join("plot.csv"), &rows)?;
    println!("wrote {} rows to {}", rows.len(), dir.join("plot.csv").display());
    Ok(())
}
