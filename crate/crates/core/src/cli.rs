//! Command-line front end.

use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::calibrate::{fit_with_calibration, CalibrationPolicy, FitReport};
use crate::engine::{
    run_three_phase, EarlyStop, Engine, FidelitySpec, InitCheckpoint, ObjectiveSpec, PrimingMode,
    PrimingRequest, PrunerSpec, SamplerSpec, Sprint, SprintRequest, SprintStatus, SprintSummary,
    ThreePhaseConfig,
};
use crate::error::{Error, Result};
use crate::gp::GpConfig;
use crate::losses::GroupingScheme;
use crate::service::{scatter, ScatterSeries};
use crate::space::{MarginPolicy, SearchSpace, Value};
use crate::testbed::{generate_corpus, resolve_objective, ToyModel, OBJECTIVE_KINDS};
use crate::tpe::TpeConfig;

#[derive(Debug, Parser)]
#[command(
    name = "sprintopt",
    version,
    about = "Sprint-based multi-fidelity hyperparameter optimization"
)]
pub struct Cli {
    /// Store directory holding event logs and snapshots.
    #[arg(
        long,
        global = true,
        env = "SPRINTOPT_STORE",
        default_value = "./sprintopt-store"
    )]
    pub store: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplerKind {
    Gp,
    Tpe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrunerKind {
    None,
    Hyperband,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a thread and its initial search space.
    InitThread {
        #[arg(long)]
        name: String,
        #[arg(long, default_value = "GLOBAL")]
        grouping: String,
        #[arg(long, default_value = "multitask_sim")]
        objective: String,
        /// Seed of the objective instance.
        #[arg(long, default_value_t = 0)]
        objective_seed: u64,
        #[arg(long, default_value = "default")]
        model_config: String,
    },
    /// Create and execute a sprint.
    RunSprint {
        #[arg(long)]
        thread: String,
        #[arg(long, value_enum, default_value = "gp")]
        sampler: SamplerKind,
        #[arg(long, value_enum, default_value = "none")]
        pruner: PrunerKind,
        /// Fidelity designation such as `T6_V3_M25`.
        #[arg(long, default_value = "T1_V1_M25")]
        fidelity: String,
        /// Enable the learning-rate scheduler.
        #[arg(long)]
        scheduler: bool,
        /// Stop each trial at the end of its warmup.
        #[arg(long)]
        early_stop: bool,
        #[arg(long, default_value_t = 0)]
        calibration_epochs: u32,
        /// Trials that consume budget.
        #[arg(long, default_value_t = 20)]
        calls: usize,
        /// Random initial trials (GP) or startup trials (TPE).
        #[arg(long)]
        random: Option<usize>,
        #[arg(long, env = "SPRINTOPT_SEED", default_value_t = 0)]
        seed: u64,
        /// `warm|cold:SPRINT:TOP_N`
        #[arg(long)]
        prime: Option<String>,
        #[arg(long)]
        allow_init_mismatch: bool,
        #[arg(long, default_value_t = 3)]
        eta: u64,
        #[arg(long, env = "SPRINTOPT_WORKERS", default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        space_version: Option<u64>,
        #[arg(long, default_value = "JointMRC")]
        model_type: String,
        #[arg(long, default_value = "Bert-MTW")]
        variant: String,
        #[arg(long, default_value = "")]
        suffix: String,
        #[arg(long, default_value = "E0_S0")]
        init: String,
    },
    /// Shrink a sprint's space to its top-k hull and commit a new version.
    Prune {
        #[arg(long)]
        sprint: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// `DIM=VALUE`; repeatable.
        #[arg(long = "freeze")]
        freezes: Vec<String>,
    },
    /// Run the three-phase protocol on a thread.
    ThreePhase {
        #[arg(long)]
        thread: String,
        #[arg(long, env = "SPRINTOPT_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, env = "SPRINTOPT_WORKERS", default_value_t = 1)]
        workers: usize,
    },
    /// Fit the toy pipeline with threshold calibration and print the report.
    Calibrate {
        #[arg(long, default_value_t = 0)]
        pipeline_seed: u64,
        #[arg(long, default_value_t = 25)]
        epochs: u32,
        #[arg(long, default_value_t = 7)]
        calib_iters: u32,
        #[arg(long, default_value_t = 200)]
        docs: usize,
        #[arg(long, default_value_t = 96)]
        classes: usize,
    },
    /// Print a sprint's trials, incumbent and per-dimension hulls.
    Report {
        #[arg(long)]
        sprint: String,
        #[arg(long, value_enum, env = "SPRINTOPT_FORMAT", default_value = "json")]
        format: ReportFormat,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Serve the HTTP API over the store.
    Serve {
        #[arg(long, env = "SPRINTOPT_ADDR", default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

/// Outcome of a command: JSON or text for stdout, plus an exit code.
#[derive(Debug)]
pub struct Output {
    pub stdout: String,
    pub code: u8,
}

impl Output {
    fn ok(stdout: String) -> Self {
        Output { stdout, code: 0 }
    }
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

fn open(store: &PathBuf) -> Result<Engine> {
    Ok(Engine::open(store)?.with_resolver(resolve_objective))
}

pub fn parse_prime(s: &str) -> Result<PrimingRequest> {
    let bad =
        || Error::InvalidArgument(format!("--prime expects warm|cold:SPRINT:TOP_N, got `{s}`"));
    let mut parts = s.splitn(3, ':');
    let mode = match parts.next() {
        Some("warm") => PrimingMode::Warm,
        Some("cold") => PrimingMode::Cold,
        _ => return Err(bad()),
    };
    let source = parts.next().filter(|p| !p.is_empty()).ok_or_else(bad)?;
    let top_n = parts.next().and_then(|n| n.parse().ok()).ok_or_else(bad)?;
    Ok(PrimingRequest {
        mode,
        source: source.to_string(),
        top_n,
        allow_init_mismatch: false,
    })
}

pub fn parse_freeze(s: &str) -> Result<(String, Value)> {
    let (dim, raw) = s
        .split_once('=')
        .ok_or_else(|| Error::InvalidArgument(format!("--freeze expects DIM=VALUE, got `{s}`")))?;
    let value = if let Ok(i) = raw.parse::<i64>() {
        Value::Int(i)
    } else if let Ok(f) = raw.parse::<f64>() {
        Value::Real(f)
    } else {
        Value::Cat(raw.to_string())
    };
    Ok((dim.to_string(), value))
}

#[derive(Debug, Serialize)]
struct RunOutput {
    id: String,
    name: String,
    summary: SprintSummary,
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    sprint: &'a Sprint,
    summary: SprintSummary,
    hulls: Vec<ScatterSeries>,
}

/// CSV with columns `trial_id, status, score` and one per dimension.
pub fn report_csv(sprint: &Sprint, space: &SearchSpace) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["trial_id".to_string(), "status".into(), "score".into()];
    header.extend(space.dimensions.iter().map(|d| d.name.clone()));
    w.write_record(&header).map_err(csv_err)?;
    for t in &sprint.trials {
        let mut row = vec![
            t.id.to_string(),
            serde_json::to_value(t.status)?
                .as_str()
                .unwrap_or_default()
                .to_string(),
            t.final_score.map(|s| s.to_string()).unwrap_or_default(),
        ];
        row.extend(space.dimensions.iter().map(|d| {
            t.point
                .get(&d.name)
                .map(|v| v.to_string())
                .unwrap_or_default()
        }));
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("utf-8 fields"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

fn sprint_exit(sprint: &Sprint) -> u8 {
    match sprint.status {
        SprintStatus::Failed { .. } => 2,
        _ => 0,
    }
}

/// Executes a parsed command.
pub fn execute(cli: &Cli) -> Result<Output> {
    match &cli.command {
        Command::InitThread {
            name,
            grouping,
            objective,
            objective_seed,
            model_config,
        } => {
            if !OBJECTIVE_KINDS.contains(&objective.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "unknown objective `{objective}`; expected one of {}",
                    OBJECTIVE_KINDS.join(", ")
                )));
            }
            let scheme: GroupingScheme = grouping.parse()?;
            let engine = open(&cli.store)?;
            let spec = ObjectiveSpec::new(objective, *objective_seed).with_grouping(scheme.label());
            let thread = engine.create_thread(name, model_config, spec, None)?;
            Ok(Output::ok(json(&thread)?))
        }
        Command::RunSprint {
            thread,
            sampler,
            pruner,
            fidelity,
            scheduler,
            early_stop,
            calibration_epochs,
            calls,
            random,
            seed,
            prime,
            allow_init_mismatch,
            eta,
            workers,
            space_version,
            model_type,
            variant,
            suffix,
            init,
        } => {
            let engine = open(&cli.store)?;
            let grouping = engine
                .thread(thread)?
                .objective
                .grouping
                .unwrap_or_else(|| GroupingScheme::Global.label().to_string());
            let mut fidelity: FidelitySpec = fidelity.parse()?;
            fidelity.scheduler_enabled = *scheduler;
            fidelity.calibration_epochs = *calibration_epochs;
            if *early_stop {
                fidelity.early_stop = EarlyStop::EndOfWarmup;
            }
            let sampler = match sampler {
                SamplerKind::Gp => {
                    SamplerSpec::Gp(GpConfig::new(*calls, random.unwrap_or((*calls).min(10))))
                }
                SamplerKind::Tpe => SamplerSpec::Tpe {
                    n_trials: *calls,
                    config: TpeConfig {
                        n_startup: random.unwrap_or(TpeConfig::default().n_startup),
                        ..TpeConfig::default()
                    },
                },
            };
            let pruner = match pruner {
                PrunerKind::None => PrunerSpec::None,
                PrunerKind::Hyperband => PrunerSpec::Hyperband {
                    eta: *eta,
                    max_resource: None,
                },
            };
            let priming = prime.as_deref().map(parse_prime).transpose()?.map(|mut p| {
                p.allow_init_mismatch = *allow_init_mismatch;
                p
            });
            let req = SprintRequest {
                thread: thread.clone(),
                model_type: model_type.clone(),
                variant: variant.clone(),
                grouping,
                suffix: suffix.clone(),
                space_version: *space_version,
                sampler,
                pruner,
                fidelity,
                init_checkpoint: init.parse::<InitCheckpoint>()?,
                seed: *seed,
                priming,
            };
            let sprint = engine.create_sprint(&req)?;
            let summary = engine.run_sprint(&sprint.id, *workers)?;
            let done = engine.sprint(&sprint.id)?;
            let out = RunOutput {
                id: done.id.clone(),
                name: done.name.render()?,
                summary,
            };
            Ok(Output {
                stdout: json(&out)?,
                code: sprint_exit(&done),
            })
        }
        Command::Prune { sprint, k, freezes } => {
            let engine = open(&cli.store)?;
            let freezes: Vec<(String, Value)> = freezes
                .iter()
                .map(|f| parse_freeze(f))
                .collect::<Result<_>>()?;
            let out = engine.prune_sprint(sprint, *k, &MarginPolicy::default(), &freezes)?;
            Ok(Output::ok(json(&out)?))
        }
        Command::ThreePhase {
            thread,
            seed,
            workers,
        } => {
            let engine = open(&cli.store)?;
            let cfg = ThreePhaseConfig {
                seed: *seed,
                worker_limit: *workers,
                ..ThreePhaseConfig::default()
            };
            let report = run_three_phase(&engine, thread, &cfg)?;
            Ok(Output::ok(json(&report)?))
        }
        Command::Calibrate {
            pipeline_seed,
            epochs,
            calib_iters,
            docs,
            classes,
        } => {
            let mut model = ToyModel::new(generate_corpus(*pipeline_seed, *docs, *classes)?);
            let policy = CalibrationPolicy {
                max_calib_iters: *calib_iters,
                ..CalibrationPolicy::default()
            };
            let report: FitReport = fit_with_calibration(&mut model, *epochs, &policy);
            let code = u8::from(report.error.is_some()) * 2;
            Ok(Output {
                stdout: json(&report)?,
                code,
            })
        }
        Command::Report { sprint, format, k } => {
            let engine = open(&cli.store)?;
            let s = engine.sprint(sprint)?;
            let space = engine.space(&s.thread, s.space_version)?;
            let stdout = match format {
                ReportFormat::Csv => report_csv(&s, &space)?,
                ReportFormat::Json => {
                    let hulls = space
                        .dimensions
                        .iter()
                        .map(|d| scatter(&s, &space, &d.name, *k))
                        .collect::<Result<Vec<_>>>()?;
                    json(&Report {
                        summary: SprintSummary::of(&s),
                        sprint: &s,
                        hulls,
                    })?
                }
            };
            Ok(Output::ok(stdout))
        }
        Command::Serve { addr } => {
            let engine = Arc::new(open(&cli.store)?);
            let runtime = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()?;
            runtime.block_on(crate::service::serve(engine, *addr))?;
            Ok(Output::ok(String::new()))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Priming { .. } => 2,
        _ => 1,
    }
}

/// Parses the process arguments, runs the command and reports errors on stderr.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            if !out.stdout.is_empty() {
                let _ = writeln!(stdout, "{}", out.stdout.trim_end());
            }
            ExitCode::from(out.code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
