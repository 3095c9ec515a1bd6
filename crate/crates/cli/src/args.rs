use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

/// Robot leadership laboratory: closed-loop trials against simulated guppies,
/// experiments, analysis and the tracker bridge.
#[derive(Debug, Parser)]
#[command(name = "leadsim", version, about, propagate_version = true)]
pub struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn", env = "LEADSIM_LOG")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Simulate one trial and write its trajectory CSV and manifest.
    Run(RunArgs),
    /// Run competent-mode pretrials and emit the pooled carefulness distribution.
    Pretrial(PretrialArgs),
    /// Run a paired experiment (competent against a control arm) and report on it.
    Experiment(ExperimentArgs),
    /// Recompute summaries, statistics and report tables for a dataset directory.
    Analyze(AnalyzeArgs),
    /// Recompute scores and follow episodes for any two-agent trajectory CSV.
    Metrics(MetricsArgs),
    /// Serve the controller over TCP for an external tracker.
    Serve(ServeArgs),
    /// Re-execute the invocation recorded in an `invocation.json`.
    #[serde(skip)]
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Competent,
    Fixed,
    Random,
    Inverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LawArg {
    Integrator,
    Leaky,
}

/// Parameter sources shared by the simulating subcommands.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ParamArgs {
    /// Parameter file (JSON); defaults to the built-in canonical set.
    #[arg(long, value_name = "FILE")]
    pub params: Option<PathBuf>,
    /// Fish population file (JSON); defaults to the frozen built-in population.
    #[arg(long, value_name = "FILE")]
    pub population: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ControllerArgs {
    /// Controller mode.
    #[arg(long, value_enum, default_value = "competent")]
    pub mode: ModeArg,
    /// Carefulness used by fixed mode.
    #[arg(long, default_value_t = 0.528, value_name = "A")]
    pub carefulness: f64,
    /// Carefulness update law.
    #[arg(long, value_enum, default_value = "integrator")]
    pub carefulness_law: LawArg,
    /// Milling time after which the fish counts as released anyway, seconds.
    #[arg(long, default_value_t = 180.0, value_name = "SECONDS")]
    pub exit_timeout: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RunArgs {
    #[command(flatten)]
    pub controller: ControllerArgs,
    /// Trial seed (required; there is no clock-derived default).
    #[arg(long)]
    pub seed: u64,
    /// Post-release duration, seconds.
    #[arg(long, default_value_t = 600.0, value_name = "SECONDS")]
    pub duration: f64,
    /// Replay this trajectory CSV as the fish instead of simulating a guppy.
    #[arg(long, value_name = "CSV")]
    pub replay: Option<PathBuf>,
    /// Sample rate of the replayed file, Hz.
    #[arg(long, default_value_t = 25.0, value_name = "HZ", requires = "replay")]
    pub replay_rate: f64,
    /// Drive the robot from a controller served at this address instead of in-process.
    #[arg(long, value_name = "HOST:PORT")]
    pub bridge: Option<String>,
    /// Output directory [default: $LEADSIM_OUT/run-<seed>, or ./leadsim-out/run-<seed>].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub params: ParamArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PretrialArgs {
    /// Number of pretrials.
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    /// Root seed; trial i uses a seed derived from it.
    #[arg(long)]
    pub seed: u64,
    /// Post-release duration of each pretrial, seconds.
    #[arg(long, default_value_t = 600.0, value_name = "SECONDS")]
    pub duration: f64,
    /// Output directory [default: $LEADSIM_OUT/pretrial-<seed>].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub params: ParamArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ExperimentArgs {
    /// 1: competent vs fixed, 2: competent vs random, 3: competent vs inverse.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=3))]
    pub id: u32,
    /// Trials per arm.
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    /// Root seed; trial i uses a seed derived from it.
    #[arg(long)]
    pub seed: u64,
    /// Worker threads (0 = all cores); outputs do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Carefulness update law for the competent and inverse arms.
    #[arg(long, value_enum, default_value = "integrator")]
    pub carefulness_law: LawArg,
    /// Post-release duration of each trial, seconds.
    #[arg(long, default_value_t = 600.0, value_name = "SECONDS")]
    pub duration: f64,
    /// Output directory [default: $LEADSIM_OUT/experiment<id>-<seed>].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub params: ParamArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AnalyzeArgs {
    /// Dataset directory written by `experiment`.
    pub dataset: PathBuf,
    /// Where to write the report [default: <DATASET>/report].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Parameter file used to re-derive episodes; defaults to the canonical set.
    #[arg(long, value_name = "FILE")]
    pub params: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MetricsArgs {
    /// CSV with fish_x, fish_y, robot_x, robot_y columns (phase optional).
    pub trajectory: PathBuf,
    /// Sample rate of the input, Hz; other rates are resampled to 25 Hz.
    #[arg(long, default_value_t = 25.0, value_name = "HZ")]
    pub source_rate: f64,
    /// Output directory [default: next to the input].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Parameter file; defaults to the canonical set.
    #[arg(long, value_name = "FILE")]
    pub params: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ServeArgs {
    #[command(flatten)]
    pub controller: ControllerArgs,
    /// Listen address.
    #[arg(long, default_value = "127.0.0.1:7025", value_name = "HOST:PORT")]
    pub addr: String,
    /// Seed of every session's controller stream.
    #[arg(long)]
    pub seed: u64,
    /// Parameter file; defaults to the canonical set.
    #[arg(long, value_name = "FILE")]
    pub params: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RerunArgs {
    /// An `invocation.json` written by an earlier run.
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}
