use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use serde::{Deserialize, Serialize};

use leadsim_core::analysis::analyze_dir;
use leadsim_core::bridge::{spawn_server, BridgeClient, ServerConfig, DEFAULT_TIMEOUT};
use leadsim_core::fish::{FishSpec, PopulationConfig};
use leadsim_core::metrics::{track_metrics, trial_summary};
use leadsim_core::params::CAREFULNESS_BINS;
use leadsim_core::record::{read_foreign_track, write_record};
use leadsim_core::sim::{run_experiment, run_pretrials, run_trial, run_trial_with, ExperimentConfig};
use leadsim_core::{CarefulnessLaw, ExperimentId, ModeKind, Params, ReferenceDistribution, TrialConfig};

use crate::args::*;

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "LEADSIM_OUT";
pub const INVOCATION_FILE: &str = "invocation.json";

/// What a subcommand recorded about itself, enough to run it again.
#[derive(Debug, Serialize, Deserialize)]
pub struct Invocation {
    pub artifact_version: String,
    pub param_hash: String,
    pub population_hash: Option<String>,
    #[serde(flatten)]
    pub command: Command,
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(a) => run(a),
        Command::Pretrial(a) => pretrial(a),
        Command::Experiment(a) => experiment(a),
        Command::Analyze(a) => analyze(a),
        Command::Metrics(a) => metrics(a),
        Command::Serve(a) => serve(a),
        Command::Rerun(a) => rerun(a),
    }
}

fn default_out(name: &str) -> PathBuf {
    let root = std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("leadsim-out"));
    root.join(name)
}

fn load_params(path: Option<&Path>) -> Result<Params> {
    match path {
        Some(p) => Params::load(p).with_context(|| format!("loading parameters from {}", p.display())),
        None => Ok(Params::canonical()),
    }
}

fn load_population(path: Option<&Path>) -> Result<PopulationConfig> {
    match path {
        Some(p) => PopulationConfig::load(p).with_context(|| format!("loading population from {}", p.display())),
        None => Ok(PopulationConfig::canonical()),
    }
}

fn law(arg: LawArg) -> CarefulnessLaw {
    match arg {
        LawArg::Integrator => CarefulnessLaw::Integrator,
        LawArg::Leaky => CarefulnessLaw::Leaky,
    }
}

fn mode(args: &ControllerArgs) -> ModeKind {
    match args.mode {
        ModeArg::Competent => ModeKind::Competent,
        ModeArg::Fixed => ModeKind::Fixed {
            carefulness: args.carefulness,
        },
        ModeArg::Random => ModeKind::Random,
        ModeArg::Inverse => ModeKind::Inverse,
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn record_invocation(
    dir: &Path,
    params: &Params,
    population: Option<&PopulationConfig>,
    command: Command,
) -> Result<()> {
    let invocation = Invocation {
        artifact_version: leadsim_core::ARTIFACT_VERSION.to_string(),
        param_hash: params.hash(),
        population_hash: population.map(|p| p.hash()),
        command,
    };
    let path = dir.join(INVOCATION_FILE);
    write_json(&path, &invocation)?;
    eprintln!("manifest: {}", path.display());
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let params = load_params(args.params.params.as_deref())?;
    let population = load_population(args.params.population.as_deref())?;
    let fish = match &args.replay {
        Some(path) => FishSpec::Replay {
            path: path.clone(),
            source_rate: args.replay_rate,
        },
        None => FishSpec::default(),
    };
    let config = TrialConfig {
        mode: mode(&args.controller),
        law: law(args.controller.carefulness_law),
        fish,
        seed: args.seed,
        duration: args.duration,
        exit_timeout: args.controller.exit_timeout,
        params: params.clone(),
        population: population.clone(),
        ..TrialConfig::default()
    };
    config.validate()?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| default_out(&format!("run-{}", args.seed)));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let record = match &args.bridge {
        Some(addr) => {
            let mut client = BridgeClient::connect(addr.as_str(), DEFAULT_TIMEOUT)
                .with_context(|| format!("connecting to bridge at {addr}"))?;
            if client.hello.param_hash != params.hash() {
                log::warn!(
                    "bridge parameter hash {} differs from local {}",
                    client.hello.param_hash,
                    params.hash()
                );
            }
            run_trial_with(&config, &mut client)?
        }
        None => run_trial(&config)?,
    };
    let csv = out.join("trial.csv");
    write_record(&record, &csv)?;
    let summary = trial_summary(&record, &params.follow)?;
    write_json(&out.join("summary.json"), &summary)?;
    record_invocation(&out, &params, Some(&population), Command::Run(args))?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    println!("trajectory: {}", csv.display());
    Ok(())
}

#[derive(Serialize)]
struct PretrialOutput<'a> {
    n: usize,
    root_seed: u64,
    mean: f64,
    total_variation_to_reference: f64,
    distribution: &'a ReferenceDistribution,
}

fn pretrial(args: PretrialArgs) -> Result<()> {
    let params = load_params(args.params.params.as_deref())?;
    let population = load_population(args.params.population.as_deref())?;
    let template = TrialConfig {
        seed: args.seed,
        duration: args.duration,
        params: params.clone(),
        population: population.clone(),
        ..TrialConfig::default()
    };
    template.validate()?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| default_out(&format!("pretrial-{}", args.seed)));
    fs::create_dir_all(&out)?;
    let distribution = run_pretrials(args.n, &template)?;
    let output = PretrialOutput {
        n: args.n,
        root_seed: args.seed,
        mean: distribution.mean(),
        total_variation_to_reference: distribution.total_variation(&params.reference_distribution),
        distribution: &distribution,
    };
    write_json(&out.join("reference.json"), &output)?;
    record_invocation(&out, &params, Some(&population), Command::Pretrial(args))?;

    println!("bin           frequency  reference");
    let reference = params.reference_distribution.frequencies();
    for (i, f) in distribution.frequencies().iter().enumerate() {
        let lo = i as f64 / CAREFULNESS_BINS as f64;
        let hi = (i + 1) as f64 / CAREFULNESS_BINS as f64;
        println!("[{lo:.1}, {hi:.1}]    {f:9.4}  {:9.4}", reference[i]);
    }
    println!("mean carefulness {:.4}", output.mean);
    println!(
        "total variation to reference {:.4}",
        output.total_variation_to_reference
    );
    Ok(())
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let params = load_params(args.params.params.as_deref())?;
    let population = load_population(args.params.population.as_deref())?;
    let id = ExperimentId::try_from(args.id)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| default_out(&format!("experiment{}-{}", args.id, args.seed)));
    let config = ExperimentConfig {
        template: TrialConfig {
            law: law(args.carefulness_law),
            duration: args.duration,
            params: params.clone(),
            population: population.clone(),
            ..TrialConfig::default()
        },
        jobs: args.jobs,
        out_dir: Some(out.clone()),
        ..ExperimentConfig::new(id, args.n, args.seed)
    };
    info!("running {} trials into {}", 2 * args.n, out.display());
    run_experiment(&config)?;
    let bundle = analyze_dir(&out, &params)?;
    let report_dir = out.join("report");
    bundle.write(&report_dir)?;
    for w in &bundle.warnings {
        log::warn!("{w}");
    }
    record_invocation(&out, &params, Some(&population), Command::Experiment(args))?;
    if let Some(summary) = bundle.file("summary.md") {
        println!("{summary}");
    }
    println!("dataset: {}", out.display());
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let params = load_params(args.params.as_deref())?;
    let bundle =
        analyze_dir(&args.dataset, &params).with_context(|| format!("analyzing {}", args.dataset.display()))?;
    let out = args.out.clone().unwrap_or_else(|| args.dataset.join("report"));
    bundle.write(&out)?;
    for w in &bundle.warnings {
        log::warn!("{w}");
    }
    record_invocation(&out, &params, None, Command::Analyze(args))?;
    if let Some(summary) = bundle.file("summary.md") {
        println!("{summary}");
    }
    println!("report: {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct MetricsSummary {
    samples: usize,
    resampled: bool,
    lead_mask: bool,
    mean_avoidance: f64,
    mean_follow: f64,
    episode_count: usize,
    total_follow_s: f64,
    mean_follow_s: f64,
}

fn metrics(args: MetricsArgs) -> Result<()> {
    let params = load_params(args.params.as_deref())?;
    let rate = params.time.rate;
    let track = read_foreign_track(&args.trajectory, Some(args.source_rate), rate)?;
    let m = track_metrics(
        &track.fish,
        &track.robot,
        track.lead.as_deref(),
        params.time.dt(),
        &params.controller,
        &params.follow,
    )?;
    let out = match &args.out {
        Some(dir) => dir.clone(),
        None => args
            .trajectory
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    fs::create_dir_all(&out)?;
    let stem = args
        .trajectory
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "track".into());
    let scores_path = out.join(format!("{stem}_metrics.csv"));
    let episodes_path = out.join(format!("{stem}_episodes.csv"));
    fs::write(&scores_path, m.to_csv())?;
    fs::write(&episodes_path, m.episodes_csv())?;

    let n = m.steps.len() as f64;
    let total: f64 = m.episodes.iter().map(|e| e.duration).sum();
    let summary = MetricsSummary {
        samples: m.steps.len(),
        resampled: track.resampled,
        lead_mask: track.lead.is_some(),
        mean_avoidance: m.steps.iter().map(|s| s.avoid_score).sum::<f64>() / n,
        mean_follow: m.steps.iter().map(|s| s.follow_score).sum::<f64>() / n,
        episode_count: m.episodes.len(),
        total_follow_s: total,
        mean_follow_s: if m.episodes.is_empty() {
            0.0
        } else {
            total / m.episodes.len() as f64
        },
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    println!("scores: {}", scores_path.display());
    println!("episodes: {}", episodes_path.display());
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let params = load_params(args.params.as_deref())?;
    let mut controller = leadsim_core::controller::ControllerConfig::new(mode(&args.controller), params);
    controller.law = law(args.controller.carefulness_law);
    controller.exit_timeout = args.controller.exit_timeout;
    controller.validate()?;
    let handle = spawn_server(
        args.addr.as_str(),
        ServerConfig {
            controller,
            seed: args.seed,
        },
    )
    .with_context(|| format!("binding {}", args.addr))?;
    eprintln!("listening on {}", handle.addr);
    handle.join();
    Ok(())
}

fn rerun(args: RerunArgs) -> Result<()> {
    let text = fs::read_to_string(&args.manifest).with_context(|| format!("reading {}", args.manifest.display()))?;
    let invocation: Invocation =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", args.manifest.display()))?;
    if invocation.artifact_version != leadsim_core::ARTIFACT_VERSION {
        log::warn!(
            "manifest written by {}, running {}",
            invocation.artifact_version,
            leadsim_core::ARTIFACT_VERSION
        );
    }
    let mut command = invocation.command;
    let params_path = match &command {
        Command::Run(a) => a.params.params.clone(),
        Command::Pretrial(a) => a.params.params.clone(),
        Command::Experiment(a) => a.params.params.clone(),
        Command::Analyze(a) => a.params.clone(),
        Command::Metrics(a) => a.params.clone(),
        Command::Serve(a) => a.params.clone(),
        Command::Rerun(_) => bail!("a manifest cannot record a rerun"),
    };
    let hash = load_params(params_path.as_deref())?.hash();
    if hash != invocation.param_hash {
        bail!(
            "parameter file changed since the manifest was written (hash {hash}, recorded {})",
            invocation.param_hash
        );
    }
    if let Some(out) = args.out {
        match &mut command {
            Command::Run(a) => a.out = Some(out),
            Command::Pretrial(a) => a.out = Some(out),
            Command::Experiment(a) => a.out = Some(out),
            Command::Analyze(a) => a.out = Some(out),
            Command::Metrics(a) => a.out = Some(out),
            Command::Serve(_) | Command::Rerun(_) => bail!("--out does not apply to this command"),
        }
    }
    dispatch(command)
}
