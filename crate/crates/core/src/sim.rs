//! Trial loop, pretrials and experiments.
//!
//! A trial starts with the fish in the start box and the robot milling in
//! front of the door. Once the fish is out (or the exit timeout expires) the
//! controller activates and the loop runs for the configured duration at the
//! configured rate. Every random draw comes from streams derived from the
//! trial seed, so a trial is a pure function of its config.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{
    approach_target, milling_target, CarefulnessLaw, ControllerConfig, ControllerState, ModeKind, MotionCommand,
    Observation, Phase,
};
use crate::error::{Error, Result};
use crate::fish::{
    sample_personality, Fish, FishSpec, FishWorld, GuppyFish, PopulationConfig, ReplayFish, ReplayTrack, ScriptedFish,
};
use crate::geometry::{Pose, Vec2};
use crate::kinematics::{advance_robot, RobotMotionParams};
use crate::metrics::{avoidance_event, trial_summary, TrialSummary};
use crate::params::{Params, ReferenceDistribution};
use crate::record::{read_foreign_track, write_record, TrialManifest, TrialRecord, TrialRow};
use crate::rng::{stream, trial_seed, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialConfig {
    pub mode: ModeKind,
    pub law: CarefulnessLaw,
    pub fish: FishSpec,
    pub seed: u64,
    /// Post-release duration, seconds.
    pub duration: f64,
    /// Forced release after this much milling, seconds.
    pub exit_timeout: f64,
    pub params: Params,
    pub motion: RobotMotionParams,
    pub population: PopulationConfig,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            mode: ModeKind::Competent,
            law: CarefulnessLaw::Integrator,
            fish: FishSpec::default(),
            seed: 0,
            duration: 600.0,
            exit_timeout: 180.0,
            params: Params::canonical(),
            motion: RobotMotionParams::default(),
            population: PopulationConfig::canonical(),
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidParameter("duration must be positive".into()));
        }
        self.motion.validate()?;
        self.population.validate()?;
        if let FishSpec::Guppy { personality: Some(p) } = &self.fish {
            p.validate()?;
        }
        self.controller_config().validate()
    }

    pub fn controller_config(&self) -> ControllerConfig {
        ControllerConfig {
            mode: self.mode,
            law: self.law,
            params: self.params.clone(),
            exit_timeout: self.exit_timeout,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Controller output for one tick, with the internals that go into the record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub command: MotionCommand,
    pub phase: Phase,
    pub carefulness: f64,
    pub avoid_score: f64,
    pub follow_score: f64,
    pub approach_idx: usize,
}

/// Anything that turns observations into motion commands: the in-process
/// controller, or a remote one behind the bridge.
pub trait CommandSource {
    fn command(&mut self, step: usize, time_s: f64, obs: &Observation) -> Result<StepReport>;
}

pub struct LocalController {
    pub config: ControllerConfig,
    pub state: ControllerState,
}

impl LocalController {
    pub fn new(config: ControllerConfig, seed: u64) -> Self {
        let state = ControllerState::new(&config, stream(seed, Stream::Controller));
        Self { config, state }
    }

    pub fn report(&self, command: MotionCommand) -> StepReport {
        StepReport {
            command,
            phase: self.state.phase,
            carefulness: self.state.carefulness,
            avoid_score: self.state.scores.avoidance,
            follow_score: self.state.scores.follow,
            approach_idx: self.state.approach_index,
        }
    }
}

impl CommandSource for LocalController {
    fn command(&mut self, _step: usize, _time_s: f64, obs: &Observation) -> Result<StepReport> {
        let command = self.state.step(obs, &self.config);
        Ok(self.report(command))
    }
}

fn build_fish(config: &TrialConfig) -> Result<(Fish, Option<crate::fish::GuppyPersonality>)> {
    let arena = &config.params.arena;
    match &config.fish {
        FishSpec::Guppy { personality } => {
            let personality = match personality {
                Some(p) => *p,
                None => sample_personality(&mut stream(config.seed, Stream::Personality), &config.population),
            };
            let fish = GuppyFish::new(
                personality,
                config.population.model.clone(),
                arena,
                stream(config.seed, Stream::Fish),
            );
            Ok((Fish::Guppy(Box::new(fish)), Some(personality)))
        }
        FishSpec::Scripted { script } => Ok((Fish::Scripted(ScriptedFish::new(script.clone())?), None)),
        FishSpec::Replay { path, source_rate } => {
            let track = read_foreign_track(path, Some(*source_rate), config.params.time.rate)?;
            let replay = ReplayTrack::resample(&track.fish, config.params.time.rate, config.params.time.rate)?;
            Ok((Fish::Replay(ReplayFish::new(replay)?), None))
        }
    }
}

/// Robot start pose: on the milling circle, facing along it.
pub fn initial_robot_pose(params: &Params) -> Pose {
    let p = milling_target(0.0, &params.controller, &params.arena);
    Pose::new(p, std::f64::consts::FRAC_PI_2)
}

pub fn run_trial(config: &TrialConfig) -> Result<TrialRecord> {
    config.validate()?;
    let mut controller = LocalController::new(config.controller_config(), config.seed);
    run_trial_with(config, &mut controller)
}

/// The trial loop, with the controller supplied by the caller.
pub fn run_trial_with(config: &TrialConfig, source: &mut dyn CommandSource) -> Result<TrialRecord> {
    config.validate()?;
    let params = &config.params;
    let arena = &params.arena;
    let dt = params.time.dt();
    let active_target = params.time.steps(config.duration);
    // milling cannot outlast the exit timeout by more than a step
    let max_steps = params.time.steps(config.exit_timeout) + active_target + 2;

    let (mut fish, personality) = build_fish(config)?;
    let mut robot = initial_robot_pose(params);
    let mut robot_speed = 0.0;

    let mut rows = Vec::with_capacity(active_target + 1);
    rows.push(
        TrialRow {
            step: 0,
            time_s: 0.0,
            fish_x: fish.pose().position.x,
            fish_y: fish.pose().position.y,
            robot_x: robot.position.x,
            robot_y: robot.position.y,
            phase: Phase::Milling,
            carefulness: match config.mode {
                ModeKind::Fixed { carefulness } => carefulness,
                _ => params.controller.carefulness_init,
            },
            avoid_score: 0.5,
            follow_score: params.follow.follow_init,
            robot_speed: 0.0,
            fish_speed: 0.0,
            approach_idx: 0,
        }
        .quantized(),
    );

    let mut active = 0usize;
    let mut release_step = None;
    let mut forced_release = false;
    for step in 1..=max_steps {
        let time_s = step as f64 * dt;
        let fish_pose = fish.pose();
        let obs = Observation {
            robot,
            fish: fish_pose.position,
            fish_heading: Some(fish_pose.heading),
        };
        let report = source.command(step, time_s, &obs)?;
        if report.phase != Phase::Milling && release_step.is_none() {
            release_step = Some(step);
            forced_release = !arena.is_released(fish_pose.position);
            info!(
                "seed {}: controller active at step {step}{}",
                config.seed,
                if forced_release { " (forced release)" } else { "" }
            );
        }
        (robot, robot_speed) = advance_robot(
            robot,
            robot_speed,
            &report.command,
            dt,
            &config.motion,
            &params.controller,
            arena,
        );
        let world = FishWorld {
            robot,
            robot_speed,
            phase: report.phase,
            released: report.phase != Phase::Milling,
        };
        match fish.step(&world, arena, dt) {
            Ok(()) => {}
            Err(Error::TrialEnd(_)) => {
                info!("replay track exhausted at step {step}");
                break;
            }
            Err(e) => return Err(e),
        }
        let fish_now = fish.pose().position;
        rows.push(
            TrialRow {
                step,
                time_s,
                fish_x: fish_now.x,
                fish_y: fish_now.y,
                robot_x: robot.position.x,
                robot_y: robot.position.y,
                phase: report.phase,
                carefulness: report.carefulness,
                avoid_score: report.avoid_score,
                follow_score: report.follow_score,
                robot_speed,
                fish_speed: fish_now.distance(fish_pose.position) / dt,
                approach_idx: report.approach_idx,
            }
            .quantized(),
        );
        if report.phase != Phase::Milling {
            active += 1;
            if active == active_target {
                break;
            }
        }
    }

    let manifest = TrialManifest {
        artifact_version: crate::ARTIFACT_VERSION.to_string(),
        seed: config.seed,
        param_hash: params.hash(),
        population_hash: config.population.hash(),
        rate: params.time.rate,
        config: config.clone(),
        personality,
        release_step,
        forced_release,
    };
    Ok(TrialRecord { manifest, rows })
}

/// Competent-mode trials pooled into a carefulness histogram.
pub fn run_pretrials(n: usize, template: &TrialConfig) -> Result<ReferenceDistribution> {
    if n == 0 {
        return Err(Error::InvalidParameter("pretrials need n >= 1".into()));
    }
    let config = TrialConfig {
        mode: ModeKind::Competent,
        ..template.clone()
    };
    let values: Vec<Vec<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let record = run_trial(&config.with_seed(trial_seed(template.seed, i)))?;
            Ok(record.active_rows().iter().map(|r| r.carefulness).collect())
        })
        .collect::<Result<_>>()?;
    ReferenceDistribution::from_values(&values.concat())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum ExperimentId {
    /// Competent versus fixed carefulness.
    Fixed = 1,
    /// Competent versus random carefulness.
    Random = 2,
    /// Competent versus inverse-competent.
    Inverse = 3,
}

impl TryFrom<u32> for ExperimentId {
    type Error = Error;
    fn try_from(id: u32) -> Result<Self> {
        match id {
            1 => Ok(Self::Fixed),
            2 => Ok(Self::Random),
            3 => Ok(Self::Inverse),
            other => Err(Error::UnknownExperiment(other)),
        }
    }
}

impl From<ExperimentId> for u32 {
    fn from(id: ExperimentId) -> u32 {
        id as u32
    }
}

impl ExperimentId {
    pub fn control_mode(self) -> ModeKind {
        match self {
            ExperimentId::Fixed => ModeKind::Fixed {
                carefulness: ModeKind::FIXED_DEFAULT,
            },
            ExperimentId::Random => ModeKind::Random,
            ExperimentId::Inverse => ModeKind::Inverse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Competent,
    Control,
}

impl Arm {
    /// Arms alternate trial by trial, competent first.
    pub fn for_index(index: usize) -> Arm {
        if index.is_multiple_of(2) {
            Arm::Competent
        } else {
            Arm::Control
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEntry {
    pub index: usize,
    pub arm: Arm,
    pub mode: ModeKind,
    pub seed: u64,
    /// Trajectory file name inside the dataset directory, when persisted.
    pub file: Option<String>,
    pub summary: TrialSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentDataset {
    pub id: ExperimentId,
    pub root_seed: u64,
    pub n_per_arm: usize,
    pub control: ModeKind,
    pub artifact_version: String,
    pub param_hash: String,
    pub trials: Vec<TrialEntry>,
}

impl ExperimentDataset {
    pub fn arm(&self, arm: Arm) -> impl Iterator<Item = &TrialEntry> {
        self.trials.iter().filter(move |t| t.arm == arm)
    }

    /// One measure for every trial of an arm, in trial order.
    pub fn measure(&self, arm: Arm, f: impl Fn(&TrialSummary) -> f64) -> Vec<f64> {
        self.arm(arm).map(|t| f(&t.summary)).collect()
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(DATASET_FILE);
        let text = fs::read_to_string(&path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path,
            line: e.line(),
            message: e.to_string(),
        })
    }
}

pub const DATASET_FILE: &str = "dataset.json";

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub id: ExperimentId,
    pub n_per_arm: usize,
    pub root_seed: u64,
    pub template: TrialConfig,
    /// Worker threads; 0 uses rayon's default.
    pub jobs: usize,
    /// Where records and the dataset are written; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(id: ExperimentId, n_per_arm: usize, root_seed: u64) -> Self {
        Self {
            id,
            n_per_arm,
            root_seed,
            template: TrialConfig::default(),
            jobs: 0,
            out_dir: None,
        }
    }

    pub fn trial_config(&self, index: usize) -> TrialConfig {
        let mode = match Arm::for_index(index) {
            Arm::Competent => ModeKind::Competent,
            Arm::Control => self.id.control_mode(),
        };
        TrialConfig {
            mode,
            seed: trial_seed(self.root_seed, index as u64),
            ..self.template.clone()
        }
    }
}

pub fn trial_file_name(index: usize, arm: Arm) -> String {
    let label = match arm {
        Arm::Competent => "competent",
        Arm::Control => "control",
    };
    format!("trial_{index:03}_{label}.csv")
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentDataset> {
    if config.n_per_arm == 0 {
        return Err(Error::InvalidParameter("n_per_arm must be at least 1".into()));
    }
    config.template.validate()?;
    if let Some(dir) = &config.out_dir {
        fs::create_dir_all(dir)?;
    }
    let total = 2 * config.n_per_arm;
    let run_one = |index: usize| -> Result<TrialEntry> {
        let trial = config.trial_config(index);
        let record = run_trial(&trial)?;
        let arm = Arm::for_index(index);
        let file = match &config.out_dir {
            Some(dir) => {
                let name = trial_file_name(index, arm);
                write_record(&record, &dir.join(&name))?;
                Some(name)
            }
            None => None,
        };
        Ok(TrialEntry {
            index,
            arm,
            mode: trial.mode,
            seed: trial.seed,
            file,
            summary: trial_summary(&record, &trial.params.follow)?,
        })
    };
    let trials: Vec<TrialEntry> = if config.jobs == 1 {
        (0..total).map(run_one).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
        pool.install(|| (0..total).into_par_iter().map(run_one).collect::<Result<_>>())?
    };
    let dataset = ExperimentDataset {
        id: config.id,
        root_seed: config.root_seed,
        n_per_arm: config.n_per_arm,
        control: config.id.control_mode(),
        artifact_version: crate::ARTIFACT_VERSION.to_string(),
        param_hash: config.template.params.hash(),
        trials,
    };
    if let Some(dir) = &config.out_dir {
        let mut text = serde_json::to_string_pretty(&dataset)?;
        text.push('\n');
        fs::write(dir.join(DATASET_FILE), text)?;
    }
    Ok(dataset)
}

/// Outcome of driving the robot straight at a free guppy at a fixed speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepResult {
    pub startles_per_min: f64,
    /// Summed avoidance events `e_t` inside the interaction zone, per minute.
    pub avoidance_per_min: f64,
}

/// Probes the fish model: the robot heads straight for the fish (zero
/// carefulness) at `speed` cm/s, never switching to lead.
pub fn speed_sweep_trial(
    speed: f64,
    seed: u64,
    population: &PopulationConfig,
    params: &Params,
    duration: f64,
) -> Result<SweepResult> {
    let arena = &params.arena;
    let dt = params.time.dt();
    let motion = RobotMotionParams::default();
    let personality = sample_personality(&mut stream(seed, Stream::Personality), population);
    let mut fish = GuppyFish::free_at(
        Pose::new(Vec2::new(50.0, 70.0), 0.0),
        personality,
        population.model.clone(),
        stream(seed, Stream::Fish),
    );
    let mut robot = Pose::new(Vec2::new(50.0, 20.0), std::f64::consts::FRAC_PI_2);
    let mut robot_speed = 0.0;
    let command = MotionCommand {
        target: robot.position,
        speed_factor: speed / params.controller.speed_unit,
    };
    let mut avoidance = 0.0;
    let steps = params.time.steps(duration);
    for _ in 0..steps {
        let fish_prev = fish.pose.position;
        let robot_prev = robot.position;
        let target =
            approach_target(robot.position, fish_prev, 0.0, 1.0, &params.controller, arena).unwrap_or(robot.position);
        (robot, robot_speed) = advance_robot(
            robot,
            robot_speed,
            &MotionCommand { target, ..command },
            dt,
            &motion,
            &params.controller,
            arena,
        );
        let world = FishWorld {
            robot,
            robot_speed,
            phase: Phase::Approach,
            released: true,
        };
        fish.step(&world, arena, dt);
        if robot_prev.distance(fish_prev) <= params.controller.d_i {
            if let Ok(d) = crate::metrics::approach_distance(robot_prev, fish_prev, fish.pose.position, dt) {
                avoidance += avoidance_event(d, &params.controller);
            }
        }
    }
    let minutes = duration / 60.0;
    Ok(SweepResult {
        startles_per_min: fish.startles as f64 / minutes,
        avoidance_per_min: avoidance / minutes,
    })
}
