//! Robot behavior policy.
//!
//! The robot mills in front of the start box until the fish is out, then
//! alternates between an approach phase, in which its memory of the fish's
//! avoidance reactions (the carefulness `a_t`) sets how directly and how fast
//! it closes in, and a lead phase, in which it tours the arena corners in
//! short bursts while the fish keeps up.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use log::{info, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotate, Pose, Vec2};
use crate::metrics::{approach_distance, ScoreState};
use crate::params::{ArenaSpec, ControllerParams, Params, ReferenceDistribution, CAREFULNESS_BINS};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "M")]
    Milling,
    #[serde(rename = "A")]
    Approach,
    #[serde(rename = "L")]
    Lead,
}

impl Phase {
    pub fn code(self) -> char {
        match self {
            Phase::Milling => 'M',
            Phase::Approach => 'A',
            Phase::Lead => 'L',
        }
    }

    pub fn from_code(code: &str) -> Option<Phase> {
        match code {
            "M" => Some(Phase::Milling),
            "A" => Some(Phase::Approach),
            "L" => Some(Phase::Lead),
            _ => None,
        }
    }

    /// Allowed edges: Milling→Approach and Approach↔Lead (plus self loops).
    pub fn can_transition_to(self, next: Phase) -> bool {
        matches!(
            (self, next),
            (Phase::Milling, Phase::Milling)
                | (Phase::Milling, Phase::Approach)
                | (Phase::Approach, Phase::Approach)
                | (Phase::Approach, Phase::Lead)
                | (Phase::Lead, Phase::Lead)
                | (Phase::Lead, Phase::Approach)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CarefulnessLaw {
    /// `a_t = a_{t-1} + η (ē_t − b_e)`.
    #[default]
    Integrator,
    /// `a_t = (1 − η) a_{t-1} + η (ē_t − b_e) Δt`.
    Leaky,
}

impl FromStr for CarefulnessLaw {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "integrator" => Ok(Self::Integrator),
            "leaky" => Ok(Self::Leaky),
            other => Err(Error::InvalidParameter(format!("unknown carefulness law {other:?}"))),
        }
    }
}

/// Treatment mode as configured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModeKind {
    Competent,
    Fixed { carefulness: f64 },
    Random,
    Inverse,
}

impl ModeKind {
    /// Fixed mode at the pretrial mean carefulness.
    pub const FIXED_DEFAULT: f64 = 0.528;

    pub fn label(&self) -> &'static str {
        match self {
            ModeKind::Competent => "competent",
            ModeKind::Fixed { .. } => "fixed",
            ModeKind::Random => "random",
            ModeKind::Inverse => "inverse",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ModeKind::Fixed { carefulness } = self {
            if !(0.0..=1.0).contains(carefulness) {
                return Err(Error::InvalidParameter(format!(
                    "fixed carefulness {carefulness} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for ModeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ModeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "competent" => Ok(Self::Competent),
            "fixed" => Ok(Self::Fixed {
                carefulness: Self::FIXED_DEFAULT,
            }),
            "random" => Ok(Self::Random),
            "inverse" => Ok(Self::Inverse),
            other => Err(Error::InvalidParameter(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub mode: ModeKind,
    pub law: CarefulnessLaw,
    pub params: Params,
    /// Milling time after which the fish is released regardless, seconds.
    pub exit_timeout: f64,
}

impl ControllerConfig {
    pub fn new(mode: ModeKind, params: Params) -> Self {
        Self {
            mode,
            law: CarefulnessLaw::default(),
            params,
            exit_timeout: 180.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mode.validate()?;
        self.params.validate()?;
        if !(self.exit_timeout > 0.0) {
            return Err(Error::InvalidParameter("exit_timeout must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionCommand {
    pub target: Vec2,
    pub speed_factor: f64,
}

/// What the tracker reports each tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub robot: Pose,
    pub fish: Vec2,
    /// Fish movement direction; derived from successive positions when absent.
    pub fish_heading: Option<f64>,
}

// ---------------------------------------------------------------------------
// Elementary operations
// ---------------------------------------------------------------------------

/// The term `η (ē_t − b_e)`, times `Δt` under the leaky law.
pub fn carefulness_drive(avoidance: f64, params: &ControllerParams, law: CarefulnessLaw, dt: f64) -> f64 {
    let drive = params.eta * (avoidance - params.b_e);
    match law {
        CarefulnessLaw::Integrator => drive,
        CarefulnessLaw::Leaky => drive * dt,
    }
}

/// One carefulness update; `sign = -1.0` gives the inverse-competent variant.
pub fn update_carefulness_signed(
    prev: f64,
    avoidance: f64,
    params: &ControllerParams,
    law: CarefulnessLaw,
    dt: f64,
    sign: f64,
) -> f64 {
    let drive = sign * carefulness_drive(avoidance, params, law, dt);
    let next = match law {
        CarefulnessLaw::Integrator => prev + drive,
        CarefulnessLaw::Leaky => (1.0 - params.eta) * prev + drive,
    };
    next.clamp(0.0, 1.0)
}

pub fn update_carefulness(prev: f64, avoidance: f64, params: &ControllerParams, law: CarefulnessLaw, dt: f64) -> f64 {
    update_carefulness_signed(prev, avoidance, params, law, dt, 1.0)
}

/// `+1` when the robot is left of the fish's movement direction, `-1` when
/// right; on the heading line the previous value is kept.
pub fn side_indicator(fish: Pose, robot: Vec2, previous: f64) -> f64 {
    let offset = robot - fish.position;
    let c = fish.direction().cross(offset);
    // sin/cos rounding leaves ~1e-16 residue for points on the heading line
    let tie = 1e-12 * offset.norm();
    if c > tie {
        1.0
    } else if c < -tie {
        -1.0
    } else {
        previous
    }
}

/// Approach target: a point `approach_offset` short of the fish on the
/// robot–fish line, swung about the robot by `a_t · 90°` toward the fish's
/// movement direction.
pub fn approach_target(
    robot: Vec2,
    fish: Vec2,
    carefulness: f64,
    side: f64,
    params: &ControllerParams,
    arena: &ArenaSpec,
) -> Result<Vec2> {
    let towards_robot = (robot - fish)
        .normalized()
        .ok_or(Error::DegenerateGeometry("robot and fish share a position"))?;
    let default_target = fish + towards_robot * params.approach_offset;
    let angle = carefulness * FRAC_PI_2 * side;
    Ok(arena.clamp(rotate(default_target - robot, angle) + robot))
}

pub fn speed_factor(carefulness: f64, phase: Phase, params: &ControllerParams) -> f64 {
    match phase {
        Phase::Approach => 1.0 - carefulness + params.base_speed_s_c,
        Phase::Lead => params.lead_speed_factor,
        Phase::Milling => params.milling_speed / params.speed_unit,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseTimers {
    pub comfort: f64,
    pub apart: f64,
}

const TIMER_EPS: f64 = 1e-9;

/// Approach↔lead switching on fish distance. Milling is left only through
/// activation, which is handled by the caller.
pub fn phase_transition(
    phase: Phase,
    timers: &mut PhaseTimers,
    fish_dist: f64,
    dt: f64,
    params: &ControllerParams,
) -> Phase {
    match phase {
        Phase::Milling => Phase::Milling,
        Phase::Approach => {
            if fish_dist < params.d_close {
                // too close: hold approach, timer paused
                Phase::Approach
            } else if fish_dist <= params.d_comf {
                timers.comfort += dt;
                if timers.comfort + TIMER_EPS >= params.comfort_dwell {
                    *timers = PhaseTimers::default();
                    Phase::Lead
                } else {
                    Phase::Approach
                }
            } else {
                timers.comfort = 0.0;
                Phase::Approach
            }
        }
        Phase::Lead => {
            if fish_dist > params.lead_follow_dist {
                timers.apart += dt;
                if timers.apart + TIMER_EPS >= params.lead_tolerance {
                    *timers = PhaseTimers::default();
                    Phase::Approach
                } else {
                    Phase::Lead
                }
            } else {
                timers.apart = 0.0;
                Phase::Lead
            }
        }
    }
}

/// Next lead burst target and the (possibly advanced) corner index.
pub fn lead_next_target(
    robot: Vec2,
    corner_index: usize,
    params: &ControllerParams,
    arena: &ArenaSpec,
) -> (Vec2, usize) {
    let corners = arena.corners();
    let mut index = corner_index % corners.len();
    if robot.distance(corners[index]) <= params.corner_arrival_radius {
        index = (index + 1) % corners.len();
    }
    let corner = corners[index];
    let offset = corner - robot;
    let target = if offset.norm() <= params.lead_burst {
        corner
    } else {
        robot + offset * (params.lead_burst / offset.norm())
    };
    (target, index)
}

/// Corner the robot heads for when a lead phase starts: the first one
/// clockwise from its bearing around the arena center.
pub fn first_lead_corner(robot: Vec2, arena: &ArenaSpec) -> usize {
    let center = arena.center();
    let bearing = (robot - center).angle();
    let tau = std::f64::consts::TAU;
    arena
        .corners()
        .iter()
        .map(|c| (bearing - (*c - center).angle()).rem_euclid(tau))
        .enumerate()
        // skip a corner the robot is essentially sitting on
        .map(|(i, delta)| (i, if delta < 0.3 { delta + tau } else { delta }))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Point on the milling circle in front of the start box door at time `t`.
pub fn milling_target(t: f64, params: &ControllerParams, arena: &ArenaSpec) -> Vec2 {
    let radius = params.milling_diameter / 2.0;
    let center = arena.door() + arena.door_normal() * params.milling_center_offset;
    let omega = params.milling_speed / radius;
    arena.clamp(center + Vec2::from_angle(omega * t) * radius)
}

// ---------------------------------------------------------------------------
// Mode state
// ---------------------------------------------------------------------------

/// Random-mode bookkeeping: approach time spent per carefulness bin, used to
/// steer later draws toward bins that lag behind the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomCarefulness {
    pub target: ReferenceDistribution,
    pub spent: [f64; CAREFULNESS_BINS],
    pub total: f64,
    pub bin: Option<usize>,
}

impl RandomCarefulness {
    pub fn new(target: ReferenceDistribution) -> Self {
        Self {
            target,
            spent: [0.0; CAREFULNESS_BINS],
            total: 0.0,
            bin: None,
        }
    }

    /// Sampling weights: each bin's shortfall against the reference after one more step.
    pub fn deficit_weights(&self, dt: f64) -> [f64; CAREFULNESS_BINS] {
        let horizon = self.total + dt;
        let mut w = [0.0; CAREFULNESS_BINS];
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = (self.target.frequencies()[i] * horizon - self.spent[i]).max(0.0);
        }
        w
    }

    pub fn sample(&mut self, rng: &mut SimRng, dt: f64) -> f64 {
        let mut weights = self.deficit_weights(dt);
        let mut total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            warn!("random-mode deficit fully depleted; sampling from the reference distribution");
            weights = *self.target.frequencies();
            total = weights.iter().sum();
        }
        let u: f64 = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = CAREFULNESS_BINS - 1;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc && *w > 0.0 {
                chosen = i;
                break;
            }
        }
        self.bin = Some(chosen);
        ReferenceDistribution::bin_center(chosen)
    }

    pub fn charge(&mut self, dt: f64) {
        if let Some(bin) = self.bin {
            self.spent[bin] += dt;
            self.total += dt;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeEvent {
    ApproachPhaseStart,
    Tick,
}

// ---------------------------------------------------------------------------
// Controller state
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ControllerState {
    pub phase: Phase,
    pub carefulness: f64,
    pub scores: ScoreState,
    pub timers: PhaseTimers,
    pub corner_index: usize,
    pub approach_index: usize,
    pub side: f64,
    pub fish_heading: Option<f64>,
    /// Seconds since the controller started (the milling clock).
    pub elapsed: f64,
    /// Random mode only.
    pub random: Option<RandomCarefulness>,
    burst_target: Option<Vec2>,
    last_target: Option<Vec2>,
    prev: Option<(Vec2, Vec2)>,
    rng: SimRng,
}

impl ControllerState {
    pub fn new(config: &ControllerConfig, rng: SimRng) -> Self {
        let carefulness = match config.mode {
            ModeKind::Fixed { carefulness } => carefulness,
            _ => config.params.controller.carefulness_init,
        };
        let random = matches!(config.mode, ModeKind::Random)
            .then(|| RandomCarefulness::new(config.params.reference_distribution.clone()));
        Self {
            phase: Phase::Milling,
            carefulness,
            scores: ScoreState::new(&config.params.follow),
            timers: PhaseTimers::default(),
            corner_index: 0,
            approach_index: 0,
            side: 1.0,
            fish_heading: None,
            elapsed: 0.0,
            random,
            burst_target: None,
            last_target: None,
            prev: None,
            rng,
        }
    }

    /// Carefulness for this tick under the configured mode.
    pub fn mode_carefulness(&mut self, event: ModeEvent, config: &ControllerConfig) -> f64 {
        let params = &config.params.controller;
        let dt = config.params.time.dt();
        match (config.mode, event) {
            (ModeKind::Competent, ModeEvent::Tick) => {
                self.carefulness = update_carefulness(self.carefulness, self.scores.avoidance, params, config.law, dt);
            }
            (ModeKind::Inverse, ModeEvent::Tick) => {
                self.carefulness =
                    update_carefulness_signed(self.carefulness, self.scores.avoidance, params, config.law, dt, -1.0);
            }
            (ModeKind::Fixed { carefulness }, _) => self.carefulness = carefulness,
            (ModeKind::Random, ModeEvent::ApproachPhaseStart) => {
                if let Some(random) = self.random.as_mut() {
                    self.carefulness = random.sample(&mut self.rng, dt);
                }
            }
            _ => {}
        }
        self.carefulness
    }

    fn enter_approach(&mut self, config: &ControllerConfig) {
        self.phase = Phase::Approach;
        self.approach_index += 1;
        self.burst_target = None;
        self.mode_carefulness(ModeEvent::ApproachPhaseStart, config);
    }

    fn update_heading(&mut self, obs: &Observation) {
        if let Some(h) = obs.fish_heading.filter(|h| h.is_finite()) {
            self.fish_heading = Some(h);
        } else if let Some((_, fish_prev)) = self.prev {
            let moved = obs.fish - fish_prev;
            if moved.norm() > 1e-9 {
                self.fish_heading = Some(moved.angle());
            }
        }
    }

    /// Advances the controller by one tick.
    pub fn step(&mut self, obs: &Observation, config: &ControllerConfig) -> MotionCommand {
        let params = &config.params.controller;
        let arena = &config.params.arena;
        let dt = config.params.time.dt();
        let robot = obs.robot.position;
        let fish = obs.fish;
        let dist = robot.distance(fish);

        self.update_heading(obs);

        match self.phase {
            Phase::Milling => {
                let released = arena.is_released(fish);
                if released || self.elapsed + TIMER_EPS >= config.exit_timeout {
                    if !released {
                        info!(
                            "fish still in the start box after {:.0} s; forcing release",
                            config.exit_timeout
                        );
                    }
                    self.enter_approach(config);
                }
            }
            phase => {
                let d_t = self
                    .prev
                    .and_then(|(r, f)| approach_distance(r, f, fish, dt).ok())
                    .unwrap_or(0.0);
                self.scores
                    .update(d_t, dist <= params.d_i, params, &config.params.follow);
                self.mode_carefulness(ModeEvent::Tick, config);

                let next = phase_transition(phase, &mut self.timers, dist, dt, params);
                if next != phase {
                    match next {
                        Phase::Approach => self.enter_approach(config),
                        Phase::Lead => {
                            self.phase = Phase::Lead;
                            self.corner_index = first_lead_corner(robot, arena);
                            self.burst_target = None;
                            if let Some(random) = self.random.as_mut() {
                                random.bin = None;
                            }
                        }
                        Phase::Milling => unreachable!("milling is never re-entered"),
                    }
                }
            }
        }

        if self.phase == Phase::Approach {
            if let Some(random) = self.random.as_mut() {
                random.charge(dt);
            }
        }

        let target = match self.phase {
            Phase::Milling => milling_target(self.elapsed, params, arena),
            Phase::Approach => {
                let heading = self.fish_heading.unwrap_or_else(|| (robot - fish).angle());
                self.side = side_indicator(Pose::new(fish, heading), robot, self.side);
                approach_target(robot, fish, self.carefulness, self.side, params, arena)
                    .unwrap_or_else(|_| self.last_target.unwrap_or(robot))
            }
            Phase::Lead => self.lead_target(robot, dist, params, arena),
        };

        self.last_target = Some(target);
        self.prev = Some((robot, fish));
        self.elapsed += dt;
        MotionCommand {
            target,
            speed_factor: speed_factor(self.carefulness, self.phase, params),
        }
    }

    fn lead_target(&mut self, robot: Vec2, fish_dist: f64, params: &ControllerParams, arena: &ArenaSpec) -> Vec2 {
        if let Some(t) = self.burst_target {
            if robot.distance(t) > params.burst_arrival_radius {
                return t;
            }
        }
        if fish_dist > params.lead_follow_dist {
            // wait for the fish before the next burst
            self.burst_target = None;
            return robot;
        }
        let (t, index) = lead_next_target(robot, self.corner_index, params, arena);
        self.corner_index = index;
        self.burst_target = Some(t);
        t
    }
}

/// Functional form of [`ControllerState::step`].
pub fn controller_step(
    state: &ControllerState,
    obs: &Observation,
    config: &ControllerConfig,
) -> (ControllerState, MotionCommand) {
    let mut next = state.clone();
    let cmd = next.step(obs, config);
    (next, cmd)
}
