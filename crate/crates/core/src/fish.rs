//! Simulated fish: a stochastic guppy whose startle risk grows with how fast
//! and how directly the robot closes in, scripted fish for tests, and replay
//! of recorded tracks.
//!
//! The guppy is a behavioral toy, not a biological model. What matters is
//! that a careless approach carries a measurable cost (startles, lingering
//! fear, reluctance to follow), which is the premise the adaptive controller
//! relies on.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution as _, Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controller::Phase;
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Pose, Vec2};
use crate::kinematics::{advance_point, reflect_velocity, slide_velocity};
use crate::params::ArenaSpec;
use crate::rng::SimRng;

const DEFAULT_POPULATION: &str = include_str!("../params/population.json");

/// Hard ceiling on any fish speed, cm/s.
pub const MAX_FISH_SPEED: f64 = 40.0;
/// Robot speed below which a fearful fish no longer reads it as approaching, cm/s.
const LOOMING_MIN_SPEED: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase", deny_unknown_fields)]
pub enum Distribution {
    Point {
        value: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    /// Normal draw clamped to `[low, high]`.
    Normal {
        mean: f64,
        sd: f64,
        low: f64,
        high: f64,
    },
}

impl Distribution {
    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        match *self {
            Distribution::Point { value } => value,
            Distribution::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            Distribution::Normal { mean, sd, low, high } => {
                let z: f64 = StandardNormal.sample(rng);
                (mean + sd * z).clamp(low, high)
            }
        }
    }

    /// Smallest interval containing every possible draw.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Distribution::Point { value } => (value, value),
            Distribution::Uniform { low, high } | Distribution::Normal { low, high, .. } => (low, high),
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let (lo, hi) = self.support();
        let sd_ok = match self {
            Distribution::Normal { sd, .. } => *sd >= 0.0,
            _ => true,
        };
        if lo.is_finite() && hi.is_finite() && lo <= hi && sd_ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid distribution for {name}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonalityDistributions {
    pub boldness: Distribution,
    pub startle_gain: Distribution,
    pub preferred_dist: Distribution,
    pub cruise_speed: Distribution,
    pub burst_speed: Distribution,
    pub social_range: Distribution,
    pub follow_tendency: Distribution,
    pub exit_latency: Distribution,
}

/// Constants shared by every guppy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuppyModelParams {
    /// Seconds between stochastic mode decisions.
    pub decision_interval: f64,
    pub startle_offset: f64,
    /// Added to the startle offset per unit boldness.
    pub startle_offset_boldness: f64,
    /// Subtracted from the startle offset per unit fear.
    pub startle_offset_fear: f64,
    pub startle_duration_mean: f64,
    pub startle_duration_max: f64,
    /// Fear added by each startle (fear is capped at 1).
    pub fear_gain: f64,
    /// Fear decay time constant, seconds.
    pub fear_tau: f64,
    /// Heading diffusion, rad/√s.
    pub heading_noise: f64,
    /// Turn rate limit outside of startles, rad/s.
    pub turn_rate: f64,
    /// Calm fish are drawn toward a robot closer than this, cm.
    pub attraction_range: f64,
    /// Extra following speed per cm beyond the preferred distance, 1/s.
    pub follow_speed_gain: f64,
    /// Weight of fear-driven retreat from a robot inside `fear_range`.
    pub fear_avoidance: f64,
    /// Radius within which a fearful fish retreats, cm.
    pub fear_range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub version: u32,
    pub personality: PersonalityDistributions,
    pub model: GuppyModelParams,
}

impl PopulationConfig {
    /// The frozen default population.
    pub fn canonical() -> Self {
        Self::from_json(DEFAULT_POPULATION).expect("default population file is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: PopulationConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.personality;
        for (name, d) in [
            ("boldness", &p.boldness),
            ("startle_gain", &p.startle_gain),
            ("preferred_dist", &p.preferred_dist),
            ("cruise_speed", &p.cruise_speed),
            ("burst_speed", &p.burst_speed),
            ("social_range", &p.social_range),
            ("follow_tendency", &p.follow_tendency),
            ("exit_latency", &p.exit_latency),
        ] {
            d.validate(name)?;
        }
        let within = |d: &Distribution, lo: f64, hi: f64| {
            let (a, b) = d.support();
            a >= lo && b <= hi
        };
        if !within(&p.boldness, 0.0, 1.0) || !within(&p.follow_tendency, 0.0, 1.0) {
            return Err(Error::InvalidParameter(
                "boldness and follow_tendency must lie in [0, 1]".into(),
            ));
        }
        if p.startle_gain.support().0 < 0.0 || p.exit_latency.support().0 < 0.0 {
            return Err(Error::InvalidParameter(
                "startle_gain and exit_latency must be non-negative".into(),
            ));
        }
        if !(p.cruise_speed.support().0 > 0.0
            && p.cruise_speed.support().1 < p.burst_speed.support().0
            && p.burst_speed.support().1 <= MAX_FISH_SPEED)
        {
            return Err(Error::InvalidParameter(
                "speeds must satisfy 0 < cruise_speed < burst_speed <= 40".into(),
            ));
        }
        if p.preferred_dist.support().0 <= 0.0 || p.social_range.support().0 <= 0.0 {
            return Err(Error::InvalidParameter("distances must be positive".into()));
        }
        let m = &self.model;
        let positive = [
            m.decision_interval,
            m.startle_duration_mean,
            m.startle_duration_max,
            m.fear_tau,
            m.turn_rate,
            m.attraction_range,
            m.fear_range,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || m.heading_noise < 0.0 || m.fear_gain < 0.0 || m.fear_avoidance < 0.0
        {
            return Err(Error::InvalidParameter("invalid guppy model constants".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("population serializes")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuppyPersonality {
    pub boldness: f64,
    /// Startle gain per cm/s of effective closing speed.
    pub startle_gain: f64,
    pub preferred_dist: f64,
    pub cruise_speed: f64,
    pub burst_speed: f64,
    pub social_range: f64,
    pub follow_tendency: f64,
    /// Seconds the fish lingers in the start box.
    pub exit_latency: f64,
}

impl GuppyPersonality {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.boldness) || !unit(self.follow_tendency) {
            return Err(Error::InvalidParameter(
                "boldness and follow_tendency must lie in [0, 1]".into(),
            ));
        }
        if !(self.cruise_speed > 0.0 && self.cruise_speed < self.burst_speed && self.burst_speed <= MAX_FISH_SPEED) {
            return Err(Error::InvalidParameter(
                "speeds must satisfy 0 < cruise_speed < burst_speed <= 40".into(),
            ));
        }
        if !(self.startle_gain >= 0.0
            && self.preferred_dist > 0.0
            && self.social_range > 0.0
            && self.exit_latency >= 0.0)
        {
            return Err(Error::InvalidParameter("invalid personality".into()));
        }
        Ok(())
    }
}

pub fn sample_personality(rng: &mut SimRng, population: &PopulationConfig) -> GuppyPersonality {
    let p = &population.personality;
    GuppyPersonality {
        boldness: p.boldness.sample(rng),
        startle_gain: p.startle_gain.sample(rng),
        preferred_dist: p.preferred_dist.sample(rng),
        cruise_speed: p.cruise_speed.sample(rng),
        burst_speed: p.burst_speed.sample(rng),
        social_range: p.social_range.sample(rng),
        follow_tendency: p.follow_tendency.sample(rng),
        exit_latency: p.exit_latency.sample(rng),
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Probability of startling within one decision interval.
///
/// `stimulus` is the robot's closing speed times its directness (cosine of
/// the angle between its motion and the line to the fish), in cm/s.
pub fn startle_probability(personality: &GuppyPersonality, model: &GuppyModelParams, fear: f64, stimulus: f64) -> f64 {
    if personality.startle_gain == 0.0 || stimulus <= 0.0 {
        return 0.0;
    }
    let offset =
        model.startle_offset + model.startle_offset_boldness * personality.boldness - model.startle_offset_fear * fear;
    sigmoid(personality.startle_gain * stimulus - offset)
}

/// Closing speed times directness of a robot moving at `robot_speed` along
/// `robot.heading`, as seen from `fish`.
pub fn approach_stimulus(robot: Pose, robot_speed: f64, fish: Vec2) -> f64 {
    let Some(towards_fish) = (fish - robot.position).normalized() else {
        return 0.0;
    };
    let directness = robot.direction().dot(towards_fish).max(0.0);
    robot_speed.max(0.0) * directness * directness
}

/// What a fish sees of the robot each tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FishWorld {
    pub robot: Pose,
    pub robot_speed: f64,
    pub phase: Phase,
    /// The controller has left milling; the start box is open regardless.
    pub released: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FishMode {
    Calm,
    Startled { remaining: f64 },
    Following,
}

#[derive(Debug, Clone)]
pub struct GuppyFish {
    pub pose: Pose,
    pub speed: f64,
    pub mode: FishMode,
    pub fear: f64,
    pub personality: GuppyPersonality,
    pub startles: usize,
    model: GuppyModelParams,
    decision_clock: f64,
    time: f64,
    exiting: bool,
    free: bool,
    rng: SimRng,
}

impl GuppyFish {
    /// A fish waiting in the start box.
    pub fn new(personality: GuppyPersonality, model: GuppyModelParams, arena: &ArenaSpec, rng: SimRng) -> Self {
        Self {
            pose: Pose::new(arena.startbox_center(), std::f64::consts::FRAC_PI_2),
            speed: 0.0,
            mode: FishMode::Calm,
            fear: 0.0,
            personality,
            startles: 0,
            model,
            decision_clock: 0.0,
            time: 0.0,
            exiting: false,
            free: false,
            rng,
        }
    }

    /// A fish already out in the arena.
    pub fn free_at(pose: Pose, personality: GuppyPersonality, model: GuppyModelParams, rng: SimRng) -> Self {
        Self {
            pose,
            speed: 0.0,
            mode: FishMode::Calm,
            fear: 0.0,
            personality,
            startles: 0,
            model,
            decision_clock: 0.0,
            time: 0.0,
            exiting: true,
            free: true,
            rng,
        }
    }

    pub fn step(&mut self, world: &FishWorld, arena: &ArenaSpec, dt: f64) {
        self.time += dt;
        if self.free {
            self.step_free(world, arena, dt);
        } else {
            self.step_in_box(world, arena, dt);
        }
    }

    fn step_in_box(&mut self, world: &FishWorld, arena: &ArenaSpec, dt: f64) {
        if !self.exiting && (self.time >= self.personality.exit_latency || world.released) {
            self.exiting = true;
        }
        if !self.exiting {
            self.speed = 0.0;
            return;
        }
        let exit = arena.door() + arena.door_normal() * (arena.release_margin + 5.0);
        let to_exit = exit - self.pose.position;
        let travel = (self.personality.cruise_speed * dt).min(to_exit.norm());
        if let Some(dir) = to_exit.normalized() {
            self.pose = Pose::new(self.pose.position + dir * travel, dir.angle());
        }
        self.speed = travel / dt;
        if arena.is_released(self.pose.position) {
            self.free = true;
        }
    }

    fn decide(&mut self, world: &FishWorld, dist: f64) {
        let startled = matches!(self.mode, FishMode::Startled { .. });
        let u_startle: f64 = self.rng.random();
        let u_follow: f64 = self.rng.random();
        let duration: f64 = Exp::new(1.0 / self.model.startle_duration_mean)
            .expect("positive rate")
            .sample(&mut self.rng);
        if startled {
            return;
        }
        if dist <= self.personality.social_range {
            let stimulus = approach_stimulus(world.robot, world.robot_speed, self.pose.position);
            let p = startle_probability(&self.personality, &self.model, self.fear, stimulus);
            if u_startle < p {
                self.mode = FishMode::Startled {
                    remaining: duration.min(self.model.startle_duration_max),
                };
                self.fear = (self.fear + self.model.fear_gain).min(1.0);
                self.startles += 1;
                return;
            }
        }
        let follow_p = self.personality.follow_tendency * (1.0 - self.fear);
        self.mode = if world.phase == Phase::Lead && dist <= self.personality.social_range && u_follow < follow_p {
            FishMode::Following
        } else {
            FishMode::Calm
        };
    }

    fn step_free(&mut self, world: &FishWorld, arena: &ArenaSpec, dt: f64) {
        let p = self.personality;
        let m = &self.model;
        self.fear *= libm::exp(-dt / m.fear_tau);
        let to_robot = world.robot.position - self.pose.position;
        let dist = to_robot.norm();
        let towards_robot = to_robot.normalized().unwrap_or_else(|| self.pose.direction());

        if let FishMode::Startled { remaining } = &mut self.mode {
            *remaining -= dt;
            if *remaining <= 0.0 {
                self.mode = FishMode::Calm;
            }
        }
        self.decision_clock += dt;
        if self.decision_clock + 1e-9 >= m.decision_interval {
            self.decision_clock -= m.decision_interval;
            self.decide(world, dist);
        }

        let noise: f64 = StandardNormal.sample(&mut self.rng);
        let jitter = noise * self.model.heading_noise * dt.sqrt();
        let (desired, speed, instant) = match self.mode {
            FishMode::Startled { .. } => (-towards_robot, p.burst_speed, true),
            FishMode::Following => {
                let speed = if dist > p.preferred_dist {
                    (p.cruise_speed + self.model.follow_speed_gain * (dist - p.preferred_dist)).min(0.8 * p.burst_speed)
                } else {
                    p.cruise_speed * dist / p.preferred_dist
                };
                (towards_robot, speed, false)
            }
            FishMode::Calm => {
                let wander = Vec2::from_angle(self.pose.heading + jitter);
                let pull = if dist < self.model.attraction_range {
                    p.follow_tendency * (1.0 - self.fear) * ((dist - p.preferred_dist) / 20.0).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                // Fear turns into retreat only while the robot is heading at the fish.
                let looming = if world.robot_speed > LOOMING_MIN_SPEED {
                    world.robot.direction().dot(-towards_robot).max(0.0)
                } else {
                    0.0
                };
                let push = self.model.fear_avoidance
                    * self.fear
                    * looming
                    * ((self.model.fear_range - dist) / self.model.fear_range).clamp(0.0, 1.0);
                let social = (pull - push).clamp(-1.0, 1.0);
                let blended = wander * (1.0 - social.abs()) + towards_robot * social;
                (blended.normalized().unwrap_or(wander), p.cruise_speed, false)
            }
        };

        let heading = if instant {
            desired.angle()
        } else {
            let error = wrap_angle(desired.angle() - self.pose.heading);
            let max_turn = self.model.turn_rate * dt;
            self.pose.heading + error.clamp(-max_turn, max_turn)
        };
        let speed = speed.clamp(0.0, p.burst_speed);
        let raw = Vec2::from_angle(heading) * speed;
        // A fleeing fish cornered against a wall slides along it rather than
        // bouncing back towards the robot.
        let velocity = if instant {
            slide_velocity(self.pose.position, raw, dt, arena)
        } else {
            reflect_velocity(self.pose.position, raw, dt, arena)
        };
        let position = advance_point(self.pose.position, velocity, dt, arena);
        self.speed = position.distance(self.pose.position) / dt;
        let heading = if velocity.norm() > 0.0 {
            velocity.angle()
        } else {
            heading
        };
        self.pose = Pose::new(position, heading);
    }

    pub fn is_free(&self) -> bool {
        self.free
    }
}

/// Deterministic test fish.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "script", rename_all = "lowercase", deny_unknown_fields)]
pub enum FishScript {
    Stationary {
        x: f64,
        y: f64,
    },
    /// Alternates between the anchor and a point `amplitude` cm further from the robot.
    Flinch {
        x: f64,
        y: f64,
        amplitude: f64,
    },
    /// Cycles through waypoints at constant speed.
    Waypoints {
        points: Vec<Vec2>,
        speed: f64,
    },
    Linear {
        x: f64,
        y: f64,
        vx: f64,
        vy: f64,
    },
}

#[derive(Debug, Clone)]
pub struct ScriptedFish {
    pub script: FishScript,
    pub pose: Pose,
    anchor: Vec2,
    step: u64,
    waypoint: usize,
}

impl ScriptedFish {
    pub fn new(script: FishScript) -> Result<Self> {
        let start = match &script {
            FishScript::Stationary { x, y } | FishScript::Flinch { x, y, .. } | FishScript::Linear { x, y, .. } => {
                Vec2::try_new(*x, *y)?
            }
            FishScript::Waypoints { points, speed } => {
                if points.is_empty() || !(*speed > 0.0) {
                    return Err(Error::InvalidParameter(
                        "waypoint script needs points and a positive speed".into(),
                    ));
                }
                points[0]
            }
        };
        Ok(Self {
            script,
            pose: Pose::new(start, 0.0),
            anchor: start,
            step: 0,
            waypoint: 0,
        })
    }

    pub fn step(&mut self, world: &FishWorld, arena: &ArenaSpec, dt: f64) {
        let prev = self.pose.position;
        let next = match &self.script {
            FishScript::Stationary { .. } => prev,
            FishScript::Flinch { amplitude, .. } => {
                if self.step.is_multiple_of(2) {
                    let away = (self.anchor - world.robot.position)
                        .normalized()
                        .unwrap_or(Vec2::new(1.0, 0.0));
                    arena.clamp(self.anchor + away * *amplitude)
                } else {
                    self.anchor
                }
            }
            FishScript::Waypoints { points, speed } => {
                let mut target = points[self.waypoint % points.len()];
                if prev.distance(target) < 1e-9 {
                    self.waypoint = (self.waypoint + 1) % points.len();
                    target = points[self.waypoint];
                }
                let offset = target - prev;
                let travel = (speed * dt).min(offset.norm());
                arena.clamp(prev + offset.normalized().unwrap_or(Vec2::ZERO) * travel)
            }
            FishScript::Linear { vx, vy, .. } => advance_point(prev, Vec2::new(*vx, *vy), dt, arena),
        };
        let heading = if next != prev {
            (next - prev).angle()
        } else {
            self.pose.heading
        };
        self.pose = Pose::new(next, heading);
        self.step += 1;
    }
}

/// Recorded positions at the simulation rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayTrack {
    pub positions: Vec<Vec2>,
}

impl ReplayTrack {
    /// Linear resampling of a track sampled at `source_rate` onto `target_rate`.
    /// When the source rate is an integer multiple of the target this is plain decimation.
    pub fn resample(samples: &[Vec2], source_rate: f64, target_rate: f64) -> Result<Self> {
        if !(source_rate > 0.0 && target_rate > 0.0) {
            return Err(Error::InvalidParameter("rates must be positive".into()));
        }
        if samples.is_empty() {
            return Ok(Self { positions: Vec::new() });
        }
        if source_rate == target_rate {
            return Ok(Self {
                positions: samples.to_vec(),
            });
        }
        let ratio = source_rate / target_rate;
        let last = (samples.len() - 1) as f64;
        let count = (last / ratio).floor() as usize + 1;
        let positions = (0..count)
            .map(|k| {
                let s = k as f64 * ratio;
                let i = s.floor() as usize;
                let frac = s - i as f64;
                if frac < 1e-9 || i + 1 >= samples.len() {
                    samples[i.min(samples.len() - 1)]
                } else {
                    samples[i] + (samples[i + 1] - samples[i]) * frac
                }
            })
            .collect();
        Ok(Self { positions })
    }
}

/// Pose at `index`, heading taken from the neighbouring samples.
pub fn replay_fish_step(track: &ReplayTrack, index: usize) -> Result<Pose> {
    let p = track.positions.get(index).copied().ok_or(Error::TrialEnd(index))?;
    let heading = if index > 0 {
        (p - track.positions[index - 1]).angle()
    } else if let Some(next) = track.positions.get(1) {
        (*next - p).angle()
    } else {
        0.0
    };
    Ok(Pose::new(p, heading))
}

#[derive(Debug, Clone)]
pub struct ReplayFish {
    pub track: ReplayTrack,
    pub pose: Pose,
    index: usize,
}

impl ReplayFish {
    pub fn new(track: ReplayTrack) -> Result<Self> {
        let pose = replay_fish_step(&track, 0)?;
        Ok(Self { track, pose, index: 0 })
    }

    pub fn step(&mut self) -> Result<()> {
        self.index += 1;
        self.pose = replay_fish_step(&self.track, self.index)?;
        Ok(())
    }
}

/// Fish model selection as stored in a trial config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FishSpec {
    /// Personality drawn from the population config, or given explicitly.
    Guppy {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        personality: Option<GuppyPersonality>,
    },
    Scripted {
        script: FishScript,
    },
    Replay {
        path: PathBuf,
        source_rate: f64,
    },
}

impl Default for FishSpec {
    fn default() -> Self {
        FishSpec::Guppy { personality: None }
    }
}

#[derive(Debug, Clone)]
pub enum Fish {
    Guppy(Box<GuppyFish>),
    Scripted(ScriptedFish),
    Replay(ReplayFish),
}

impl Fish {
    pub fn pose(&self) -> Pose {
        match self {
            Fish::Guppy(g) => g.pose,
            Fish::Scripted(s) => s.pose,
            Fish::Replay(r) => r.pose,
        }
    }

    /// Advances one tick; a replay fish signals the end of its track with [`Error::TrialEnd`].
    pub fn step(&mut self, world: &FishWorld, arena: &ArenaSpec, dt: f64) -> Result<()> {
        match self {
            Fish::Guppy(g) => {
                g.step(world, arena, dt);
                Ok(())
            }
            Fish::Scripted(s) => {
                s.step(world, arena, dt);
                Ok(())
            }
            Fish::Replay(r) => r.step(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn population() -> PopulationConfig {
        PopulationConfig::canonical()
    }

    fn personality() -> GuppyPersonality {
        GuppyPersonality {
            boldness: 0.5,
            startle_gain: 0.45,
            preferred_dist: 8.0,
            cruise_speed: 6.0,
            burst_speed: 30.0,
            social_range: 30.0,
            follow_tendency: 0.8,
            exit_latency: 5.0,
        }
    }

    fn far_world() -> FishWorld {
        FishWorld {
            robot: Pose::new(Vec2::new(500.0, 500.0), 0.0),
            robot_speed: 0.0,
            phase: Phase::Approach,
            released: true,
        }
    }

    #[test]
    fn default_population_is_valid() {
        let p = population();
        assert_eq!(p.version, 1);
        assert_eq!(p.hash(), PopulationConfig::canonical().hash());
    }

    #[test]
    fn head_on_fast_approach_startles() {
        let strong = GuppyPersonality {
            startle_gain: 1.0,
            ..personality()
        };
        let stim = approach_stimulus(Pose::new(Vec2::new(20.0, 50.0), 0.0), 30.0, Vec2::new(40.0, 50.0));
        assert_abs_diff_eq!(stim, 30.0, epsilon = 1e-12);
        let p = startle_probability(&strong, &population().model, 0.0, stim);
        assert!(p > 0.9, "{p}");
    }

    #[test]
    fn zero_gain_never_startles() {
        let calm = GuppyPersonality {
            boldness: 1.0,
            startle_gain: 0.0,
            ..personality()
        };
        for stim in [0.0, 5.0, 30.0, 1e6] {
            assert_eq!(startle_probability(&calm, &population().model, 1.0, stim), 0.0);
        }
    }

    #[test]
    fn startle_risk_grows_with_speed_and_directness() {
        let m = population().model;
        let fish = Vec2::new(40.0, 50.0);
        let mut last = 0.0;
        for speed in [5.0, 15.0, 30.0] {
            let p = startle_probability(
                &personality(),
                &m,
                0.0,
                approach_stimulus(Pose::new(Vec2::new(20.0, 50.0), 0.0), speed, fish),
            );
            assert!(p > last);
            last = p;
        }
        let oblique = approach_stimulus(Pose::new(Vec2::new(20.0, 50.0), 0.8), 30.0, fish);
        assert!(oblique < 30.0);
        let away = approach_stimulus(Pose::new(Vec2::new(20.0, 50.0), std::f64::consts::PI), 30.0, fish);
        assert_eq!(away, 0.0);
    }

    #[test]
    fn lone_fish_cruises() {
        let p = personality();
        let mut fish = GuppyFish::free_at(
            Pose::new(Vec2::new(50.0, 50.0), 0.0),
            p,
            population().model,
            stream(1, Stream::Fish),
        );
        let mut path = 0.0;
        let a = ArenaSpec::default();
        for _ in 0..250 {
            let before = fish.pose.position;
            fish.step(&far_world(), &a, 0.04);
            path += fish.pose.position.distance(before);
        }
        // ten seconds of cruising, allowing for speed lost at walls
        assert!(
            (path - p.cruise_speed * 10.0).abs() < 0.1 * p.cruise_speed * 10.0,
            "{path}"
        );
        assert_eq!(fish.startles, 0);
    }

    #[test]
    fn fish_leaves_box_after_latency() {
        let a = ArenaSpec::default();
        let mut fish = GuppyFish::new(personality(), population().model, &a, stream(2, Stream::Fish));
        let world = FishWorld {
            released: false,
            phase: Phase::Milling,
            robot: Pose::new(Vec2::new(60.0, 34.0), 0.0),
            robot_speed: 8.0,
        };
        for _ in 0..(5.0 / 0.04) as usize - 1 {
            fish.step(&world, &a, 0.04);
            assert!(a.in_startbox(fish.pose.position));
        }
        for _ in 0..200 {
            fish.step(&world, &a, 0.04);
        }
        assert!(fish.is_free());
        assert!(a.is_released(fish.pose.position));
    }

    #[test]
    fn degenerate_population_gives_identical_personalities() {
        let point = |v| Distribution::Point { value: v };
        let mut pop = population();
        pop.personality = PersonalityDistributions {
            boldness: point(0.3),
            startle_gain: point(0.4),
            preferred_dist: point(8.0),
            cruise_speed: point(5.0),
            burst_speed: point(30.0),
            social_range: point(30.0),
            follow_tendency: point(0.7),
            exit_latency: point(10.0),
        };
        pop.validate().unwrap();
        let mut rng = stream(3, Stream::Personality);
        let a = sample_personality(&mut rng, &pop);
        let b = sample_personality(&mut rng, &pop);
        assert_eq!(a, b);
    }

    #[test]
    fn personality_draws_are_seeded() {
        let a = sample_personality(&mut stream(11, Stream::Personality), &population());
        let b = sample_personality(&mut stream(11, Stream::Personality), &population());
        assert_eq!(a, b);
        a.validate().unwrap();
    }

    #[test]
    fn boldness_mean_is_one_half() {
        let mut config = population();
        config.personality.boldness = Distribution::Uniform { low: 0.0, high: 1.0 };
        let mut rng = stream(5, Stream::Personality);
        let mean = (0..1000)
            .map(|_| sample_personality(&mut rng, &config).boldness)
            .sum::<f64>()
            / 1000.0;
        assert!((mean - 0.5).abs() < 0.05, "{mean}");
    }

    #[test]
    fn invalid_population_rejected() {
        let mut pop = population();
        pop.personality.burst_speed = Distribution::Uniform { low: 30.0, high: 45.0 };
        assert!(pop.validate().is_err());
        let mut pop = population();
        pop.personality.cruise_speed = Distribution::Uniform { low: 4.0, high: 30.0 };
        assert!(pop.validate().is_err());
    }

    #[test]
    fn replay_examples() {
        let samples: Vec<Vec2> = (0..10).map(|i| Vec2::new(i as f64, 0.0)).collect();
        let track = ReplayTrack::resample(&samples, 25.0, 25.0).unwrap();
        assert_eq!(replay_fish_step(&track, 0).unwrap().position, samples[0]);
        assert!(matches!(replay_fish_step(&track, 10), Err(Error::TrialEnd(10))));
        let half = ReplayTrack::resample(&samples, 50.0, 25.0).unwrap();
        let expected: Vec<Vec2> = samples.iter().step_by(2).copied().collect();
        assert_eq!(half.positions, expected);
    }

    #[test]
    fn replay_is_bit_exact_at_native_rate() {
        let samples: Vec<Vec2> = (0..50)
            .map(|i| Vec2::new((i as f64 * 0.37).sin() * 40.0 + 50.0, 0.1 * i as f64))
            .collect();
        let track = ReplayTrack::resample(&samples, 25.0, 25.0).unwrap();
        let mut fish = ReplayFish::new(track).unwrap();
        let mut seen = vec![fish.pose.position];
        while fish.step().is_ok() {
            seen.push(fish.pose.position);
        }
        assert_eq!(seen, samples);
    }

    #[test]
    fn flinch_alternates() {
        let a = ArenaSpec::default();
        let mut fish = ScriptedFish::new(FishScript::Flinch {
            x: 50.0,
            y: 50.0,
            amplitude: 1.0,
        })
        .unwrap();
        let world = FishWorld {
            robot: Pose::new(Vec2::new(40.0, 50.0), 0.0),
            ..far_world()
        };
        fish.step(&world, &a, 0.04);
        assert_eq!(fish.pose.position, Vec2::new(51.0, 50.0));
        fish.step(&world, &a, 0.04);
        assert_eq!(fish.pose.position, Vec2::new(50.0, 50.0));
    }

    proptest! {
        #[test]
        fn guppy_stays_in_bounds_and_under_burst_speed(seed in any::<u64>(), rx in 0.0..100.0f64, ry in 0.0..100.0f64, rs in 0.0..30.0f64) {
            let a = ArenaSpec::default();
            let p = sample_personality(&mut stream(seed, Stream::Personality), &population());
            let mut fish = GuppyFish::free_at(Pose::new(Vec2::new(50.0, 50.0), 0.0), p, population().model, stream(seed, Stream::Fish));
            let world = FishWorld {
                robot: Pose::new(Vec2::new(rx, ry), 0.3),
                robot_speed: rs,
                phase: Phase::Lead,
                released: true,
            };
            for _ in 0..300 {
                fish.step(&world, &a, 0.04);
                prop_assert!(a.contains(fish.pose.position));
                prop_assert!(fish.speed <= p.burst_speed + 1e-9);
            }
        }
    }
}
