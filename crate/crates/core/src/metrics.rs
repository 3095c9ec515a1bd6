//! Behavioral measurements: approach distance, avoidance and follow events,
//! their exponentially smoothed scores, and follow-episode extraction.

use serde::{Deserialize, Serialize};

use crate::controller::Phase;
use crate::error::{Error, Result};
use crate::geometry::{clip_normalize, Vec2};
use crate::params::{ControllerParams, FollowParams};
use crate::record::TrialRecord;

/// Fish displacement projected onto the unit fish→robot vector, per second.
///
/// Positive values mean the fish moved toward where the robot was.
pub fn approach_distance(robot_prev: Vec2, fish_prev: Vec2, fish_cur: Vec2, dt: f64) -> Result<f64> {
    let towards_robot = (robot_prev - fish_prev)
        .normalized()
        .ok_or(Error::DegenerateGeometry("robot and fish share a position"))?;
    Ok((fish_cur - fish_prev).dot(towards_robot) / dt)
}

/// Avoidance event `e_t`: normalized magnitude of a negative approach distance.
pub fn avoidance_event(d_t: f64, params: &ControllerParams) -> f64 {
    if d_t < 0.0 {
        clip_normalize(-d_t, params.v_s, params.v_p).unwrap_or(0.0)
    } else {
        0.0
    }
}

/// Follow event `o_t`: normalized magnitude of a positive approach distance.
pub fn follow_event(d_t: f64, params: &ControllerParams) -> f64 {
    if d_t > 0.0 {
        clip_normalize(d_t, params.v_s, params.v_p).unwrap_or(0.0)
    } else {
        0.0
    }
}

pub fn update_avoidance_score(prev: f64, e_t: f64, in_zone: bool, params: &ControllerParams) -> f64 {
    let gate = if in_zone { 1.0 } else { 0.0 };
    (params.beta * gate * params.s_e * e_t + (1.0 - params.beta) * prev).clamp(0.0, 1.0)
}

pub fn update_follow_score(prev: f64, o_t: f64, in_zone: bool, params: &FollowParams) -> f64 {
    let gate = if in_zone { 1.0 } else { 0.0 };
    let correction = 1.0 + libm::exp(-o_t / 3.0);
    (params.beta_o * gate * params.s_o * correction * o_t + (1.0 - params.beta_o) * prev).clamp(0.0, 1.0)
}

/// Running avoidance score `ē_t` and follow score `ō_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreState {
    pub avoidance: f64,
    pub follow: f64,
}

impl ScoreState {
    pub fn new(follow_params: &FollowParams) -> Self {
        Self {
            avoidance: 0.5,
            follow: follow_params.follow_init,
        }
    }

    /// Feeds one approach distance into both scores.
    pub fn update(
        &mut self,
        d_t: f64,
        in_zone: bool,
        controller: &ControllerParams,
        follow: &FollowParams,
    ) -> (f64, f64) {
        let e_t = avoidance_event(d_t, controller);
        let o_t = follow_event(d_t, controller);
        self.avoidance = update_avoidance_score(self.avoidance, e_t, in_zone, controller);
        self.follow = update_follow_score(self.follow, o_t, in_zone, follow);
        (e_t, o_t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FollowEpisode {
    pub start_step: usize,
    /// Exclusive.
    pub end_step: usize,
    pub duration: f64,
}

impl FollowEpisode {
    pub fn len(&self) -> usize {
        self.end_step - self.start_step
    }

    pub fn is_empty(&self) -> bool {
        self.end_step == self.start_step
    }
}

/// Runs of `true` as half-open `(start, end)` intervals.
pub fn true_runs(mask: &[bool]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &on) in mask.iter().enumerate() {
        match (on, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, mask.len()));
    }
    runs
}

/// Follow episodes: steps in lead phase with the follow score above threshold,
/// gaps shorter than `max_gap_steps` bridged, then runs shorter than
/// `min_len_steps` dropped.
pub fn extract_follow_episodes(
    follow_series: &[f64],
    lead_mask: &[bool],
    params: &FollowParams,
    dt: f64,
) -> Result<Vec<FollowEpisode>> {
    if follow_series.len() != lead_mask.len() {
        return Err(Error::InvalidInput(format!(
            "follow series has {} samples but lead mask has {}",
            follow_series.len(),
            lead_mask.len()
        )));
    }
    if params.min_len_steps == 0 || params.max_gap_steps == 0 {
        return Err(Error::InvalidParameter("episode step limits must be positive".into()));
    }
    let mask: Vec<bool> = follow_series
        .iter()
        .zip(lead_mask)
        .map(|(f, lead)| *lead && *f > params.threshold)
        .collect();

    let mut merged: Vec<(usize, usize)> = Vec::new();
    for (start, end) in true_runs(&mask) {
        match merged.last_mut() {
            Some(last) if start - last.1 < params.max_gap_steps => last.1 = end,
            _ => merged.push((start, end)),
        }
    }
    Ok(merged
        .into_iter()
        .filter(|(s, e)| e - s >= params.min_len_steps)
        .map(|(start_step, end_step)| FollowEpisode {
            start_step,
            end_step,
            duration: (end_step - start_step) as f64 * dt,
        })
        .collect())
}

/// Per-trial outcome measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub mean_follow_s: f64,
    pub total_follow_s: f64,
    pub episode_count: usize,
    pub approach_count: usize,
    pub mean_avoidance: f64,
    pub mean_carefulness: f64,
    /// Averaged over approach-phase steps; 0 when the trial has none.
    pub mean_robot_speed: f64,
    pub mean_fish_speed: f64,
}

/// Summarizes the post-release part of a record.
pub fn trial_summary(record: &TrialRecord, params: &FollowParams) -> Result<TrialSummary> {
    let rows = record.active_rows();
    if rows.is_empty() {
        return Err(Error::InvalidInput("record has no post-release rows".into()));
    }
    let dt = record.dt();
    let follow: Vec<f64> = rows.iter().map(|r| r.follow_score).collect();
    let lead: Vec<bool> = rows.iter().map(|r| r.phase == Phase::Lead).collect();
    let episodes = extract_follow_episodes(&follow, &lead, params, dt)?;
    let total_follow_s: f64 = episodes.iter().map(|e| e.duration).sum();
    let mean_follow_s = if episodes.is_empty() {
        0.0
    } else {
        total_follow_s / episodes.len() as f64
    };

    let n = rows.len() as f64;
    let mean_avoidance = rows.iter().map(|r| r.avoid_score).sum::<f64>() / n;
    let mean_carefulness = rows.iter().map(|r| r.carefulness).sum::<f64>() / n;

    let approach: Vec<_> = rows.iter().filter(|r| r.phase == Phase::Approach).collect();
    let (mean_robot_speed, mean_fish_speed) = if approach.is_empty() {
        (0.0, 0.0)
    } else {
        let k = approach.len() as f64;
        (
            approach.iter().map(|r| r.robot_speed).sum::<f64>() / k,
            approach.iter().map(|r| r.fish_speed).sum::<f64>() / k,
        )
    };

    Ok(TrialSummary {
        mean_follow_s,
        total_follow_s,
        episode_count: episodes.len(),
        approach_count: record.approach_count(),
        mean_avoidance,
        mean_carefulness,
        mean_robot_speed,
        mean_fish_speed,
    })
}

/// Per-step measurements for an arbitrary two-agent track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackStep {
    pub distance: f64,
    pub d_t: f64,
    pub e_t: f64,
    pub o_t: f64,
    pub avoid_score: f64,
    pub follow_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackMetrics {
    pub dt: f64,
    /// One entry per sample; the first sample carries the initial scores.
    pub steps: Vec<TrackStep>,
    pub episodes: Vec<FollowEpisode>,
}

pub const TRACK_METRICS_HEADER: &str = "step,time_s,distance,d_t,e_t,o_t,avoid_score,follow_score,in_episode";
pub const EPISODES_HEADER: &str = "episode,start_step,end_step,start_s,duration_s";

impl TrackMetrics {
    pub fn to_csv(&self) -> String {
        let mut in_episode = vec![false; self.steps.len()];
        for e in &self.episodes {
            in_episode[e.start_step..e.end_step].iter_mut().for_each(|v| *v = true);
        }
        let mut out = String::from(TRACK_METRICS_HEADER);
        out.push('\n');
        for (i, s) in self.steps.iter().enumerate() {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
                i,
                i as f64 * self.dt,
                s.distance,
                s.d_t,
                s.e_t,
                s.o_t,
                s.avoid_score,
                s.follow_score,
                u8::from(in_episode[i])
            ));
        }
        out
    }

    pub fn episodes_csv(&self) -> String {
        let mut out = String::from(EPISODES_HEADER);
        out.push('\n');
        for (i, e) in self.episodes.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6}\n",
                i,
                e.start_step,
                e.end_step,
                e.start_step as f64 * self.dt,
                e.duration
            ));
        }
        out
    }
}

/// Recomputes scores and follow episodes from positions alone. Without a lead
/// mask every sample is eligible for an episode, which suits recordings of
/// two live fish.
pub fn track_metrics(
    fish: &[Vec2],
    robot: &[Vec2],
    lead: Option<&[bool]>,
    dt: f64,
    controller: &ControllerParams,
    follow: &FollowParams,
) -> Result<TrackMetrics> {
    if fish.len() != robot.len() {
        return Err(Error::InvalidInput(format!(
            "fish track has {} samples but robot track has {}",
            fish.len(),
            robot.len()
        )));
    }
    if fish.is_empty() {
        return Err(Error::InvalidInput("empty track".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter("dt must be positive".into()));
    }
    let mut scores = ScoreState::new(follow);
    let mut steps = Vec::with_capacity(fish.len());
    steps.push(TrackStep {
        distance: fish[0].distance(robot[0]),
        d_t: 0.0,
        e_t: 0.0,
        o_t: 0.0,
        avoid_score: scores.avoidance,
        follow_score: scores.follow,
    });
    for i in 1..fish.len() {
        let d_t = approach_distance(robot[i - 1], fish[i - 1], fish[i], dt).unwrap_or(0.0);
        let distance = fish[i].distance(robot[i]);
        let (e_t, o_t) = scores.update(d_t, distance <= controller.d_i, controller, follow);
        steps.push(TrackStep {
            distance,
            d_t,
            e_t,
            o_t,
            avoid_score: scores.avoidance,
            follow_score: scores.follow,
        });
    }
    let all_lead;
    let mask = match lead {
        Some(mask) => mask,
        None => {
            all_lead = vec![true; fish.len()];
            &all_lead
        }
    };
    let series: Vec<f64> = steps.iter().map(|s| s.follow_score).collect();
    let episodes = extract_follow_episodes(&series, mask, follow, dt)?;
    Ok(TrackMetrics { dt, steps, episodes })
}
