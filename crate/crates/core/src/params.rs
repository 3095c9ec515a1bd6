//! Arena geometry, time base and the canonical parameter set.
//!
//! Every default lives in `params/default.json`, which is compiled into the
//! crate and returned by [`Params::canonical`]. A user-supplied file may
//! override any subset of fields; missing fields keep their defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::Vec2;

const CANONICAL_PARAMS: &str = include_str!("../params/default.json");

/// Square arena with a start box centered on the south wall, door facing north.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArenaSpec {
    pub side: f64,
    pub corner_inset: f64,
    pub startbox_side: f64,
    pub startbox_door_width: f64,
    /// Distance past the door plane at which the fish counts as released.
    pub release_margin: f64,
}

impl Default for ArenaSpec {
    fn default() -> Self {
        Self {
            side: 100.0,
            corner_inset: 10.0,
            startbox_side: 19.0,
            startbox_door_width: 3.0,
            release_margin: 3.0,
        }
    }
}

impl ArenaSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.side > 0.0) {
            return Err(Error::InvalidParameter("arena side must be positive".into()));
        }
        if !(self.corner_inset > 0.0 && self.corner_inset < self.side / 2.0) {
            return Err(Error::InvalidParameter(format!(
                "corner_inset {} must lie in (0, side/2)",
                self.corner_inset
            )));
        }
        if !(self.startbox_side > 0.0 && self.startbox_side + self.release_margin < self.side) {
            return Err(Error::InvalidParameter("start box does not fit the arena".into()));
        }
        if !(self.startbox_door_width > 0.0 && self.startbox_door_width <= self.startbox_side) {
            return Err(Error::InvalidParameter("door wider than the start box".into()));
        }
        if !(self.release_margin >= 0.0) {
            return Err(Error::InvalidParameter("release_margin must be non-negative".into()));
        }
        Ok(())
    }

    pub fn contains(&self, p: Vec2) -> bool {
        (0.0..=self.side).contains(&p.x) && (0.0..=self.side).contains(&p.y)
    }

    pub fn clamp(&self, p: Vec2) -> Vec2 {
        Vec2::new(p.x.clamp(0.0, self.side), p.y.clamp(0.0, self.side))
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(self.side / 2.0, self.side / 2.0)
    }

    /// Lead waypoints in clockwise order (y axis pointing north):
    /// south-west, north-west, north-east, south-east.
    pub fn corners(&self) -> [Vec2; 4] {
        let lo = self.corner_inset;
        let hi = self.side - self.corner_inset;
        [
            Vec2::new(lo, lo),
            Vec2::new(lo, hi),
            Vec2::new(hi, hi),
            Vec2::new(hi, lo),
        ]
    }

    /// Start box interior as `(min, max)` corners.
    pub fn startbox_bounds(&self) -> (Vec2, Vec2) {
        let half = self.startbox_side / 2.0;
        let cx = self.side / 2.0;
        (Vec2::new(cx - half, 0.0), Vec2::new(cx + half, self.startbox_side))
    }

    pub fn startbox_center(&self) -> Vec2 {
        let (lo, hi) = self.startbox_bounds();
        (lo + hi) * 0.5
    }

    /// Midpoint of the door opening on the start box's north face.
    pub fn door(&self) -> Vec2 {
        Vec2::new(self.side / 2.0, self.startbox_side)
    }

    /// Unit vector pointing out of the door into the arena.
    pub fn door_normal(&self) -> Vec2 {
        Vec2::new(0.0, 1.0)
    }

    pub fn in_startbox(&self, p: Vec2) -> bool {
        let (lo, hi) = self.startbox_bounds();
        p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y
    }

    /// True once the fish is `release_margin` beyond the door plane.
    pub fn is_released(&self, fish: Vec2) -> bool {
        (fish - self.door()).dot(self.door_normal()) >= self.release_margin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeBase {
    pub rate: f64,
}

impl Default for TimeBase {
    fn default() -> Self {
        Self { rate: 25.0 }
    }
}

impl TimeBase {
    pub fn dt(&self) -> f64 {
        1.0 / self.rate
    }

    pub fn validate(&self) -> Result<()> {
        if self.rate > 0.0 && self.rate.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("rate {} must be positive", self.rate)))
        }
    }

    /// Number of whole steps covering `seconds`.
    pub fn steps(&self, seconds: f64) -> usize {
        (seconds * self.rate).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerParams {
    /// Lower clip bound for approach distances, cm/s.
    pub v_s: f64,
    /// Upper clip bound for approach distances, cm/s.
    pub v_p: f64,
    /// Interaction zone radius, cm.
    pub d_i: f64,
    pub beta: f64,
    pub s_e: f64,
    /// Avoidance-score baseline.
    pub b_e: f64,
    pub eta: f64,
    pub d_comf: f64,
    pub d_close: f64,
    pub comfort_dwell: f64,
    pub lead_follow_dist: f64,
    pub lead_tolerance: f64,
    pub lead_burst: f64,
    pub approach_offset: f64,
    pub base_speed_s_c: f64,
    pub speed_unit: f64,
    pub max_speed: f64,
    pub lead_speed_factor: f64,
    pub milling_diameter: f64,
    pub milling_speed: f64,
    pub carefulness_init: f64,
    /// Distance of the milling circle center in front of the start box door, cm.
    pub milling_center_offset: f64,
    /// Robot counts as having reached a lead corner within this radius, cm.
    pub corner_arrival_radius: f64,
    /// A lead burst target counts as reached within this radius, cm.
    pub burst_arrival_radius: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            v_s: 2.5,
            v_p: 10.0,
            d_i: 56.0,
            beta: 0.0025,
            s_e: 8.0,
            b_e: 0.5,
            eta: 0.075,
            d_comf: 12.0,
            d_close: 6.0,
            comfort_dwell: 2.0,
            lead_follow_dist: 28.0,
            lead_tolerance: 1.0,
            lead_burst: 15.0,
            approach_offset: 6.0,
            base_speed_s_c: 0.2,
            speed_unit: 25.0,
            max_speed: 30.0,
            lead_speed_factor: 0.8717,
            milling_diameter: 20.0,
            milling_speed: 8.0,
            carefulness_init: 0.5,
            milling_center_offset: 15.0,
            corner_arrival_radius: 5.0,
            burst_arrival_radius: 2.0,
        }
    }
}

impl ControllerParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if !(self.v_s < self.v_p) {
            return bad("v_s must be below v_p");
        }
        let distances = [
            self.d_i,
            self.d_comf,
            self.d_close,
            self.lead_follow_dist,
            self.lead_burst,
            self.approach_offset,
            self.milling_diameter,
            self.corner_arrival_radius,
            self.burst_arrival_radius,
        ];
        if distances.iter().any(|d| !(*d > 0.0)) {
            return bad("all distances must be positive");
        }
        if !(self.d_close < self.d_comf) {
            return bad("d_close must be below d_comf");
        }
        if !(0.0..=1.0).contains(&self.b_e) {
            return bad("b_e must lie in [0, 1]");
        }
        if !(self.beta > 0.0 && self.beta <= 1.0 && self.eta > 0.0 && self.eta <= 1.0) {
            return bad("smoothing factors must lie in (0, 1]");
        }
        if !(self.speed_unit > 0.0 && self.max_speed > 0.0 && self.milling_speed > 0.0) {
            return bad("speeds must be positive");
        }
        if ((self.speed_unit * (1.0 + self.base_speed_s_c)) - self.max_speed).abs() > 1e-9 {
            return bad("speed_unit * (1 + base_speed_s_c) must equal max_speed");
        }
        if !(0.0..=1.0).contains(&self.carefulness_init) {
            return bad("carefulness_init must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FollowParams {
    pub beta_o: f64,
    pub s_o: f64,
    pub threshold: f64,
    pub min_len_steps: usize,
    pub max_gap_steps: usize,
    pub follow_init: f64,
}

impl Default for FollowParams {
    fn default() -> Self {
        Self {
            beta_o: 0.005,
            s_o: 2.0,
            threshold: 0.4,
            min_len_steps: 200,
            max_gap_steps: 200,
            follow_init: 0.5,
        }
    }
}

impl FollowParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidParameter("threshold must lie in (0, 1)".into()));
        }
        if self.min_len_steps == 0 || self.max_gap_steps == 0 {
            return Err(Error::InvalidParameter(
                "min_len_steps and max_gap_steps must be positive".into(),
            ));
        }
        if !(self.beta_o > 0.0 && self.beta_o <= 1.0) {
            return Err(Error::InvalidParameter("beta_o must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

pub const CAREFULNESS_BINS: usize = 10;

/// Ten-bin distribution over carefulness values: `[0, 0.1]`, `(0.1, 0.2]`, ... `(0.9, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution", into = "RawDistribution")]
pub struct ReferenceDistribution {
    frequencies: [f64; CAREFULNESS_BINS],
}

#[derive(Serialize, Deserialize)]
struct RawDistribution {
    frequencies: Vec<f64>,
}

impl TryFrom<RawDistribution> for ReferenceDistribution {
    type Error = Error;
    fn try_from(raw: RawDistribution) -> Result<Self> {
        let arr: [f64; CAREFULNESS_BINS] = raw
            .frequencies
            .try_into()
            .map_err(|v: Vec<f64>| Error::InvalidParameter(format!("expected 10 frequencies, got {}", v.len())))?;
        Self::new(arr)
    }
}

impl From<ReferenceDistribution> for RawDistribution {
    fn from(d: ReferenceDistribution) -> Self {
        RawDistribution {
            frequencies: d.frequencies.to_vec(),
        }
    }
}

impl Default for ReferenceDistribution {
    fn default() -> Self {
        Self::pretrial_reference()
    }
}

impl ReferenceDistribution {
    pub fn new(frequencies: [f64; CAREFULNESS_BINS]) -> Result<Self> {
        if frequencies.iter().any(|f| !(*f >= 0.0) || !f.is_finite()) {
            return Err(Error::InvalidParameter("frequencies must be non-negative".into()));
        }
        let total: f64 = frequencies.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "frequencies must sum to 1, got {total}"
            )));
        }
        Ok(Self { frequencies })
    }

    /// Carefulness histogram pooled from competent-mode pretrials with live fish.
    pub fn pretrial_reference() -> Self {
        Self {
            frequencies: [
                0.112739, 0.031610, 0.034126, 0.042342, 0.069718, 0.080316, 0.065151, 0.108997, 0.126346, 0.328655,
            ],
        }
    }

    /// Normalized histogram of `values` weighted by `weights`.
    pub fn from_weighted<I>(samples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut mass = [0.0; CAREFULNESS_BINS];
        for (value, weight) in samples {
            mass[Self::bin_index(value)] += weight;
        }
        let total: f64 = mass.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidInput("histogram of no samples".into()));
        }
        for m in &mut mass {
            *m /= total;
        }
        // renormalize once more so the sum is 1 to the last ulp we can get
        let total: f64 = mass.iter().sum();
        for m in &mut mass {
            *m /= total;
        }
        Self::new(mass)
    }

    pub fn from_values(values: &[f64]) -> Result<Self> {
        Self::from_weighted(values.iter().map(|v| (*v, 1.0)))
    }

    pub fn frequencies(&self) -> &[f64; CAREFULNESS_BINS] {
        &self.frequencies
    }

    /// Bin holding `a`; bins are closed on the right, the first also on the left.
    pub fn bin_index(a: f64) -> usize {
        if a <= 0.1 {
            0
        } else {
            ((a * 10.0).ceil() as usize).saturating_sub(1).min(CAREFULNESS_BINS - 1)
        }
    }

    pub fn bin_center(index: usize) -> f64 {
        0.05 + 0.1 * index as f64
    }

    pub fn mean(&self) -> f64 {
        self.frequencies
            .iter()
            .enumerate()
            .map(|(i, f)| Self::bin_center(i) * f)
            .sum()
    }

    pub fn total_variation(&self, other: &ReferenceDistribution) -> f64 {
        0.5 * self
            .frequencies
            .iter()
            .zip(other.frequencies.iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// The full parameter set as stored in a params file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub controller: ControllerParams,
    pub follow: FollowParams,
    pub arena: ArenaSpec,
    pub time: TimeBase,
    pub reference_distribution: ReferenceDistribution,
}

impl Params {
    /// Parses the compiled-in canonical parameter file.
    pub fn canonical() -> Self {
        Self::from_json(CANONICAL_PARAMS).expect("canonical params file is valid")
    }

    pub fn canonical_json() -> &'static str {
        CANONICAL_PARAMS
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let params: Params = serde_json::from_str(text)?;
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.controller.validate()?;
        self.follow.validate()?;
        self.arena.validate()?;
        self.time.validate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }

    /// SHA-256 over the compact JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let compact = serde_json::to_vec(self).expect("params serialize");
        hex::encode(Sha256::digest(&compact))
    }
}
