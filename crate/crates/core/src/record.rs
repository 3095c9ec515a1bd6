//! Trial records: per-step rows plus a manifest, persisted as a trajectory
//! CSV with a JSON manifest next to it.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::Phase;
use crate::error::{Error, Result};
use crate::fish::GuppyPersonality;
use crate::geometry::Vec2;
use crate::sim::TrialConfig;

pub const CSV_HEADER: &str = "step,time_s,fish_x,fish_y,robot_x,robot_y,phase,carefulness,avoid_score,follow_score,robot_speed,fish_speed,approach_idx";

const COLUMNS: usize = 13;

/// Rounds to the six decimals the CSV carries, so records survive a round trip unchanged.
pub fn quantize(v: f64) -> f64 {
    let q = (v * 1e6).round() / 1e6;
    // keep the CSV free of "-0.000000"
    if q == 0.0 {
        0.0
    } else {
        q
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub step: usize,
    pub time_s: f64,
    pub fish_x: f64,
    pub fish_y: f64,
    pub robot_x: f64,
    pub robot_y: f64,
    pub phase: Phase,
    pub carefulness: f64,
    pub avoid_score: f64,
    pub follow_score: f64,
    pub robot_speed: f64,
    pub fish_speed: f64,
    pub approach_idx: usize,
}

impl TrialRow {
    pub fn quantized(self) -> Self {
        Self {
            time_s: quantize(self.time_s),
            fish_x: quantize(self.fish_x),
            fish_y: quantize(self.fish_y),
            robot_x: quantize(self.robot_x),
            robot_y: quantize(self.robot_y),
            carefulness: quantize(self.carefulness),
            avoid_score: quantize(self.avoid_score),
            follow_score: quantize(self.follow_score),
            robot_speed: quantize(self.robot_speed),
            fish_speed: quantize(self.fish_speed),
            ..self
        }
    }

    pub fn fish(&self) -> Vec2 {
        Vec2::new(self.fish_x, self.fish_y)
    }

    pub fn robot(&self) -> Vec2 {
        Vec2::new(self.robot_x, self.robot_y)
    }

    fn write_csv(&self, out: &mut String) {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            self.step,
            self.time_s,
            self.fish_x,
            self.fish_y,
            self.robot_x,
            self.robot_y,
            self.phase.code(),
            self.carefulness,
            self.avoid_score,
            self.follow_score,
            self.robot_speed,
            self.fish_speed,
            self.approach_idx
        );
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialManifest {
    pub artifact_version: String,
    pub seed: u64,
    pub param_hash: String,
    pub population_hash: String,
    pub rate: f64,
    pub config: TrialConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub personality: Option<GuppyPersonality>,
    /// First post-release row.
    pub release_step: Option<usize>,
    pub forced_release: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub manifest: TrialManifest,
    pub rows: Vec<TrialRow>,
}

impl TrialRecord {
    pub fn dt(&self) -> f64 {
        1.0 / self.manifest.rate
    }

    /// Rows after the controller left milling.
    pub fn active_rows(&self) -> &[TrialRow] {
        let start = self
            .rows
            .iter()
            .position(|r| r.phase != Phase::Milling)
            .unwrap_or(self.rows.len());
        &self.rows[start..]
    }

    pub fn phases(&self) -> Vec<Phase> {
        self.rows.iter().map(|r| r.phase).collect()
    }

    /// Number of entries into the approach phase.
    pub fn approach_count(&self) -> usize {
        self.rows
            .windows(2)
            .filter(|w| w[0].phase != Phase::Approach && w[1].phase == Phase::Approach)
            .count()
            + usize::from(self.rows.first().is_some_and(|r| r.phase == Phase::Approach))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.rows.len() * 96 + CSV_HEADER.len() + 1);
        out.push_str(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            row.write_csv(&mut out);
        }
        out
    }
}

/// Manifest path belonging to a trajectory CSV.
pub fn manifest_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes the trajectory CSV at `csv_path` and the manifest beside it.
pub fn write_record(record: &TrialRecord, csv_path: &Path) -> Result<()> {
    if let Some(parent) = csv_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::File::create(csv_path)?.write_all(record.to_csv().as_bytes())?;
    let mut manifest = serde_json::to_string_pretty(&record.manifest)?;
    manifest.push('\n');
    fs::write(manifest_path(csv_path), manifest)?;
    Ok(())
}

pub fn read_record(csv_path: &Path) -> Result<TrialRecord> {
    let mpath = manifest_path(csv_path);
    let text = fs::read_to_string(&mpath)?;
    let manifest: TrialManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: mpath.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let rows = parse_rows(&fs::read_to_string(csv_path)?, csv_path)?;
    Ok(TrialRecord { manifest, rows })
}

fn parse_rows(text: &str, path: &Path) -> Result<Vec<TrialRow>> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == CSV_HEADER => {}
        Some((_, header)) => return Err(err(1, format!("unexpected header {header:?}"))),
        None => return Err(err(1, "empty file".into())),
    }
    if !text.ends_with('\n') {
        let last = text.lines().count();
        return Err(err(
            last,
            format!("file truncated; last complete line is {}", last.saturating_sub(1)),
        ));
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != COLUMNS {
            return Err(err(
                lineno,
                format!(
                    "expected {COLUMNS} fields, found {}; last good line is {}",
                    fields.len(),
                    lineno - 1
                ),
            ));
        }
        let float = |k: usize| -> Result<f64> {
            fields[k]
                .parse::<f64>()
                .map_err(|e| err(lineno, format!("column {}: {e}", k + 1)))
        };
        let int = |k: usize| -> Result<usize> {
            fields[k]
                .parse::<usize>()
                .map_err(|e| err(lineno, format!("column {}: {e}", k + 1)))
        };
        let phase = Phase::from_code(fields[6]).ok_or_else(|| err(lineno, format!("unknown phase {:?}", fields[6])))?;
        let row = TrialRow {
            step: int(0)?,
            time_s: float(1)?,
            fish_x: float(2)?,
            fish_y: float(3)?,
            robot_x: float(4)?,
            robot_y: float(5)?,
            phase,
            carefulness: float(7)?,
            avoid_score: float(8)?,
            follow_score: float(9)?,
            robot_speed: float(10)?,
            fish_speed: float(11)?,
            approach_idx: int(12)?,
        };
        if let Some(prev) = rows.last() {
            let prev: &TrialRow = prev;
            if row.step <= prev.step {
                return Err(err(lineno, format!("step {} does not increase", row.step)));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// A two-agent track read from an arbitrary CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ForeignTrack {
    pub fish: Vec<Vec2>,
    pub robot: Vec<Vec2>,
    /// Lead mask when the file carries a `phase` column.
    pub lead: Option<Vec<bool>>,
    /// True when the input was resampled to the simulation rate.
    pub resampled: bool,
}

/// Reads any CSV with `fish_x,fish_y,robot_x,robot_y` columns (extra columns
/// are ignored). With `source_rate` set and different from `rate`, both
/// tracks are linearly resampled; the phase column is then dropped.
pub fn read_foreign_track(path: &Path, source_rate: Option<f64>, rate: f64) -> Result<ForeignTrack> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| err(1, e.to_string()))?;
    let headers = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let needed = ["fish_x", "fish_y", "robot_x", "robot_y"];
    let mut idx = [0usize; 4];
    for (slot, name) in idx.iter_mut().zip(needed) {
        *slot = col(name).ok_or_else(|| err(1, format!("missing column {name}")))?;
    }
    let phase_col = col("phase");

    let mut fish = Vec::new();
    let mut robot = Vec::new();
    let mut lead = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let value = |k: usize| -> Result<f64> {
            let raw = record.get(k).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| err(line, format!("bad number {raw:?}")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(err(line, format!("non-finite value {raw:?}")))
            }
        };
        fish.push(Vec2::new(value(idx[0])?, value(idx[1])?));
        robot.push(Vec2::new(value(idx[2])?, value(idx[3])?));
        if let Some(pc) = phase_col {
            lead.push(record.get(pc) == Some("L"));
        }
    }

    let resample = source_rate.filter(|s| (s - rate).abs() > 1e-12);
    match resample {
        Some(source) => {
            let fish = crate::fish::ReplayTrack::resample(&fish, source, rate)?.positions;
            let robot = crate::fish::ReplayTrack::resample(&robot, source, rate)?.positions;
            Ok(ForeignTrack {
                fish,
                robot,
                lead: None,
                resampled: true,
            })
        }
        None => Ok(ForeignTrack {
            fish,
            robot,
            lead: phase_col.map(|_| lead),
            resampled: false,
        }),
    }
}
