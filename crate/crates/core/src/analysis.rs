//! Plot-ready CSV series and a markdown report for an experiment dataset.
//!
//! Output files (all in one directory):
//!
//! | file | contents |
//! |---|---|
//! | `trial_summaries.csv` | one row per trial with every summary measure |
//! | `avoidance_over_time.csv` | mean avoidance score per 10 s bin and arm, ± 1 standard error |
//! | `follow_durations.csv` | mean and total follow duration per trial |
//! | `approach_efficiency.csv` | cumulative follow duration after each approach |
//! | `follow_vs_distance.csv` | mean follow score per 2 cm distance bin and arm |
//! | `episodes.csv` | every follow episode |
//! | `episode_start_times.csv` | episode counts per 60 s start-time bin and arm |
//! | `speed_vs_carefulness.csv` | mean approach speed of the robot per carefulness bin and arm |
//! | `accidental_competence.csv` | change in carefulness vs change in raw avoidance between approaches |
//! | `cumulative_projection.csv` | running sum of raw approach distance × dt per trial |
//! | `summary.md` | test results and regressions |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;

use crate::controller::Phase;
use crate::error::{Error, Result};
use crate::metrics::{approach_distance, avoidance_event, extract_follow_episodes, FollowEpisode, TrialSummary};
use crate::params::{Params, ReferenceDistribution, CAREFULNESS_BINS};
use crate::record::{read_record, TrialRecord};
use crate::sim::{Arm, ExperimentDataset, TrialEntry};
use crate::stats::{linear_regression, mann_whitney_u, mean, std_dev, Regression, TestResult};

pub const AVOIDANCE_BIN_S: f64 = 10.0;
pub const DISTANCE_BIN_CM: f64 = 2.0;
pub const DISTANCE_BINS: usize = 50;
pub const START_BIN_S: f64 = 60.0;

const ARMS: [Arm; 2] = [Arm::Competent, Arm::Control];

fn arm_label(arm: Arm) -> &'static str {
    match arm {
        Arm::Competent => "competent",
        Arm::Control => "control",
    }
}

/// Everything derived from one trajectory.
#[derive(Debug, Clone)]
pub struct TrialDerived {
    pub index: usize,
    pub arm: Arm,
    pub avoidance_bins: Vec<f64>,
    pub follow_by_distance: Vec<(f64, usize)>,
    pub episodes: Vec<FollowEpisode>,
    pub speed_by_carefulness: Vec<(f64, usize)>,
    /// `(approach index, follow seconds accumulated by the end of that cycle)`.
    pub approach_cumulative: Vec<(usize, f64)>,
    /// `(carefulness, mean raw avoidance event)` for each approach phase.
    pub approach_phases: Vec<(f64, f64)>,
    /// `(time_s, cumulative cm)`, one per second plus the final step.
    pub cumulative_projection: Vec<(f64, f64)>,
    pub dt: f64,
}

pub fn derive_trial(record: &TrialRecord, entry: &TrialEntry, params: &Params) -> Result<TrialDerived> {
    let rows = record.active_rows();
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!(
            "trial {} has no post-release rows",
            entry.index
        )));
    }
    let dt = record.dt();
    let t0 = rows[0].time_s;

    let n_bins = ((rows.len() as f64 * dt) / AVOIDANCE_BIN_S).ceil() as usize;
    let mut sums = vec![(0.0, 0usize); n_bins];
    for (i, r) in rows.iter().enumerate() {
        let b = ((i as f64 * dt) / AVOIDANCE_BIN_S).floor() as usize;
        let slot = &mut sums[b.min(n_bins - 1)];
        slot.0 += r.avoid_score;
        slot.1 += 1;
    }
    let avoidance_bins = sums.iter().map(|(s, n)| s / *n as f64).collect();

    let mut follow_by_distance = vec![(0.0, 0usize); DISTANCE_BINS];
    let mut speed_by_carefulness = vec![(0.0, 0usize); CAREFULNESS_BINS];
    for r in rows {
        let d = r.fish().distance(r.robot());
        let b = ((d / DISTANCE_BIN_CM) as usize).min(DISTANCE_BINS - 1);
        follow_by_distance[b].0 += r.follow_score;
        follow_by_distance[b].1 += 1;
        if r.phase == Phase::Approach {
            let c = &mut speed_by_carefulness[ReferenceDistribution::bin_index(r.carefulness)];
            c.0 += r.robot_speed;
            c.1 += 1;
        }
    }

    let follow: Vec<f64> = rows.iter().map(|r| r.follow_score).collect();
    let lead: Vec<bool> = rows.iter().map(|r| r.phase == Phase::Lead).collect();
    let episodes = extract_follow_episodes(&follow, &lead, &params.follow, dt)?;

    // follow time credited to the approach cycle in which each episode step falls
    let last_idx = rows.last().map(|r| r.approach_idx).unwrap_or(0);
    let mut per_cycle = vec![0.0; last_idx + 1];
    for e in &episodes {
        for r in &rows[e.start_step..e.end_step] {
            per_cycle[r.approach_idx] += dt;
        }
    }
    let mut acc = 0.0;
    let approach_cumulative = per_cycle
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, v)| {
            acc += v;
            (k, acc)
        })
        .collect();

    // raw avoidance events and projections from the full record so the first active step has a predecessor
    let all = &record.rows;
    let first_active = all.len() - rows.len();
    let mut raw_e = Vec::with_capacity(rows.len());
    let mut cumulative_projection = Vec::new();
    let mut cum = 0.0;
    let per_second = (1.0 / dt).round().max(1.0) as usize;
    for (k, i) in (first_active..all.len()).enumerate() {
        let d = if i == 0 {
            0.0
        } else {
            approach_distance(all[i - 1].robot(), all[i - 1].fish(), all[i].fish(), dt).unwrap_or(0.0)
        };
        let in_zone = all[i - usize::from(i > 0)]
            .fish()
            .distance(all[i - usize::from(i > 0)].robot())
            <= params.controller.d_i;
        raw_e.push(if in_zone {
            avoidance_event(d, &params.controller)
        } else {
            0.0
        });
        cum += d * dt;
        if (k + 1) % per_second == 0 || i + 1 == all.len() {
            cumulative_projection.push((all[i].time_s - t0 + dt, cum));
        }
    }

    let mut approach_phases = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        if rows[i].phase != Phase::Approach {
            i += 1;
            continue;
        }
        let start = i;
        while i < rows.len() && rows[i].phase == Phase::Approach {
            i += 1;
        }
        let e_mean = raw_e[start..i].iter().sum::<f64>() / (i - start) as f64;
        approach_phases.push((rows[start].carefulness, e_mean));
    }

    Ok(TrialDerived {
        index: entry.index,
        arm: entry.arm,
        avoidance_bins,
        follow_by_distance,
        episodes,
        speed_by_carefulness,
        approach_cumulative,
        approach_phases,
        cumulative_projection,
        dt,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisBundle {
    /// `(file name, contents)` in a fixed order.
    pub files: Vec<(String, String)>,
    pub warnings: Vec<String>,
    pub tests: Vec<(String, TestResult)>,
}

impl AnalysisBundle {
    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        self.files
            .iter()
            .map(|(name, content)| {
                let path = dir.join(name);
                fs::write(&path, content)?;
                Ok(path)
            })
            .collect()
    }
}

pub type Measure = fn(&TrialSummary) -> f64;

/// Measures compared between arms in the report.
pub const MEASURES: [(&str, Measure); 5] = [
    ("approach_count", |s| s.approach_count as f64),
    ("total_follow_s", |s| s.total_follow_s),
    ("mean_follow_s", |s| s.mean_follow_s),
    ("mean_avoidance", |s| s.mean_avoidance),
    ("mean_carefulness", |s| s.mean_carefulness),
];

/// Loads the dataset and its trajectories from `dir` and runs every analysis.
pub fn analyze_dir(dir: &Path, params: &Params) -> Result<AnalysisBundle> {
    let dataset = ExperimentDataset::load(dir)?;
    let derived: Vec<Result<Option<TrialDerived>>> = dataset
        .trials
        .par_iter()
        .map(|entry| {
            let Some(file) = &entry.file else {
                return Ok(None);
            };
            let record = read_record(&dir.join(file))?;
            derive_trial(&record, entry, params).map(Some)
        })
        .collect();
    let mut warnings = Vec::new();
    let mut trials = Vec::new();
    for (entry, d) in dataset.trials.iter().zip(derived) {
        match d? {
            Some(t) => trials.push(t),
            None => warnings.push(format!(
                "trial {} has no trajectory file; skipped in series",
                entry.index
            )),
        }
    }
    Ok(analysis_suite(&dataset, &trials, warnings))
}

fn csv_f(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        String::new()
    }
}

pub fn analysis_suite(
    dataset: &ExperimentDataset,
    trials: &[TrialDerived],
    mut warnings: Vec<String>,
) -> AnalysisBundle {
    let mut files = Vec::new();
    for arm in ARMS {
        if dataset.arm(arm).next().is_none() {
            let w = format!("arm {} has no trials; comparisons skipped", arm_label(arm));
            warn!("{w}");
            warnings.push(w);
        }
    }

    // trial summaries
    let mut out = String::from(
        "index,arm,mode,seed,approach_count,episode_count,mean_follow_s,total_follow_s,mean_avoidance,mean_carefulness,mean_robot_speed,mean_fish_speed\n",
    );
    for t in &dataset.trials {
        let s = &t.summary;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            t.index,
            arm_label(t.arm),
            t.mode.label(),
            t.seed,
            s.approach_count,
            s.episode_count,
            csv_f(s.mean_follow_s),
            csv_f(s.total_follow_s),
            csv_f(s.mean_avoidance),
            csv_f(s.mean_carefulness),
            csv_f(s.mean_robot_speed),
            csv_f(s.mean_fish_speed)
        );
    }
    files.push(("trial_summaries.csv".to_string(), out));

    // avoidance over time
    let mut out = String::from("arm,time_s,mean,se,lower,upper,n\n");
    for arm in ARMS {
        let arm_trials: Vec<&TrialDerived> = trials.iter().filter(|t| t.arm == arm).collect();
        let bins = arm_trials.iter().map(|t| t.avoidance_bins.len()).max().unwrap_or(0);
        for b in 0..bins {
            let vals: Vec<f64> = arm_trials
                .iter()
                .filter_map(|t| t.avoidance_bins.get(b).copied())
                .collect();
            let m = mean(&vals);
            let se = if vals.len() > 1 {
                std_dev(&vals) / (vals.len() as f64).sqrt()
            } else {
                0.0
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                arm_label(arm),
                csv_f(b as f64 * AVOIDANCE_BIN_S),
                csv_f(m),
                csv_f(se),
                csv_f(m - se),
                csv_f(m + se),
                vals.len()
            );
        }
    }
    files.push(("avoidance_over_time.csv".to_string(), out));

    // follow durations
    let mut out = String::from("index,arm,episode_count,mean_follow_s,total_follow_s\n");
    for t in &dataset.trials {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            t.index,
            arm_label(t.arm),
            t.summary.episode_count,
            csv_f(t.summary.mean_follow_s),
            csv_f(t.summary.total_follow_s)
        );
    }
    files.push(("follow_durations.csv".to_string(), out));

    // efficiency
    let mut out = String::from("index,arm,approach,cumulative_follow_s\n");
    for t in trials {
        for (k, v) in &t.approach_cumulative {
            let _ = writeln!(out, "{},{},{},{}", t.index, arm_label(t.arm), k, csv_f(*v));
        }
    }
    files.push(("approach_efficiency.csv".to_string(), out));

    // follow vs distance
    let mut out = String::from("arm,distance_lo_cm,distance_hi_cm,mean_follow,samples\n");
    for arm in ARMS {
        let mut acc = vec![(0.0, 0usize); DISTANCE_BINS];
        for t in trials.iter().filter(|t| t.arm == arm) {
            for (a, b) in acc.iter_mut().zip(&t.follow_by_distance) {
                a.0 += b.0;
                a.1 += b.1;
            }
        }
        for (b, (sum, n)) in acc.iter().enumerate() {
            let m = if *n > 0 { sum / *n as f64 } else { f64::NAN };
            let lo = b as f64 * DISTANCE_BIN_CM;
            let hi = if b + 1 == DISTANCE_BINS {
                f64::INFINITY
            } else {
                lo + DISTANCE_BIN_CM
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                arm_label(arm),
                csv_f(lo),
                if hi.is_finite() { csv_f(hi) } else { "inf".into() },
                csv_f(m),
                n
            );
        }
    }
    files.push(("follow_vs_distance.csv".to_string(), out));

    // episodes and their start times
    let mut out = String::from("index,arm,start_s,end_s,duration_s\n");
    let mut start_bins: Vec<[usize; 2]> = Vec::new();
    for t in trials {
        for e in &t.episodes {
            let start_s = e.start_step as f64 * t.dt;
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                t.index,
                arm_label(t.arm),
                csv_f(start_s),
                csv_f(e.end_step as f64 * t.dt),
                csv_f(e.duration)
            );
            let b = (start_s / START_BIN_S).floor() as usize;
            if start_bins.len() <= b {
                start_bins.resize(b + 1, [0, 0]);
            }
            start_bins[b][usize::from(t.arm == Arm::Control)] += 1;
        }
    }
    files.push(("episodes.csv".to_string(), out));
    let mut out = String::from("start_lo_s,start_hi_s,competent,control\n");
    for (b, counts) in start_bins.iter().enumerate() {
        let lo = b as f64 * START_BIN_S;
        let _ = writeln!(
            out,
            "{},{},{},{}",
            csv_f(lo),
            csv_f(lo + START_BIN_S),
            counts[0],
            counts[1]
        );
    }
    files.push(("episode_start_times.csv".to_string(), out));

    // speed vs carefulness
    let mut out = String::from("arm,carefulness_lo,carefulness_hi,mean_robot_speed,samples\n");
    for arm in ARMS {
        let mut acc = [(0.0, 0usize); CAREFULNESS_BINS];
        for t in trials.iter().filter(|t| t.arm == arm) {
            for (a, b) in acc.iter_mut().zip(&t.speed_by_carefulness) {
                a.0 += b.0;
                a.1 += b.1;
            }
        }
        for (b, (sum, n)) in acc.iter().enumerate() {
            let m = if *n > 0 { sum / *n as f64 } else { f64::NAN };
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                arm_label(arm),
                csv_f(b as f64 / 10.0),
                csv_f((b + 1) as f64 / 10.0),
                csv_f(m),
                n
            );
        }
    }
    files.push(("speed_vs_carefulness.csv".to_string(), out));

    // accidental competence: Δa vs Δq between consecutive approach phases
    let mut out = String::from("index,arm,approach,delta_carefulness,delta_avoidance\n");
    let mut pairs: [Vec<(f64, f64)>; 2] = [Vec::new(), Vec::new()];
    for t in trials {
        for (k, w) in t.approach_phases.windows(2).enumerate() {
            let da = w[1].0 - w[0].0;
            let dq = w[1].1 - w[0].1;
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                t.index,
                arm_label(t.arm),
                k + 2,
                csv_f(da),
                csv_f(dq)
            );
            pairs[usize::from(t.arm == Arm::Control)].push((da, dq));
        }
    }
    files.push(("accidental_competence.csv".to_string(), out));

    // cumulative projection
    let mut out = String::from("index,arm,time_s,cumulative_cm\n");
    for t in trials {
        for (time, v) in &t.cumulative_projection {
            let _ = writeln!(out, "{},{},{},{}", t.index, arm_label(t.arm), csv_f(*time), csv_f(*v));
        }
    }
    files.push(("cumulative_projection.csv".to_string(), out));

    // report
    let mut tests = Vec::new();
    let mut md = String::new();
    let _ = writeln!(md, "# Experiment {} report\n", u32::from(dataset.id));
    let _ = writeln!(
        md,
        "Competent versus {} control, {} trials per arm, root seed {}.\n",
        dataset.control.label(),
        dataset.n_per_arm,
        dataset.root_seed
    );
    let _ = writeln!(
        md,
        "Parameter hash `{}`, {}.\n",
        dataset.param_hash, dataset.artifact_version
    );
    let _ = writeln!(md, "## Mann-Whitney U tests (two-sided)\n");
    let _ = writeln!(
        md,
        "| measure | competent median [min max] | control median [min max] | U | p | CLES |"
    );
    let _ = writeln!(md, "|---|---|---|---|---|---|");
    for (name, f) in MEASURES {
        let x = dataset.measure(Arm::Competent, f);
        let y = dataset.measure(Arm::Control, f);
        match mann_whitney_u(&x, &y) {
            Ok(r) => {
                let _ = writeln!(
                    md,
                    "| {name} | {:.3} [{:.3} {:.3}] | {:.3} [{:.3} {:.3}] | {:.1} | {:.4} | {:.2} |",
                    r.x.median,
                    r.x.min,
                    r.x.max,
                    r.y.median,
                    r.y.min,
                    r.y.max,
                    r.statistic,
                    r.p_value,
                    r.cles.unwrap_or(f64::NAN)
                );
                tests.push((name.to_string(), r));
            }
            Err(e) => {
                let _ = writeln!(md, "| {name} | – | – | – | – | – |");
                warnings.push(format!("{name}: {e}"));
            }
        }
    }

    let _ = writeln!(md, "\n## Regressions\n");
    let _ = writeln!(md, "| model | slope | intercept | R² | n |");
    let _ = writeln!(md, "|---|---|---|---|---|");
    let mut reg_row = |label: &str, r: Result<Regression>| match r {
        Ok(r) => {
            let _ = writeln!(
                md,
                "| {label} | {:.4} | {:.4} | {:.4} | {} |",
                r.slope, r.intercept, r.r2, r.n
            );
        }
        Err(e) => {
            let _ = writeln!(md, "| {label} | – | – | – | – |");
            warnings.push(format!("{label}: {e}"));
        }
    };
    for arm in ARMS {
        let x = dataset.measure(arm, |s| s.approach_count as f64);
        let y = dataset.measure(arm, |s| s.total_follow_s);
        reg_row(
            &format!("total follow ~ approaches ({})", arm_label(arm)),
            linear_regression(&x, &y),
        );
    }
    for arm in ARMS {
        let (da, dq): (Vec<f64>, Vec<f64>) = pairs[usize::from(arm == Arm::Control)].iter().copied().unzip();
        reg_row(
            &format!("Δ avoidance ~ Δ carefulness ({})", arm_label(arm)),
            linear_regression(&da, &dq),
        );
    }

    if !warnings.is_empty() {
        let _ = writeln!(md, "\n## Warnings\n");
        for w in &warnings {
            let _ = writeln!(md, "- {w}");
        }
    }
    files.push(("summary.md".to_string(), md));

    AnalysisBundle { files, warnings, tests }
}
