//! Two-sample tests and regression.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// Largest smaller-sample size for which the U test is computed exactly.
pub const EXACT_LIMIT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    MannWhitneyExact,
    MannWhitneyNormal,
    StudentT,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub n: usize,
    pub median: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl SampleSummary {
    pub fn of(xs: &[f64]) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::InvalidInput("empty sample".into()));
        }
        Ok(Self {
            n: xs.len(),
            median: median(xs),
            mean: mean(xs),
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub kind: TestKind,
    /// U of the first sample, or t.
    pub statistic: f64,
    pub p_value: f64,
    /// Common-language effect size, U tests only.
    pub cles: Option<f64>,
    pub n1: usize,
    pub n2: usize,
    pub x: SampleSummary,
    pub y: SampleSummary,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Midranks (1-based) of `values`, plus the sizes of every tie group.
pub fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        ties.push(j - i);
        i = j;
    }
    (ranks, ties)
}

/// `max(U, n1·n2 − U) / (n1·n2)`.
pub fn cles(u: f64, n1: usize, n2: usize) -> f64 {
    let total = (n1 * n2) as f64;
    u.max(total - u) / total
}

fn validate_sample(xs: &[f64], name: &str, min: usize) -> Result<()> {
    if xs.len() < min {
        return Err(Error::InvalidInput(format!(
            "sample {name} needs at least {min} values"
        )));
    }
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("sample {name} has non-finite values")));
    }
    Ok(())
}

/// Two-sided Mann-Whitney U test with midrank ties.
///
/// When the smaller sample has at most [`EXACT_LIMIT`] values the p-value is
/// the exact permutation probability of a U at least as far from its mean
/// as the observed one (ties included). Otherwise the normal approximation
/// with tie and continuity corrections is used.
pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<TestResult> {
    validate_sample(x, "x", 1)?;
    validate_sample(y, "y", 1)?;
    let (n1, n2) = (x.len(), y.len());
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let r1: f64 = ranks[..n1].iter().sum();
    let u = r1 - (n1 * (n1 + 1)) as f64 / 2.0;

    let (kind, p_value) = if n1.min(n2) <= EXACT_LIMIT {
        (TestKind::MannWhitneyExact, exact_p(&ranks, n1))
    } else {
        (TestKind::MannWhitneyNormal, normal_p(u, n1, n2, &ties))
    };
    Ok(TestResult {
        kind,
        statistic: u,
        p_value,
        cles: Some(cles(u, n1, n2)),
        n1,
        n2,
        x: SampleSummary::of(x)?,
        y: SampleSummary::of(y)?,
    })
}

/// Exact two-sided p over all ways of drawing the first sample's ranks.
fn exact_p(ranks: &[f64], n1: usize) -> f64 {
    let n = ranks.len();
    let n2 = n - n1;
    // work with the smaller group and doubled ranks, which are integers
    let (k, observed_members): (usize, Vec<usize>) = if n1 <= n2 {
        (n1, (0..n1).collect())
    } else {
        (n2, (n1..n).collect())
    };
    let m = n - k;
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let observed_sum: usize = observed_members.iter().map(|&i| doubled[i]).sum();
    let max_sum: usize = 2 * n * k + 1;

    // counts[j][s]: number of j-subsets with doubled rank sum s
    let mut counts = vec![vec![0.0f64; max_sum + 1]; k + 1];
    counts[0][0] = 1.0;
    for &d in &doubled {
        for j in (1..=k).rev() {
            let (lower, upper) = counts.split_at_mut(j);
            let prev = &lower[j - 1];
            let cur = &mut upper[0];
            for s in (d..=max_sum).rev() {
                let add = prev[s - d];
                if add != 0.0 {
                    cur[s] += add;
                }
            }
        }
    }
    // 2U = S2 - k(k+1); 2μ = k·m; compare deviations in doubled units
    let centre = (k * (k + 1) + k * m) as i64;
    let observed_dev = (observed_sum as i64 - centre).abs();
    let total: f64 = counts[k].iter().sum();
    let extreme: f64 = counts[k]
        .iter()
        .enumerate()
        .filter(|(s, _)| (*s as i64 - centre).abs() >= observed_dev)
        .map(|(_, c)| c)
        .sum();
    (extreme / total).min(1.0)
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

fn normal_p(u: f64, n1: usize, n2: usize, ties: &[usize]) -> f64 {
    let (a, b) = (n1 as f64, n2 as f64);
    let n = a + b;
    let mu = a * b / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1.0));
    let var = a * b / 12.0 * ((n + 1.0) - tie_term);
    if !(var > 0.0) {
        return 1.0;
    }
    let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
    (2.0 * (1.0 - standard_normal().cdf(z))).min(1.0)
}

/// Pooled-variance two-sided t-test.
pub fn unpaired_t(x: &[f64], y: &[f64]) -> Result<TestResult> {
    validate_sample(x, "x", 2)?;
    validate_sample(y, "y", 2)?;
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let df = n1 + n2 - 2.0;
    let (mx, my) = (mean(x), mean(y));
    let pooled = ((n1 - 1.0) * std_dev(x).powi(2) + (n2 - 1.0) * std_dev(y).powi(2)) / df;
    let (t, p) = if pooled > 0.0 {
        let t = (mx - my) / (pooled * (1.0 / n1 + 1.0 / n2)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
        (t, (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0))
    } else if mx == my {
        (0.0, 1.0)
    } else {
        let t = if mx > my { f64::INFINITY } else { f64::NEG_INFINITY };
        (t, 0.0)
    };
    Ok(TestResult {
        kind: TestKind::StudentT,
        statistic: t,
        p_value: p,
        cles: None,
        n1: x.len(),
        n2: y.len(),
        x: SampleSummary::of(x)?,
        y: SampleSummary::of(y)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
    /// `1 − SSE/SST`; 1 when `y` is constant and fitted exactly.
    pub r2: f64,
    pub n: usize,
}

impl Regression {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

pub fn linear_regression(x: &[f64], y: &[f64]) -> Result<Regression> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput("x and y differ in length".into()));
    }
    validate_sample(x, "x", 2)?;
    validate_sample(y, "y", 2)?;
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidInput("x is constant".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - (intercept + slope * a)).powi(2))
        .sum();
    let sst: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r2 = if sst > 0.0 { 1.0 - sse / sst } else { 1.0 };
    Ok(Regression {
        slope,
        intercept,
        r2,
        n: x.len(),
    })
}
