//! Log-log regression and percentile bootstrap.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::stream_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_std_error: f64,
    pub points: usize,
    /// Some `y` was zero and was replaced by 1 before taking logs.
    pub floored: bool,
}

/// Least-squares line through `(log x, log |y|)`. Zero `y` values are
/// floored at 1 and flagged rather than rejected.
pub fn loglog_fit(x: &[f64], y: &[f64]) -> Result<LogLogFit> {
    if x.len() != y.len() {
        return Err(Error::Dimension { expected: x.len(), got: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("a fit needs at least two points".into()));
    }
    if x.iter().any(|&v| !(v > 0.0)) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("fit needs x > 0 and finite y".into()));
    }
    let floored = y.iter().any(|&v| v == 0.0);
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|&v| if v == 0.0 { 0.0 } else { v.abs().ln() }).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = ly.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("all x values are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = lx.iter().zip(&ly).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    let slope_std_error = if lx.len() > 2 { (sse / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    Ok(LogLogFit { slope, intercept, r_squared, slope_std_error, points: lx.len(), floored })
}

/// A point estimate with a percentile bootstrap interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

fn percentile_interval(mut stats: Vec<f64>, estimate: f64, level: f64) -> Interval {
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Interval { estimate, lower: percentile(&stats, alpha), upper: percentile(&stats, 1.0 - alpha), level }
}

fn check_bootstrap(len: usize, resamples: usize, level: f64) -> Result<()> {
    if len == 0 || resamples == 0 {
        return Err(Error::InvalidArgument("bootstrap needs data and resamples".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level must lie in (0, 1), got {level}")));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn bootstrap_mean(values: &[f64], resamples: usize, level: f64, seed: u64) -> Result<Interval> {
    check_bootstrap(values.len(), resamples, level)?;
    let mut rng = stream_rng(seed, 0);
    let n = values.len();
    let stats = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    Ok(percentile_interval(stats, mean(values), level))
}

/// Interval for `mean(num) / mean(den)` resampling indices jointly, for
/// paired observations on the same units. Resamples with a zero
/// denominator are dropped.
pub fn bootstrap_paired_ratio(num: &[f64], den: &[f64], resamples: usize, level: f64, seed: u64) -> Result<Interval> {
    if num.len() != den.len() {
        return Err(Error::Dimension { expected: num.len(), got: den.len() });
    }
    check_bootstrap(num.len(), resamples, level)?;
    let mut rng = stream_rng(seed, 0);
    let n = num.len();
    let mut stats = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let (mut a, mut b) = (0.0, 0.0);
        for _ in 0..n {
            let i = rng.random_range(0..n);
            a += num[i];
            b += den[i];
        }
        if b != 0.0 {
            stats.push(a / b);
        }
    }
    let (a, b) = (mean(num), mean(den));
    if stats.is_empty() || b == 0.0 {
        let nan = f64::NAN;
        return Ok(Interval { estimate: nan, lower: nan, upper: nan, level });
    }
    Ok(percentile_interval(stats, a / b, level))
}
