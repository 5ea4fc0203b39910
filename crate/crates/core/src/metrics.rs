//! Point, probabilistic and directional forecast metrics plus return KDE.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_paired(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::Shape(format!(
            "{} truths vs {} forecasts",
            y.len(),
            y_hat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::Data("metric over an empty series".into()));
    }
    Ok(())
}

pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_paired(y, y_hat)?;
    let sse: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((sse / y.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mape {
    /// Mean of `|y - ŷ| / |y|` over non-zero truths; absent if all are zero.
    pub value: Option<f64>,
    pub excluded_zeros: usize,
}

pub fn mape(y: &[f64], y_hat: &[f64]) -> Result<Mape> {
    check_paired(y, y_hat)?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for (&a, &b) in y.iter().zip(y_hat) {
        if a != 0.0 {
            sum += ((a - b) / a).abs();
            used += 1;
        }
    }
    Ok(Mape {
        value: (used > 0).then(|| sum / used as f64),
        excluded_zeros: y.len() - used,
    })
}

/// Unbiased sample CRPS:
/// `mean|S - x| - Σ_{i≠j}|S_i - S_j| / (2m(m-1))`.
///
/// The pair sum uses sorted samples: `Σ_{i<j}(S_(j) - S_(i)) = Σ_i (2i - m + 1) S_(i)`.
pub fn crps_empirical(samples: &[f64], x: f64) -> Result<f64> {
    let m = samples.len();
    if m < 2 {
        return Err(Error::Data(format!("CRPS needs at least 2 samples, got {m}")));
    }
    if samples.iter().any(|s| !s.is_finite()) || !x.is_finite() {
        return Err(Error::NonFinite("CRPS input".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mf = m as f64;
    let abs_err = sorted.iter().map(|s| (s - x).abs()).sum::<f64>() / mf;
    let half_pairs: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, s)| (2.0 * i as f64 - mf + 1.0) * s)
        .sum();
    // Σ_{i≠j} = 2 · Σ_{i<j}
    let spread = half_pairs / (mf * (mf - 1.0));
    Ok((abs_err - spread).max(0.0))
}

/// Percentage of periods where forecast and truth share a sign.
/// Zero counts as "not up" on both sides.
pub fn binary_accuracy(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_paired(y, y_hat)?;
    let hits = y
        .iter()
        .zip(y_hat)
        .filter(|(a, b)| (**a > 0.0) == (**b > 0.0))
        .count();
    Ok(hits as f64 / y.len() as f64 * 100.0)
}

/// Best accuracy of a constant always-up or always-down forecast, in percent.
pub fn historical_baseline(y: &[f64]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::Data("baseline over an empty series".into()));
    }
    let up = y.iter().filter(|v| **v > 0.0).count() as f64 / y.len() as f64;
    Ok(up.max(1.0 - up) * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kde {
    Curve {
        bandwidth: f64,
        grid: Vec<f64>,
        density: Vec<f64>,
    },
    /// All inputs equal; no bandwidth exists.
    PointMass { at: f64 },
}

pub const KDE_GRID_POINTS: usize = 512;

/// Gaussian KDE with Silverman's rule `h = 1.06·std·m^(-1/5)` (sample std),
/// evaluated on `grid_points` uniform points over `[min - 3h, max + 3h]`.
pub fn return_kde(returns: &[f64], grid_points: usize) -> Result<Kde> {
    let m = returns.len();
    if m < 2 {
        return Err(Error::Data(format!("KDE needs at least 2 returns, got {m}")));
    }
    if grid_points < 2 {
        return Err(Error::Config("KDE grid needs at least 2 points".into()));
    }
    if returns.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("KDE input".into()));
    }
    let mf = m as f64;
    let mean = returns.iter().sum::<f64>() / mf;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (mf - 1.0);
    let lo = returns.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi || var == 0.0 {
        return Ok(Kde::PointMass { at: lo });
    }
    let h = 1.06 * var.sqrt() * mf.powf(-0.2);
    let (a, b) = (lo - 3.0 * h, hi + 3.0 * h);
    let step = (b - a) / (grid_points - 1) as f64;
    let norm = 1.0 / (mf * h * (2.0 * std::f64::consts::PI).sqrt());
    let grid: Vec<f64> = (0..grid_points).map(|i| a + step * i as f64).collect();
    let density = grid
        .iter()
        .map(|&g| {
            returns
                .iter()
                .map(|r| (-0.5 * ((g - r) / h).powi(2)).exp())
                .sum::<f64>()
                * norm
        })
        .collect();
    Ok(Kde::Curve {
        bandwidth: h,
        grid,
        density,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub mape: Mape,
    pub crps: f64,
    /// Binary accuracy P, percent.
    pub accuracy: f64,
    /// Historical baseline T, percent.
    pub baseline: f64,
}

impl MetricReport {
    /// `samples[t]` are forecast draws for truth `y[t]`; CRPS is averaged over t.
    pub fn compute(y: &[f64], y_hat: &[f64], samples: &[Vec<f64>]) -> Result<Self> {
        check_paired(y, y_hat)?;
        if samples.len() != y.len() {
            return Err(Error::Shape(format!(
                "{} sample sets for {} truths",
                samples.len(),
                y.len()
            )));
        }
        let mut crps = 0.0;
        for (s, &x) in samples.iter().zip(y) {
            crps += crps_empirical(s, x)?;
        }
        Ok(Self {
            rmse: rmse(y, y_hat)?,
            mape: mape(y, y_hat)?,
            crps: crps / y.len() as f64,
            accuracy: binary_accuracy(y, y_hat)?,
            baseline: historical_baseline(y)?,
        })
    }
}
