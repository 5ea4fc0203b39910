//! Deterministic fixtures shared by the benchmarks.

use chrono::{Days, NaiveDate};
use fcstress_core::{Matrix, ModelParams, PricePoint, Timestamp};

/// Initialized forecaster parameters.
pub fn params(hidden: usize, n_features: usize) -> ModelParams {
    ModelParams::init(17, hidden, n_features).expect("valid shape")
}

/// A history of `k` targets and an `n x k` covariate window, filled from a
/// fixed low-discrepancy pattern.
pub fn window(n_features: usize, k: usize) -> (Vec<f64>, Matrix) {
    let z = (0..k).map(|s| 0.01 * ((s as f64) * 0.7).sin()).collect();
    let x = Matrix::from_fn(n_features, k, |i, s| {
        ((i * 31 + s * 7) as f64 * 0.618).fract() * 2.0 - 1.0
    });
    (z, x)
}

/// `n` daily prices with small alternating returns.
pub fn prices(n: usize) -> Vec<PricePoint> {
    let start = NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date");
    (0..n)
        .map(|i| {
            let open = 100.0 + (i as f64 * 0.37).sin();
            let r = 0.01 * ((i as f64) * 1.3).cos();
            PricePoint {
                timestamp: Timestamp::date(start + Days::new(i as u64)),
                open,
                close: open * (1.0 + r),
            }
        })
        .collect()
}

/// Forecasts correlated with `prices`.
pub fn forecasts(prices: &[PricePoint]) -> Vec<f64> {
    prices
        .iter()
        .enumerate()
        .map(|(i, p)| 0.5 * (p.close / p.open - 1.0) + 0.002 * ((i as f64) * 2.1).sin())
        .collect()
}
