//! Synthetic prices and covariates with a known coupling.
//!
//! Features follow independent stationary AR(1) processes with unit
//! variance. Only the first feature drives the target:
//! `z_t = α·x_{0,t-1} + noise·ε_t`. Prices chain so that each open equals
//! the previous close.

use chrono::{Days, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::series::{FeatureMatrix, Frequency, PricePoint, PriceSeries, Timestamp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub length: usize,
    pub n_features: usize,
    pub coupling: f64,
    pub noise: f64,
    /// AR(1) coefficient shared by all features.
    pub autocorrelation: f64,
    pub base_price: f64,
    pub frequency: Frequency,
    pub start: NaiveDate,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            length: 1306,
            n_features: 13,
            coupling: 0.01,
            noise: 0.01,
            autocorrelation: 0.5,
            base_price: 100.0,
            frequency: Frequency::Daily,
            start: NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid date"),
            seed: 0,
        }
    }
}

/// Shortest series accepted; anything shorter cannot hold three splits.
pub const MIN_SYNTHETIC_LENGTH: usize = 20;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.length < MIN_SYNTHETIC_LENGTH {
            return bad(format!(
                "synthetic length {} is below the minimum {MIN_SYNTHETIC_LENGTH}",
                self.length
            ));
        }
        if self.n_features == 0 {
            return bad("synthetic data needs at least one feature".into());
        }
        if !(self.noise > 0.0) || !self.noise.is_finite() {
            return bad(format!("noise scale must be positive, got {}", self.noise));
        }
        if !self.coupling.is_finite() {
            return bad("coupling must be finite".into());
        }
        if !(self.autocorrelation.abs() < 1.0) {
            return bad(format!(
                "autocorrelation must lie in (-1, 1), got {}",
                self.autocorrelation
            ));
        }
        if !(self.base_price > 0.0) || !self.base_price.is_finite() {
            return bad(format!("base price must be positive, got {}", self.base_price));
        }
        Ok(())
    }

    fn timestamp(&self, t: usize) -> Result<Timestamp> {
        match self.frequency {
            Frequency::Daily => Ok(Timestamp::date(self.start + Days::new(t as u64))),
            Frequency::Hourly => Timestamp::hourly(self.start + Days::new((t / 24) as u64), (t % 24) as u8),
        }
    }
}

/// Generated data plus the exact targets used to build the prices.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub prices: PriceSeries,
    pub features: FeatureMatrix,
    pub targets: Vec<f64>,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (t_len, n) = (spec.length, spec.n_features);
    let phi = spec.autocorrelation;
    let innov = (1.0 - phi * phi).sqrt();

    let mut x = Matrix::zeros(n, t_len);
    let mut state: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut z = Vec::with_capacity(t_len);
    let mut prev_driver = None;
    for t in 0..t_len {
        for (i, s) in state.iter_mut().enumerate() {
            if t > 0 {
                let e: f64 = StandardNormal.sample(&mut rng);
                *s = phi * *s + innov * e;
            }
            x.set(i, t, *s);
        }
        let eps: f64 = StandardNormal.sample(&mut rng);
        let signal = prev_driver.map_or(0.0, |d: f64| spec.coupling * d);
        z.push(signal + spec.noise * eps);
        prev_driver = Some(state[0]);
    }

    let mut points = Vec::with_capacity(t_len);
    let mut log_open = spec.base_price.ln();
    for (t, &zt) in z.iter().enumerate() {
        let open = log_open.exp();
        points.push(PricePoint {
            timestamp: spec.timestamp(t)?,
            open,
            close: open * zt.exp(),
        });
        log_open += zt;
    }
    let timestamps: Vec<Timestamp> = points.iter().map(|p| p.timestamp).collect();
    let names = (1..=n).map(|i| format!("f{i}")).collect();
    Ok(SyntheticData {
        prices: PriceSeries::new(points, spec.frequency)?,
        features: FeatureMatrix::new(names, x, timestamps)?,
        targets: z,
    })
}
