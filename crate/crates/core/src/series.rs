//! Price and covariate series, the log-difference target, feature
//! standardization, covariate lagging, windowing and dataset splits.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Daily,
    Hourly,
}

impl FromStr for Frequency {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "daily" => Ok(Frequency::Daily),
            "hourly" => Ok(Frequency::Hourly),
            other => Err(Error::Config(format!("unknown frequency `{other}`"))),
        }
    }
}

/// Exchange-local date or date-hour.
///
/// Text form is `YYYY-MM-DD` for daily data and `YYYY-MM-DDTHH:00` for
/// hourly data. Ordering is chronological.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp {
    date: NaiveDate,
    hour: Option<u8>,
}

impl Timestamp {
    pub fn date(date: NaiveDate) -> Self {
        Self { date, hour: None }
    }

    pub fn hourly(date: NaiveDate, hour: u8) -> Result<Self> {
        if hour > 23 {
            return Err(Error::Data(format!("hour {hour} out of range")));
        }
        Ok(Self {
            date,
            hour: Some(hour),
        })
    }

    pub fn day(&self) -> NaiveDate {
        self.date
    }

    pub fn hour(&self) -> Option<u8> {
        self.hour
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.hour {
            None => write!(f, "{}", self.date.format("%Y-%m-%d")),
            Some(h) => write!(f, "{}T{h:02}:00", self.date.format("%Y-%m-%d")),
        }
    }
}

impl FromStr for Timestamp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Data(format!("invalid timestamp `{s}`"));
        let (date_part, time_part) = match s.split_once('T') {
            Some((d, t)) => (d, Some(t)),
            None => (s, None),
        };
        let date = NaiveDate::parse_from_str(date_part, "%Y-%m-%d").map_err(|_| bad())?;
        match time_part {
            None => Ok(Timestamp::date(date)),
            Some(t) => {
                let (h, m) = t.split_once(':').ok_or_else(bad)?;
                if m != "00" || h.len() != 2 {
                    return Err(bad());
                }
                let hour: u8 = h.parse().map_err(|_| bad())?;
                Timestamp::hourly(date, hour).map_err(|_| bad())
            }
        }
    }
}

impl Serialize for Timestamp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricePoint {
    pub timestamp: Timestamp,
    pub open: f64,
    pub close: f64,
}

impl PricePoint {
    /// Intraday simple return `close/open - 1`.
    pub fn intraday_return(&self) -> f64 {
        self.close / self.open - 1.0
    }
}

/// Ordered open/close quotes at a fixed frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    points: Vec<PricePoint>,
    frequency: Frequency,
}

impl PriceSeries {
    /// Validates ordering and length. Price positivity is checked by
    /// [`log_diff_transform`], which names the offending timestamp.
    pub fn new(points: Vec<PricePoint>, frequency: Frequency) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Data(format!(
                "price series needs at least 2 points, got {}",
                points.len()
            )));
        }
        if let Some(w) = points.windows(2).find(|w| w[0].timestamp >= w[1].timestamp) {
            return Err(Error::Data(format!(
                "timestamps not strictly increasing at {}",
                w[1].timestamp
            )));
        }
        Ok(Self { points, frequency })
    }

    pub fn points(&self) -> &[PricePoint] {
        &self.points
    }

    pub fn frequency(&self) -> Frequency {
        self.frequency
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn timestamps(&self) -> Vec<Timestamp> {
        self.points.iter().map(|p| p.timestamp).collect()
    }
}

/// Log-difference target `z_t = ln(close_t / open_t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSeries {
    pub values: Vec<f64>,
    pub timestamps: Vec<Timestamp>,
}

impl TargetSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Covariates `X` with one row per feature and one column per timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    names: Vec<String>,
    data: Matrix,
    timestamps: Vec<Timestamp>,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, data: Matrix, timestamps: Vec<Timestamp>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Data("feature matrix needs at least one feature".into()));
        }
        if data.rows() != names.len() {
            return Err(Error::Shape(format!(
                "{} feature names for {} rows",
                names.len(),
                data.rows()
            )));
        }
        if data.cols() != timestamps.len() {
            return Err(Error::Shape(format!(
                "{} columns for {} timestamps",
                data.cols(),
                timestamps.len()
            )));
        }
        for (i, name) in names.iter().enumerate() {
            if let Some(t) = data.row(i).iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "non-finite value in feature `{}` at {}",
                    name, timestamps[t]
                )));
            }
        }
        Ok(Self {
            names,
            data,
            timestamps,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn timestamps(&self) -> &[Timestamp] {
        &self.timestamps
    }

    pub fn n_features(&self) -> usize {
        self.data.rows()
    }

    pub fn len(&self) -> usize {
        self.data.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.cols() == 0
    }

    pub fn get(&self, feature: usize, t: usize) -> f64 {
        self.data.get(feature, t)
    }
}

/// Per-feature training-range statistics in raw units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Features that were constant on the training range. They are only
    /// centered, and never chosen for perturbation.
    pub zero_variance: Vec<bool>,
}

impl FeatureStats {
    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    fn divisor(&self, i: usize) -> f64 {
        if self.zero_variance[i] {
            1.0
        } else {
            self.std[i]
        }
    }

    pub fn standardize(&self, i: usize, raw: f64) -> f64 {
        (raw - self.mean[i]) / self.divisor(i)
    }

    pub fn destandardize(&self, i: usize, value: f64) -> f64 {
        value * self.divisor(i) + self.mean[i]
    }

    /// Historical `[min, max]` per feature in standardized units.
    pub fn standardized_bounds(&self) -> Vec<(f64, f64)> {
        (0..self.n_features())
            .map(|i| (self.standardize(i, self.min[i]), self.standardize(i, self.max[i])))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Range<usize>,
    pub valid: Range<usize>,
    pub test: Range<usize>,
}

impl SplitSpec {
    pub fn new(train: Range<usize>, valid: Range<usize>, test: Range<usize>) -> Result<Self> {
        let ok = train.start <= train.end
            && train.end == valid.start
            && valid.start <= valid.end
            && valid.end == test.start
            && test.start <= test.end;
        if !ok {
            return Err(Error::Config(format!(
                "split ranges must be contiguous and ascending: {train:?}, {valid:?}, {test:?}"
            )));
        }
        Ok(Self { train, valid, test })
    }

    pub fn total_len(&self) -> usize {
        self.test.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    /// Past observations fed to the model (`k`).
    pub history_len: usize,
    /// Future steps forecast per window.
    pub horizon: usize,
}

impl WindowSpec {
    pub fn new(history_len: usize, horizon: usize) -> Result<Self> {
        if history_len == 0 || horizon == 0 {
            return Err(Error::Config(format!(
                "history length and horizon must be >= 1 (got {history_len}, {horizon})"
            )));
        }
        Ok(Self { history_len, horizon })
    }

    pub fn span(&self) -> usize {
        self.history_len + self.horizon
    }
}

/// One forecasting example.
///
/// `origin` is the index of the first future step. The target history
/// covers `origin-k..origin` and the future `origin..origin+horizon`.
/// Covariate column `s` is the covariate paired with input step `s`, whose
/// hidden state forecasts index `origin-k+1+s`; the columns therefore come
/// from `origin-k+1..=origin`. Feed lagged covariates so that column `s`
/// carries no information from its own timestamp or later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub origin: usize,
    pub z_history: Vec<f64>,
    /// Feature-major `N x k`.
    pub covariates: Matrix,
    pub z_future: Vec<f64>,
}

impl Window {
    pub fn history_range(&self) -> Range<usize> {
        self.origin - self.z_history.len()..self.origin
    }

    pub fn future_range(&self) -> Range<usize> {
        self.origin..self.origin + self.z_future.len()
    }

    pub fn covariate_range(&self) -> Range<usize> {
        let k = self.covariates.cols();
        self.origin + 1 - k..self.origin + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub windows: Vec<Window>,
    /// Set when the range was too short to yield any window.
    pub insufficient: bool,
}

/// `z_t = ln(close_t / open_t)` for every point.
pub fn log_diff_transform(prices: &PriceSeries) -> Result<TargetSeries> {
    let mut values = Vec::with_capacity(prices.len());
    for p in prices.points() {
        if !(p.open > 0.0 && p.close > 0.0) || !p.open.is_finite() || !p.close.is_finite() {
            return Err(Error::NonPositivePrice {
                timestamp: p.timestamp.to_string(),
                open: p.open,
                close: p.close,
            });
        }
        values.push((p.close / p.open).ln());
    }
    Ok(TargetSeries {
        values,
        timestamps: prices.timestamps(),
    })
}

/// Maps a log-return back to a simple return, `e^z - 1`.
pub fn target_to_return(z: f64) -> f64 {
    z.exp_m1()
}

/// Standardizes every feature with mean and population std taken from the
/// training range only.
pub fn standardize_features(x: &FeatureMatrix, split: &SplitSpec) -> Result<(FeatureMatrix, FeatureStats)> {
    let train = split.train.clone();
    if train.is_empty() {
        return Err(Error::Config("training range is empty".into()));
    }
    if train.end > x.len() {
        return Err(Error::Shape(format!(
            "training range {train:?} exceeds {} columns",
            x.len()
        )));
    }
    let n = x.n_features();
    let m = train.len() as f64;
    let mut stats = FeatureStats {
        mean: Vec::with_capacity(n),
        std: Vec::with_capacity(n),
        min: Vec::with_capacity(n),
        max: Vec::with_capacity(n),
        zero_variance: Vec::with_capacity(n),
    };
    for i in 0..n {
        let row = &x.data().row(i)[train.clone()];
        let mean = row.iter().sum::<f64>() / m;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        stats.mean.push(mean.clamp(lo, hi));
        stats.std.push(var.sqrt());
        stats.min.push(lo);
        stats.max.push(hi);
        // Relative threshold: a constant column can still pick up rounding
        // noise in the mean.
        stats
            .zero_variance
            .push(var.sqrt() <= 1e-12 * mean.abs().max(1.0));
    }
    let data = Matrix::from_fn(n, x.len(), |i, t| stats.standardize(i, x.get(i, t)));
    let out = FeatureMatrix::new(x.names().to_vec(), data, x.timestamps().to_vec())?;
    Ok((out, stats))
}

/// Shifts covariates forward by `lag` steps: output column `t` is input
/// column `t - lag`, and the first `lag` columns repeat the earliest column.
pub fn lag_covariates(x: &FeatureMatrix, lag: usize) -> Result<FeatureMatrix> {
    if lag == 0 {
        return Err(Error::Config("lag must be >= 1".into()));
    }
    if lag >= x.len() {
        return Err(Error::Config(format!(
            "lag {lag} must be smaller than the series length {}",
            x.len()
        )));
    }
    let data = Matrix::from_fn(x.n_features(), x.len(), |i, t| x.get(i, t.saturating_sub(lag)));
    FeatureMatrix::new(x.names().to_vec(), data, x.timestamps().to_vec())
}

/// Builds stride-1 windows whose every index lies inside `range`.
pub fn make_windows(
    z: &TargetSeries,
    x: &FeatureMatrix,
    spec: &WindowSpec,
    range: Range<usize>,
) -> Result<WindowSet> {
    if z.len() != x.len() {
        return Err(Error::Shape(format!(
            "target has {} steps but covariates have {}",
            z.len(),
            x.len()
        )));
    }
    if range.end > z.len() {
        return Err(Error::Shape(format!(
            "range {range:?} exceeds series length {}",
            z.len()
        )));
    }
    let k = spec.history_len;
    let h = spec.horizon;
    if range.len() < k + h {
        return Ok(WindowSet {
            windows: Vec::new(),
            insufficient: true,
        });
    }
    let windows = (range.start + k..=range.end - h)
        .map(|origin| Window {
            origin,
            z_history: z.values[origin - k..origin].to_vec(),
            covariates: x.data().columns(origin + 1 - k, origin + 1),
            z_future: z.values[origin..origin + h].to_vec(),
        })
        .collect();
    Ok(WindowSet {
        windows,
        insufficient: false,
    })
}

/// Absolute train/valid boundaries for the two reference dataset lengths.
const DAILY_TABLE: (usize, usize, usize) = (1150, 1190, 1306);
const HOURLY_TABLE: (usize, usize, usize) = (2550, 2700, 2890);

/// Splits `len` steps into contiguous train/valid/test ranges.
///
/// The reference lengths (1306 daily, 2890 hourly) reproduce their fixed
/// boundaries. Any other length is split in the same proportions, with
/// train and valid sizes rounded down.
pub fn apply_split(len: usize, frequency: Frequency, window: &WindowSpec) -> Result<SplitSpec> {
    let (train_end, valid_end, total) = match frequency {
        Frequency::Daily => DAILY_TABLE,
        Frequency::Hourly => HOURLY_TABLE,
    };
    let (n_train, n_valid) = if len == total {
        (train_end, valid_end - train_end)
    } else {
        (len * train_end / total, len * (valid_end - train_end) / total)
    };
    let split = SplitSpec::new(0..n_train, n_train..n_train + n_valid, n_train + n_valid..len)?;
    let need = window.span();
    for (name, r) in [
        ("train", &split.train),
        ("valid", &split.valid),
        ("test", &split.test),
    ] {
        if r.len() < need {
            return Err(Error::Config(format!(
                "{name} split of {len} steps has {} steps, fewer than history+horizon = {need}",
                r.len()
            )));
        }
    }
    Ok(split)
}
