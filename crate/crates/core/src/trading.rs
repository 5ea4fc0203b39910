//! Threshold trading strategies, Kelly sizing and backtests.
//!
//! Every period starts and ends in cash: a trade buys at the open and sells
//! at the close, realizing `y = close/open - 1` on the invested fraction.
//! Only long positions are taken. Period factors `1 + f·y` compound.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecaster::StudentTParams;
use crate::series::{target_to_return, PricePoint, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdKind {
    /// Trade on any non-negative forecast.
    FixedZero,
    /// Trade when the forecast reaches mean + sample std of the trailing
    /// realized returns.
    RollingMeanPlusStd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sizing {
    Full,
    Kelly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StrategySpec {
    pub threshold: ThresholdKind,
    pub sizing: Sizing,
    /// Trailing window for the rolling threshold and the Kelly statistics.
    pub window: usize,
}

impl StrategySpec {
    pub fn new(threshold: ThresholdKind, sizing: Sizing, window: usize) -> Result<Self> {
        let s = Self {
            threshold,
            sizing,
            window,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let rolling = self.threshold == ThresholdKind::RollingMeanPlusStd || self.sizing == Sizing::Kelly;
        if rolling && self.window < 2 {
            return Err(Error::Config(format!(
                "strategy {self} needs a window of at least 2, got {}",
                self.window
            )));
        }
        Ok(())
    }

    /// Parses `t0`, `t-musigma`, optionally suffixed with `,kelly`.
    pub fn parse(s: &str, window: usize) -> Result<Self> {
        let (base, sizing) = match s.split_once(',') {
            Some((b, "kelly")) => (b, Sizing::Kelly),
            Some((_, other)) => return Err(Error::Config(format!("unknown sizing `{other}` in `{s}`"))),
            None => (s, Sizing::Full),
        };
        let threshold = match base {
            "t0" => ThresholdKind::FixedZero,
            "t-musigma" => ThresholdKind::RollingMeanPlusStd,
            other => {
                return Err(Error::Config(format!(
                    "unknown strategy `{other}` (expected t0 or t-musigma)"
                )))
            }
        };
        Self::new(threshold, sizing, window)
    }

    /// Short identifier, e.g. `t0` or `t-musigma-kelly`.
    pub fn name(&self) -> String {
        let base = match self.threshold {
            ThresholdKind::FixedZero => "t0",
            ThresholdKind::RollingMeanPlusStd => "t-musigma",
        };
        match self.sizing {
            Sizing::Full => base.to_string(),
            Sizing::Kelly => format!("{base}-kelly"),
        }
    }

    /// The four strategies reported by default.
    pub fn standard_set(window: usize) -> Result<Vec<Self>> {
        let mut out = Vec::new();
        for threshold in [ThresholdKind::FixedZero, ThresholdKind::RollingMeanPlusStd] {
            for sizing in [Sizing::Full, Sizing::Kelly] {
                out.push(Self::new(threshold, sizing, window)?);
            }
        }
        Ok(out)
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for StrategySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s, DEFAULT_WINDOW)
    }
}

pub const DEFAULT_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Traded,
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub timestamp: Timestamp,
    pub decision: Decision,
    /// Invested fraction `f`; zero when skipped.
    pub fraction: f64,
    /// Forecast return (simple return space).
    pub forecast: f64,
    /// Threshold in force, absent when history was insufficient.
    pub threshold: Option<f64>,
    /// Realized `close/open - 1` of the period.
    pub realized_return: f64,
    /// Skipped because the rolling threshold lacked history.
    pub insufficient_history: bool,
    /// Kelly sizing fell back to full sizing.
    pub kelly_fallback: bool,
}

impl TradeRecord {
    pub fn factor(&self) -> f64 {
        1.0 + self.fraction * self.realized_return
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub strategy: String,
    pub records: Vec<TradeRecord>,
    /// `(Π(1 + f·y) - 1) · 100`.
    pub compounded_return_pct: f64,
    pub pct_traded: f64,
    /// Mean realized return of traded periods, in percent.
    pub mean_traded_return_pct: Option<f64>,
    /// Realized returns `y` of the traded periods.
    pub traded_returns: Vec<f64>,
}

impl BacktestReport {
    pub fn traded_count(&self) -> usize {
        self.traded_returns.len()
    }
}

/// `mean + std` of trailing realized returns, with sample std (`n - 1`).
pub fn rolling_threshold(past_returns: &[f64]) -> Result<f64> {
    let n = past_returns.len();
    if n < 2 {
        return Err(Error::Data(format!(
            "rolling threshold needs at least 2 returns, got {n}"
        )));
    }
    let mean = past_returns.iter().sum::<f64>() / n as f64;
    let var = past_returns.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(mean + var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KellySize {
    pub fraction: f64,
    /// Set when the inputs could not support the formula and full sizing
    /// was used instead.
    pub fallback: bool,
}

/// `f = W - (1 - W) / R`, clamped to `[0, 1]`.
///
/// A non-positive or non-finite gain/loss ratio falls back to full sizing.
pub fn kelly_fraction(win_rate: f64, gain_loss_ratio: f64) -> KellySize {
    if !(gain_loss_ratio > 0.0) || !gain_loss_ratio.is_finite() {
        return KellySize {
            fraction: 1.0,
            fallback: true,
        };
    }
    let f = win_rate - (1.0 - win_rate) / gain_loss_ratio;
    KellySize {
        fraction: f.clamp(0.0, 1.0),
        fallback: false,
    }
}

/// Kelly size from realized trade returns. Wins are `y > 0`, losses `y < 0`;
/// `R` is mean gain over mean absolute loss.
pub fn kelly_from_trades(trades: &[f64]) -> KellySize {
    let wins: Vec<f64> = trades.iter().copied().filter(|&y| y > 0.0).collect();
    let losses: Vec<f64> = trades.iter().copied().filter(|&y| y < 0.0).collect();
    if trades.is_empty() || losses.is_empty() {
        return KellySize {
            fraction: 1.0,
            fallback: true,
        };
    }
    if wins.is_empty() {
        // W = 0 makes the formula negative for every positive R.
        return KellySize {
            fraction: 0.0,
            fallback: false,
        };
    }
    let win_rate = wins.len() as f64 / trades.len() as f64;
    let mean_gain = wins.iter().sum::<f64>() / wins.len() as f64;
    let mean_loss = -losses.iter().sum::<f64>() / losses.len() as f64;
    kelly_fraction(win_rate, mean_gain / mean_loss)
}

/// Trade iff `forecast >= threshold`.
pub fn decide(forecast: f64, threshold: f64) -> Decision {
    if forecast >= threshold {
        Decision::Traded
    } else {
        Decision::Skipped
    }
}

/// Maps forecast locations (log-return) to simple returns used for decisions.
pub fn forecast_returns(steps: &[StudentTParams]) -> Vec<f64> {
    steps.iter().map(|d| target_to_return(d.mu)).collect()
}

/// Replays `strategy` over aligned forecasts and prices.
pub fn backtest(forecasts: &[f64], prices: &[PricePoint], strategy: &StrategySpec) -> Result<BacktestReport> {
    strategy.validate()?;
    if forecasts.len() != prices.len() {
        return Err(Error::Shape(format!(
            "{} forecasts for {} price periods",
            forecasts.len(),
            prices.len()
        )));
    }
    if let Some(i) = forecasts.iter().position(|f| !f.is_finite()) {
        return Err(Error::Data(format!("non-finite forecast at period {i}")));
    }
    let k = strategy.window;
    let realized: Vec<f64> = prices.iter().map(PricePoint::intraday_return).collect();
    let mut records = Vec::with_capacity(prices.len());
    let mut traded_returns: Vec<f64> = Vec::new();
    let mut growth = 1.0;

    for (i, (p, &forecast)) in prices.iter().zip(forecasts).enumerate() {
        let y = realized[i];
        let threshold = match strategy.threshold {
            ThresholdKind::FixedZero => Some(0.0),
            ThresholdKind::RollingMeanPlusStd if i >= k => Some(rolling_threshold(&realized[i - k..i])?),
            ThresholdKind::RollingMeanPlusStd => None,
        };
        let decision = threshold.map_or(Decision::Skipped, |t| decide(forecast, t));
        let (fraction, kelly_fallback) = match (decision, strategy.sizing) {
            (Decision::Skipped, _) => (0.0, false),
            (Decision::Traded, Sizing::Full) => (1.0, false),
            (Decision::Traded, Sizing::Kelly) if traded_returns.len() >= k => {
                let size = kelly_from_trades(&traded_returns[traded_returns.len() - k..]);
                (size.fraction, size.fallback)
            }
            (Decision::Traded, Sizing::Kelly) => (1.0, true),
        };
        let record = TradeRecord {
            timestamp: p.timestamp,
            decision,
            fraction,
            forecast,
            threshold,
            realized_return: y,
            insufficient_history: threshold.is_none(),
            kelly_fallback,
        };
        growth *= record.factor();
        if decision == Decision::Traded {
            traded_returns.push(y);
        }
        records.push(record);
    }

    let n = records.len();
    let traded = traded_returns.len();
    Ok(BacktestReport {
        strategy: strategy.name(),
        records,
        compounded_return_pct: (growth - 1.0) * 100.0,
        pct_traded: if n == 0 {
            0.0
        } else {
            traded as f64 / n as f64 * 100.0
        },
        mean_traded_return_pct: (traded > 0)
            .then(|| traded_returns.iter().sum::<f64>() / traded as f64 * 100.0),
        traded_returns,
    })
}

/// Buy at the first open, sell at the last close, in percent.
pub fn passive_return(prices: &[PricePoint]) -> Result<f64> {
    let (first, last) = match (prices.first(), prices.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::Data("passive return of an empty period".into())),
    };
    Ok((last.close / first.open - 1.0) * 100.0)
}

/// Writes the ledger as CSV:
/// `timestamp,decision,fraction,forecast,realized_return,cumulative_factor`.
pub fn write_ledger<W: Write>(report: &BacktestReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let to_err = |e: csv::Error| Error::Data(format!("ledger write failed: {e}"));
    w.write_record([
        "timestamp",
        "decision",
        "fraction",
        "forecast",
        "realized_return",
        "cumulative_factor",
    ])
    .map_err(to_err)?;
    let mut cumulative = 1.0;
    for r in &report.records {
        cumulative *= r.factor();
        let decision = match r.decision {
            Decision::Traded => "traded",
            Decision::Skipped => "skipped",
        };
        w.write_record([
            r.timestamp.to_string(),
            decision.to_string(),
            r.fraction.to_string(),
            r.forecast.to_string(),
            r.realized_return.to_string(),
            cumulative.to_string(),
        ])
        .map_err(to_err)?;
    }
    w.flush()
        .map_err(|e| Error::Data(format!("ledger write failed: {e}")))
}
