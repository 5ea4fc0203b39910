//! Probabilistic time-series forecasting with gradient-guided covariate
//! stress testing and trading-strategy backtests.
//!
//! The pieces fit together as a pipeline:
//!
//! 1. [`series`]: price and covariate series, the log-difference target,
//!    standardization, lagging, windowing and splits.
//! 2. [`forecaster`]: an autoregressive recurrent model with a student-T
//!    head, trained by negative log-likelihood on top of [`autodiff`].
//! 3. [`stress`]: iterative, bounds-respecting perturbation of the input
//!    covariates along input gradients to move one forecast parameter.
//! 4. [`trading`] and [`metrics`]: threshold strategies, Kelly sizing,
//!    backtests, forecast error metrics and return densities.
//! 5. [`pipeline`]: data loading, synthetic data, configuration and
//!    end-to-end runs with report emission.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod error;
pub mod forecaster;
pub mod io;
pub mod matrix;
pub mod metrics;
pub mod pipeline;
pub mod series;
pub mod special;
pub mod stress;
pub mod synthetic;
pub mod trading;

pub use error::{Error, ErrorKind, Result};
pub use forecaster::{DistParam, ForecastDistribution, Forecaster, ModelParams, StudentTParams, TrainConfig};
pub use matrix::Matrix;
pub use series::{
    FeatureMatrix, FeatureStats, Frequency, PricePoint, PriceSeries, SplitSpec, TargetSeries, Timestamp,
    Window, WindowSpec,
};
pub use stress::{Direction, FeatureBounds, PerturbationSpec, StressResult};
pub use trading::{BacktestReport, StrategySpec};
