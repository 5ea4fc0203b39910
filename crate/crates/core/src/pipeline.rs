//! End-to-end runs: configuration, data preparation, training, evaluation,
//! stress testing and report emission.
//!
//! A single master seed determines every stochastic component. Sub-seeds
//! for data generation, training and forecast sampling are derived from it,
//! and the resolved values are recorded in the emitted summary.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecaster::{
    sample_paths, train, DistParam, ForecastDistribution, Forecaster, ModelParams, TrainConfig, TrainingLog,
};
use crate::io::{load_dataset, write_features, write_prices};
use crate::matrix::Matrix;
use crate::metrics::{return_kde, Kde, MetricReport};
use crate::series::{
    apply_split, lag_covariates, log_diff_transform, make_windows, standardize_features, FeatureMatrix,
    FeatureStats, Frequency, PricePoint, PriceSeries, SplitSpec, TargetSeries, Timestamp, Window, WindowSpec,
};
use crate::stress::{
    perturb, perturbation_norms, Direction, FeatureBounds, PerturbationSpec, StressReport, StressResult,
};
use crate::synthetic::{generate_synthetic, SyntheticSpec};
use crate::trading::{backtest, passive_return, write_ledger, BacktestReport, StrategySpec};

pub const SCHEMA_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Not recorded in the summary, so runs into different directories
    /// produce identical reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub data: DataSource,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub strategies: StrategyConfig,
    #[serde(default)]
    pub stress: StressConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Csv(CsvSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub prices: PathBuf,
    pub features: PathBuf,
    #[serde(default = "default_frequency")]
    pub frequency: Frequency,
}

fn default_frequency() -> Frequency {
    Frequency::Daily
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub history: usize,
    pub horizon: usize,
    /// Covariate lag in steps, at least 1.
    pub lag: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            history: 10,
            horizon: 1,
            lag: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    /// Strategy names such as `t0` or `t-musigma,kelly`.
    pub names: Vec<String>,
    /// Trailing window for rolling thresholds and Kelly statistics.
    pub window: usize,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            names: ["t0", "t0,kelly", "t-musigma", "t-musigma,kelly"]
                .map(String::from)
                .to_vec(),
            window: crate::trading::DEFAULT_WINDOW,
        }
    }
}

impl StrategyConfig {
    pub fn specs(&self) -> Result<Vec<StrategySpec>> {
        self.names
            .iter()
            .map(|n| StrategySpec::parse(n, self.window))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StressConfig {
    pub params: Vec<DistParam>,
    pub directions: Vec<Direction>,
    /// Strictly ascending, all positive.
    pub epsilons: Vec<f64>,
    pub iterations: usize,
    /// ε used for the comparison-table rows; defaults to the largest.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table_epsilon: Option<f64>,
    /// Replaces the training-range bounds with one global interval.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[f64; 2]>,
}

impl Default for StressConfig {
    fn default() -> Self {
        Self {
            params: DistParam::ALL.to_vec(),
            directions: Direction::BOTH.to_vec(),
            epsilons: vec![0.01, 0.03, 0.1],
            iterations: 1,
            table_epsilon: None,
            bounds: None,
        }
    }
}

impl StressConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::Config(
                "stress epsilons must be positive and finite".into(),
            ));
        }
        if self.epsilons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("stress epsilons must be strictly ascending".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("stress iterations must be >= 1".into()));
        }
        if let Some(t) = self.table_epsilon {
            if !self.epsilons.contains(&t) {
                return Err(Error::Config(format!(
                    "table_epsilon {t} is not one of the stress epsilons"
                )));
            }
        }
        if let Some([lo, hi]) = self.bounds {
            if !(lo <= hi) {
                return Err(Error::Config(format!("stress bounds [{lo}, {hi}] are inverted")));
            }
        }
        Ok(())
    }

    /// Every (param, direction, ε) combination, in that nesting order.
    pub fn specs(&self) -> Vec<PerturbationSpec> {
        let mut out = Vec::new();
        for &param in &self.params {
            for &direction in &self.directions {
                for &epsilon in &self.epsilons {
                    out.push(PerturbationSpec {
                        param,
                        direction,
                        epsilon,
                        iterations: self.iterations,
                    });
                }
            }
        }
        out
    }

    pub fn table_epsilon(&self) -> Option<f64> {
        self.table_epsilon.or_else(|| self.epsilons.last().copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Forecast draws per test point for CRPS.
    pub crps_samples: usize,
    /// Grid points per KDE curve.
    pub kde_grid: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            crps_samples: 200,
            kde_grid: 256,
        }
    }
}

/// Values supplied on the command line; each replaces the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub epsilons: Option<Vec<f64>>,
    pub param: Option<DistParam>,
    pub direction: Option<Direction>,
    pub iterations: Option<usize>,
    pub strategy: Option<String>,
}

/// SplitMix64 finalizer over `master ^ stream`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STREAM_DATA: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_SAMPLES: u64 = 3;

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML file. Relative CSV paths are resolved against the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg =
            Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let DataSource::Csv(src) = &mut cfg.data {
            let base = path.parent().unwrap_or(Path::new(""));
            for p in [&mut src.prices, &mut src.features] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        WindowSpec::new(self.window.history, self.window.horizon)?;
        if self.window.lag == 0 {
            return Err(Error::Config("window.lag must be >= 1".into()));
        }
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        self.train.validate()?;
        self.strategies.specs()?;
        self.stress.validate()?;
        if self.metrics.crps_samples < 2 {
            return Err(Error::Config("metrics.crps_samples must be >= 2".into()));
        }
        if self.metrics.kde_grid < 2 {
            return Err(Error::Config("metrics.kde_grid must be >= 2".into()));
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(dir) = &o.output_dir {
            self.output_dir = Some(dir.clone());
        }
        if let Some(eps) = &o.epsilons {
            self.stress.epsilons = eps.clone();
            self.stress.table_epsilon = None;
        }
        if let Some(p) = o.param {
            self.stress.params = vec![p];
        }
        if let Some(d) = o.direction {
            self.stress.directions = vec![d];
        }
        if let Some(r) = o.iterations {
            self.stress.iterations = r;
        }
        if let Some(s) = &o.strategy {
            self.strategies.names = vec![s.clone()];
        }
        self.validate()
    }

    /// Copy with every sub-seed derived from the master seed and the
    /// output directory removed.
    pub fn resolved(&self) -> Self {
        let mut cfg = self.clone();
        cfg.output_dir = None;
        cfg.train.seed = derive_seed(self.seed, STREAM_TRAIN);
        if let DataSource::Synthetic(s) = &mut cfg.data {
            s.seed = derive_seed(self.seed, STREAM_DATA);
        }
        cfg
    }

    pub fn frequency(&self) -> Frequency {
        match &self.data {
            DataSource::Synthetic(s) => s.frequency,
            DataSource::Csv(c) => c.frequency,
        }
    }

    pub fn window_spec(&self) -> Result<WindowSpec> {
        WindowSpec::new(self.window.history, self.window.horizon)
    }

    pub fn sample_seed(&self) -> u64 {
        derive_seed(self.seed, STREAM_SAMPLES)
    }
}

// ---------------------------------------------------------------------------
// Data preparation
// ---------------------------------------------------------------------------

/// Loaded, transformed and windowed data.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub prices: PriceSeries,
    /// Standardized with training statistics, then lagged.
    pub features: FeatureMatrix,
    pub stats: FeatureStats,
    pub target: TargetSeries,
    pub split: SplitSpec,
    pub window: WindowSpec,
    pub train: Vec<Window>,
    pub valid: Vec<Window>,
    pub test: Vec<Window>,
    pub bounds: FeatureBounds,
}

impl Prepared {
    /// Price periods forecast by the test windows' first horizon step.
    pub fn test_prices(&self) -> Vec<PricePoint> {
        self.test.iter().map(|w| self.prices.points()[w.origin]).collect()
    }

    pub fn test_returns(&self) -> Vec<f64> {
        self.test_prices()
            .iter()
            .map(PricePoint::intraday_return)
            .collect()
    }

    pub fn timestamp(&self, index: usize) -> Timestamp {
        self.prices.points()[index].timestamp
    }
}

/// Loads or generates the raw series for a resolved config.
pub fn load_data(cfg: &RunConfig) -> Result<(PriceSeries, FeatureMatrix)> {
    match &cfg.data {
        DataSource::Synthetic(spec) => {
            let d = generate_synthetic(spec)?;
            Ok((d.prices, d.features))
        }
        DataSource::Csv(src) => load_dataset(&src.prices, &src.features, src.frequency),
    }
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let (prices, raw) = load_data(cfg).map_err(|e| e.in_stage("load"))?;
    transform(cfg, prices, raw).map_err(|e| e.in_stage("transform"))
}

fn transform(cfg: &RunConfig, prices: PriceSeries, raw: FeatureMatrix) -> Result<Prepared> {
    if raw.len() != prices.len() {
        return Err(Error::Shape(format!(
            "{} price rows vs {} feature rows",
            prices.len(),
            raw.len()
        )));
    }
    let window = cfg.window_spec()?;
    let target = log_diff_transform(&prices)?;
    let split = apply_split(prices.len(), prices.frequency(), &window)?;
    let (standardized, stats) = standardize_features(&raw, &split)?;
    let features = lag_covariates(&standardized, cfg.window.lag)?;
    let build = |r: std::ops::Range<usize>| -> Result<Vec<Window>> {
        Ok(make_windows(&target, &features, &window, r)?.windows)
    };
    let train = build(split.train.clone())?;
    let valid = build(split.valid.clone())?;
    let test = build(split.test.clone())?;
    let mut bounds = FeatureBounds::from_stats(&stats);
    if let Some([lo, hi]) = cfg.stress.bounds {
        bounds = bounds.with_global_override(lo, hi)?;
    }
    Ok(Prepared {
        prices,
        features,
        stats,
        target,
        split,
        window,
        train,
        valid,
        test,
        bounds,
    })
}

pub fn train_model(cfg: &RunConfig, data: &Prepared) -> Result<(Forecaster, TrainingLog)> {
    let (params, log) = train(&data.train, &data.valid, &cfg.train).map_err(|e| e.in_stage("train"))?;
    Ok((Forecaster::new(params, data.window.horizon), log))
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyOutcome {
    pub strategy: String,
    pub compounded_return_pct: f64,
    pub pct_traded: f64,
    pub mean_traded_return_pct: Option<f64>,
    pub traded: usize,
}

impl From<&BacktestReport> for StrategyOutcome {
    fn from(r: &BacktestReport) -> Self {
        Self {
            strategy: r.strategy.clone(),
            compounded_return_pct: r.compounded_return_pct,
            pct_traded: r.pct_traded,
            mean_traded_return_pct: r.mean_traded_return_pct,
            traded: r.traded_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSummary {
    pub windows: usize,
    pub mean_l1: f64,
    pub mean_linf: f64,
    pub mean_modified: f64,
    pub terminated_early: usize,
    /// Share of applied L1 mass per feature, in feature order.
    pub feature_share: Vec<f64>,
}

impl PerturbationSummary {
    fn from_results(results: &[StressResult], n_features: usize) -> Self {
        let n = results.len().max(1) as f64;
        let mut mass = vec![0.0; n_features];
        let (mut l1, mut linf, mut modified, mut early) = (0.0, 0.0, 0.0, 0);
        for r in results {
            let norms = perturbation_norms(r);
            l1 += norms.l1;
            linf += norms.linf;
            modified += norms.modified as f64;
            early += usize::from(r.terminated_early);
            for (m, v) in mass.iter_mut().zip(crate::stress::feature_l1(r)) {
                *m += v;
            }
        }
        let total: f64 = mass.iter().sum();
        let feature_share = mass
            .iter()
            .map(|m| if total > 0.0 { m / total } else { 0.0 })
            .collect();
        Self {
            windows: results.len(),
            mean_l1: l1 / n,
            mean_linf: linf / n,
            mean_modified: modified / n,
            terminated_early: early,
            feature_share,
        }
    }
}

/// Metrics and strategy outcomes for one setting: the unperturbed
/// forecasts or one perturbation spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingReport {
    pub setting: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spec: Option<PerturbationSpec>,
    pub metrics: MetricReport,
    pub strategies: Vec<StrategyOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationSummary>,
}

pub fn setting_name(spec: Option<&PerturbationSpec>) -> String {
    match spec {
        None => "regular".into(),
        Some(s) => format!("{}-{}-eps{}", s.param, s.direction, s.epsilon),
    }
}

/// Full output of one setting, before serialization.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: SettingReport,
    pub backtests: Vec<BacktestReport>,
    pub stress: Vec<StressResult>,
}

/// Evaluates forecasts over the test windows of prepared data.
pub struct Evaluator<'a> {
    pub model: &'a Forecaster,
    pub data: &'a Prepared,
    pub strategies: Vec<StrategySpec>,
    pub crps_samples: usize,
    pub sample_seed: u64,
    truths: Vec<f64>,
    prices: Vec<PricePoint>,
}

impl<'a> Evaluator<'a> {
    pub fn new(cfg: &RunConfig, model: &'a Forecaster, data: &'a Prepared) -> Result<Self> {
        if data.test.is_empty() {
            return Err(Error::Data("no test windows".into()));
        }
        Ok(Self {
            model,
            data,
            strategies: cfg.strategies.specs()?,
            crps_samples: cfg.metrics.crps_samples,
            sample_seed: cfg.sample_seed(),
            truths: data.test_returns(),
            prices: data.test_prices(),
        })
    }

    pub fn regular(&self) -> Result<Evaluation> {
        let covs: Vec<&Matrix> = self.data.test.iter().map(|w| &w.covariates).collect();
        let dists = self.forecasts(&covs).map_err(|e| e.in_stage("forecast"))?;
        self.evaluate(None, &covs, &dists, Vec::new())
    }

    pub fn stressed(&self, spec: &PerturbationSpec) -> Result<Evaluation> {
        let results = self
            .data
            .test
            .par_iter()
            .map(|w| perturb(self.model, &w.z_history, &w.covariates, spec, &self.data.bounds))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_stage("stress"))?;
        let owned: Vec<Matrix> = results.iter().map(|r| r.perturbed.clone()).collect();
        let covs: Vec<&Matrix> = owned.iter().collect();
        let dists: Vec<ForecastDistribution> = results.iter().map(|r| r.perturbed_forecast.clone()).collect();
        self.evaluate(Some(spec), &covs, &dists, results)
    }

    fn forecasts(&self, covs: &[&Matrix]) -> Result<Vec<ForecastDistribution>> {
        self.data
            .test
            .par_iter()
            .zip(covs.par_iter())
            .map(|(w, x)| self.model.forecast(&w.z_history, x))
            .collect()
    }

    fn evaluate(
        &self,
        spec: Option<&PerturbationSpec>,
        covs: &[&Matrix],
        dists: &[ForecastDistribution],
        stress: Vec<StressResult>,
    ) -> Result<Evaluation> {
        let forecasts: Vec<f64> = dists.iter().map(|d| d.steps[0].mu.exp_m1()).collect();
        // Common random numbers: window i uses the same stream in every setting.
        let samples = self
            .data
            .test
            .par_iter()
            .zip(covs.par_iter())
            .enumerate()
            .map(|(i, (w, x))| {
                let seed = derive_seed(self.sample_seed, i as u64);
                let paths = sample_paths(&self.model.params, &w.z_history, x, 1, self.crps_samples, seed)?;
                Ok(paths.into_iter().map(|p| p[0].exp_m1()).collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()
            .map_err(|e| e.in_stage("forecast"))?;
        let metrics =
            MetricReport::compute(&self.truths, &forecasts, &samples).map_err(|e| e.in_stage("metrics"))?;
        let backtests = self
            .strategies
            .iter()
            .map(|s| backtest(&forecasts, &self.prices, s))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_stage("backtest"))?;
        let perturbation =
            spec.map(|_| PerturbationSummary::from_results(&stress, self.model.params.n_features()));
        Ok(Evaluation {
            report: SettingReport {
                setting: setting_name(spec),
                spec: spec.copied(),
                metrics,
                strategies: backtests.iter().map(StrategyOutcome::from).collect(),
                perturbation,
            },
            backtests,
            stress,
        })
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    /// Wall-clock time of the run; the only non-deterministic field.
    pub generated_at: String,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub frequency: Frequency,
    pub length: usize,
    pub feature_names: Vec<String>,
    pub zero_variance_features: Vec<String>,
    pub split: SplitSpec,
    pub train_windows: usize,
    pub valid_windows: usize,
    pub test_windows: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Regular,
    Synthetic,
}

/// One row of the regular vs. perturbed comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub setting: Setting,
    pub param: Option<DistParam>,
    pub direction: Option<Direction>,
    pub epsilon: Option<f64>,
    pub rmse: f64,
    pub mape: Option<f64>,
    pub crps: f64,
    pub accuracy: f64,
    pub baseline: f64,
    pub returns: Vec<StrategyReturn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReturn {
    pub strategy: String,
    pub compounded_return_pct: f64,
}

impl TableRow {
    fn from_setting(r: &SettingReport) -> Self {
        Self {
            setting: if r.spec.is_some() {
                Setting::Synthetic
            } else {
                Setting::Regular
            },
            param: r.spec.map(|s| s.param),
            direction: r.spec.map(|s| s.direction),
            epsilon: r.spec.map(|s| s.epsilon),
            rmse: r.metrics.rmse,
            mape: r.metrics.mape.value,
            crps: r.metrics.crps,
            accuracy: r.metrics.accuracy,
            baseline: r.metrics.baseline,
            returns: r
                .strategies
                .iter()
                .map(|s| StrategyReturn {
                    strategy: s.strategy.clone(),
                    compounded_return_pct: s.compounded_return_pct,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub metadata: Metadata,
    pub config: RunConfig,
    pub dataset: DatasetInfo,
    pub training: TrainingLog,
    pub passive_return_pct: f64,
    pub regular: SettingReport,
    pub stress: Vec<SettingReport>,
    pub table: Vec<TableRow>,
}

impl Summary {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStress {
    pub origin: usize,
    pub timestamp: Timestamp,
    pub report: StressReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressSet {
    pub setting: String,
    pub windows: Vec<WindowStress>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub setting: String,
    pub report: BacktestReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeEntry {
    pub setting: String,
    pub strategy: String,
    pub kde: Kde,
}

/// Everything a command may write. Empty parts produce no files.
#[derive(Debug, Clone, Default)]
pub struct Reports {
    pub summary: Option<Summary>,
    pub checkpoint: Option<ModelParams>,
    pub ledgers: Vec<LedgerEntry>,
    pub stress: Vec<StressSet>,
    pub kde: Vec<KdeEntry>,
    pub feature_names: Vec<String>,
}

impl Reports {
    /// Collects ledgers, stress logs and KDE curves from evaluations.
    pub fn add_evaluation(&mut self, data: &Prepared, eval: &Evaluation, kde_grid: usize) -> Result<()> {
        let setting = &eval.report.setting;
        for b in &eval.backtests {
            self.ledgers.push(LedgerEntry {
                setting: setting.clone(),
                report: b.clone(),
            });
            if b.traded_returns.len() >= 2 {
                self.kde.push(KdeEntry {
                    setting: setting.clone(),
                    strategy: b.strategy.clone(),
                    kde: return_kde(&b.traded_returns, kde_grid)?,
                });
            }
        }
        if !eval.stress.is_empty() {
            self.stress.push(StressSet {
                setting: setting.clone(),
                windows: data
                    .test
                    .iter()
                    .zip(&eval.stress)
                    .map(|(w, r)| WindowStress {
                        origin: w.origin,
                        timestamp: data.timestamp(w.origin),
                        report: r.report(),
                    })
                    .collect(),
            });
        }
        Ok(())
    }
}

/// Computes every report for a config without touching the filesystem.
pub fn compute_reports(cfg: &RunConfig) -> Result<Reports> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let cfg = cfg.resolved();
    let data = prepare(&cfg)?;
    let (model, training) = train_model(&cfg, &data)?;
    let eval = Evaluator::new(&cfg, &model, &data).map_err(|e| e.in_stage("forecast"))?;
    let kde_grid = cfg.metrics.kde_grid;

    let mut reports = Reports {
        feature_names: data.features.names().to_vec(),
        ..Default::default()
    };
    let regular = eval.regular()?;
    reports
        .add_evaluation(&data, &regular, kde_grid)
        .map_err(|e| e.in_stage("metrics"))?;
    let mut stress = Vec::new();
    for spec in cfg.stress.specs() {
        let e = eval.stressed(&spec)?;
        reports
            .add_evaluation(&data, &e, kde_grid)
            .map_err(|e| e.in_stage("metrics"))?;
        stress.push(e.report);
    }

    let table_eps = cfg.stress.table_epsilon();
    let mut table = vec![TableRow::from_setting(&regular.report)];
    table.extend(
        stress
            .iter()
            .filter(|r| r.spec.map(|s| s.epsilon) == table_eps)
            .map(TableRow::from_setting),
    );

    let names = data.features.names();
    reports.summary = Some(Summary {
        schema_version: SCHEMA_VERSION,
        metadata: Metadata {
            generated_at: chrono::Utc::now().to_rfc3339(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        },
        dataset: DatasetInfo {
            frequency: data.prices.frequency(),
            length: data.prices.len(),
            feature_names: names.to_vec(),
            zero_variance_features: names
                .iter()
                .zip(&data.stats.zero_variance)
                .filter(|(_, z)| **z)
                .map(|(n, _)| n.clone())
                .collect(),
            split: data.split.clone(),
            train_windows: data.train.len(),
            valid_windows: data.valid.len(),
            test_windows: data.test.len(),
        },
        training,
        passive_return_pct: passive_return(&data.test_prices()).map_err(|e| e.in_stage("backtest"))?,
        regular: regular.report,
        stress,
        table,
        config: cfg,
    });
    reports.checkpoint = Some(model.params);
    Ok(reports)
}

/// Runs the whole pipeline and writes its reports to `cfg.output_dir`.
pub fn run_pipeline(cfg: &RunConfig) -> Result<Reports> {
    let out = cfg
        .output_dir
        .clone()
        .ok_or_else(|| Error::Config("output_dir is not set".into()).in_stage("config"))?;
    let reports = compute_reports(cfg)?;
    emit_report(&reports, &out).map_err(|e| e.in_stage("emit"))?;
    Ok(reports)
}

pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "model.json";
pub const STRESS_FILE: &str = "stress_reports.json";
pub const KDE_FILE: &str = "kde.csv";
pub const PERTURBATION_LOG_FILE: &str = "perturbation_log.csv";
pub const LEDGER_DIR: &str = "ledgers";

/// Records created paths so a failed emission can remove them.
struct Emitter {
    created: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
}

impl Emitter {
    fn dir(&mut self, path: &Path) -> Result<()> {
        if !path.exists() {
            fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
            self.dirs.push(path.to_path_buf());
        }
        Ok(())
    }

    fn file(&mut self, path: PathBuf, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.created.push(path.clone());
        fs::write(&path, buf).map_err(|e| Error::io(&path, e))
    }

    fn rollback(self) {
        for p in self.created.iter().rev() {
            let _ = fs::remove_file(p);
        }
        for d in self.dirs.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}

fn json<T: Serialize>(value: &T) -> impl FnOnce(&mut Vec<u8>) -> Result<()> + '_ {
    move |buf| {
        serde_json::to_writer_pretty(&mut *buf, value)
            .map_err(|e| Error::Data(format!("JSON encoding failed: {e}")))?;
        buf.push(b'\n');
        Ok(())
    }
}

/// Writes reports under `dir` and returns the written paths. On failure
/// every file and directory created by this call is removed.
pub fn emit_report(reports: &Reports, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut em = Emitter {
        created: Vec::new(),
        dirs: Vec::new(),
    };
    match emit_into(&mut em, reports, dir) {
        Ok(()) => Ok(em.created),
        Err(e) => {
            em.rollback();
            Err(e)
        }
    }
}

fn emit_into(em: &mut Emitter, reports: &Reports, dir: &Path) -> Result<()> {
    em.dir(dir)?;
    if let Some(summary) = &reports.summary {
        em.file(dir.join(SUMMARY_FILE), json(summary))?;
    }
    if let Some(params) = &reports.checkpoint {
        em.file(dir.join(CHECKPOINT_FILE), |buf| {
            buf.extend_from_slice(params.to_checkpoint_string()?.as_bytes());
            Ok(())
        })?;
    }
    if !reports.ledgers.is_empty() {
        let ledger_dir = dir.join(LEDGER_DIR);
        em.dir(&ledger_dir)?;
        for entry in &reports.ledgers {
            let name = format!("{}__{}.csv", entry.setting, entry.report.strategy);
            em.file(ledger_dir.join(name), |buf| write_ledger(&entry.report, buf))?;
        }
    }
    if !reports.kde.is_empty() {
        em.file(dir.join(KDE_FILE), |buf| write_kde(&reports.kde, buf))?;
    }
    if !reports.stress.is_empty() {
        em.file(dir.join(STRESS_FILE), json(&reports.stress))?;
        em.file(dir.join(PERTURBATION_LOG_FILE), |buf| {
            write_perturbation_log(&reports.stress, &reports.feature_names, buf)
        })?;
    }
    Ok(())
}

fn csv_failure(e: impl std::fmt::Display) -> Error {
    Error::Data(format!("CSV encoding failed: {e}"))
}

pub fn write_kde(entries: &[KdeEntry], out: &mut Vec<u8>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["setting", "strategy", "kind", "bandwidth", "x", "density"])
        .map_err(csv_failure)?;
    for e in entries {
        match &e.kde {
            Kde::Curve {
                bandwidth,
                grid,
                density,
            } => {
                for (x, d) in grid.iter().zip(density) {
                    w.write_record([
                        e.setting.as_str(),
                        e.strategy.as_str(),
                        "curve",
                        &bandwidth.to_string(),
                        &x.to_string(),
                        &d.to_string(),
                    ])
                    .map_err(csv_failure)?;
                }
            }
            Kde::PointMass { at } => {
                w.write_record([
                    e.setting.as_str(),
                    e.strategy.as_str(),
                    "point_mass",
                    "",
                    &at.to_string(),
                    "",
                ])
                .map_err(csv_failure)?;
            }
        }
    }
    w.flush().map_err(csv_failure)
}

pub fn write_perturbation_log(sets: &[StressSet], feature_names: &[String], out: &mut Vec<u8>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "setting",
        "window_origin",
        "timestamp",
        "iteration",
        "horizon_step",
        "history_step",
        "feature",
        "feature_name",
        "delta",
    ])
    .map_err(csv_failure)?;
    for set in sets {
        for ws in &set.windows {
            for step in &ws.report.log {
                let name = feature_names.get(step.feature).map_or("", String::as_str);
                w.write_record([
                    set.setting.clone(),
                    ws.origin.to_string(),
                    ws.timestamp.to_string(),
                    step.iteration.to_string(),
                    step.horizon_step.to_string(),
                    step.history_step.to_string(),
                    step.feature.to_string(),
                    name.to_string(),
                    step.delta.to_string(),
                ])
                .map_err(csv_failure)?;
            }
        }
    }
    w.flush().map_err(csv_failure)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut buf = Vec::new();
    json(value)(&mut buf)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Generates synthetic data from a config and writes `prices.csv` and
/// `features.csv` under `dir`.
pub fn simulate_to_dir(cfg: &RunConfig, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let cfg = cfg.resolved();
    let DataSource::Synthetic(spec) = &cfg.data else {
        return Err(Error::Config(
            "simulate-data needs a synthetic data source".into(),
        ));
    };
    let d = generate_synthetic(spec)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (p, f) = (dir.join("prices.csv"), dir.join("features.csv"));
    let mut pbuf = Vec::new();
    write_prices(&d.prices, &mut pbuf)?;
    let mut fbuf = Vec::new();
    write_features(&d.features, &mut fbuf)?;
    fs::write(&p, pbuf).map_err(|e| Error::io(&p, e))?;
    fs::write(&f, fbuf).map_err(|e| Error::io(&f, e))?;
    Ok((p, f))
}
