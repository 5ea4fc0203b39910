//! Gradient-guided, bounds-respecting perturbation of input covariates.
//!
//! [`perturb`] runs `R` passes over every (horizon step `t`, history step
//! `s`) cell. At each cell it ranks features by `|∂Θ[p,t]/∂X̂[i,s]|` and
//! moves the first feature whose step stays inside its historical range by
//! `d · sgn(gradient) · ε`. Gradients are recomputed on `X̂` after every
//! applied step. A pass that applies nothing ends the run early.
//!
//! All quantities are in standardized feature units.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecaster::{DistParam, ForecastDistribution, Forecaster, StudentTParams};
use crate::matrix::Matrix;
use crate::series::{FeatureStats, Window};

/// A model whose forecast parameters can be differentiated with respect to
/// its covariate window.
pub trait ForecastModel: Sync {
    fn horizon(&self) -> usize;

    fn n_features(&self) -> usize;

    fn forecast(&self, z_history: &[f64], covariates: &Matrix) -> Result<ForecastDistribution>;

    /// Feature-major `N x k` matrix of `∂Θ[param, step] / ∂X[i, s]`.
    fn input_gradient(
        &self,
        z_history: &[f64],
        covariates: &Matrix,
        param: DistParam,
        step: usize,
    ) -> Result<Matrix>;
}

impl ForecastModel for Forecaster {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn n_features(&self) -> usize {
        self.params.n_features()
    }

    fn forecast(&self, z_history: &[f64], covariates: &Matrix) -> Result<ForecastDistribution> {
        Forecaster::forecast(self, z_history, covariates)
    }

    fn input_gradient(
        &self,
        z_history: &[f64],
        covariates: &Matrix,
        param: DistParam,
        step: usize,
    ) -> Result<Matrix> {
        Forecaster::input_gradient(self, z_history, covariates, param, step)
    }
}

/// Model whose location is linear in the covariates,
/// `mu_t = bias + Σ w[i,s] X[i,s]` at every horizon step, with constant
/// scale and degrees of freedom. Gradients are exact.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSurrogate {
    pub weights: Matrix,
    pub bias: f64,
    pub sigma: f64,
    pub nu: f64,
    pub horizon: usize,
}

impl LinearSurrogate {
    pub fn new(weights: Matrix, horizon: usize) -> Self {
        Self {
            weights,
            bias: 0.0,
            sigma: 1.0,
            nu: 5.0,
            horizon,
        }
    }

    pub fn mu(&self, covariates: &Matrix) -> f64 {
        self.bias
            + self
                .weights
                .iter()
                .zip(covariates.iter())
                .map(|(w, x)| w * x)
                .sum::<f64>()
    }
}

impl ForecastModel for LinearSurrogate {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn n_features(&self) -> usize {
        self.weights.rows()
    }

    fn forecast(&self, _z: &[f64], covariates: &Matrix) -> Result<ForecastDistribution> {
        if !covariates.same_shape(&self.weights) {
            return Err(Error::Shape("covariates do not match surrogate weights".into()));
        }
        let step = StudentTParams::new(self.mu(covariates), self.sigma, self.nu)?;
        Ok(ForecastDistribution {
            steps: vec![step; self.horizon],
        })
    }

    fn input_gradient(
        &self,
        _z: &[f64],
        covariates: &Matrix,
        param: DistParam,
        _step: usize,
    ) -> Result<Matrix> {
        if !covariates.same_shape(&self.weights) {
            return Err(Error::Shape("covariates do not match surrogate weights".into()));
        }
        Ok(match param {
            DistParam::Mu => self.weights.clone(),
            _ => Matrix::zeros(self.weights.rows(), self.weights.cols()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Up, Direction::Down];

    pub fn sign(&self) -> f64 {
        match self {
            Direction::Up => 1.0,
            Direction::Down => -1.0,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "up" => Ok(Direction::Up),
            "down" => Ok(Direction::Down),
            other => Err(Error::Config(format!(
                "unknown direction `{other}` (expected up or down)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub param: DistParam,
    pub direction: Direction,
    /// Per-step magnitude in standardized units.
    pub epsilon: f64,
    /// Number of passes `R`.
    pub iterations: usize,
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        Ok(())
    }

    /// Largest possible change of any single entry, `R · horizon · ε`.
    pub fn entry_budget(&self, horizon: usize) -> f64 {
        self.iterations as f64 * horizon as f64 * self.epsilon
    }
}

/// Closed per-feature intervals in standardized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Features never chosen for perturbation (zero-variance features).
    pub excluded: Vec<bool>,
}

impl FeatureBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Shape("bounds length mismatch".into()));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(Error::Config(format!(
                "feature {i}: lower bound {} exceeds upper bound {}",
                lower[i], upper[i]
            )));
        }
        let n = lower.len();
        Ok(Self {
            lower,
            upper,
            excluded: vec![false; n],
        })
    }

    pub fn uniform(n: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; n], vec![upper; n])
    }

    /// Training-range `[min, max]` bounds; zero-variance features excluded.
    pub fn from_stats(stats: &FeatureStats) -> Self {
        let (lower, upper) = stats.standardized_bounds().into_iter().unzip();
        Self {
            lower,
            upper,
            excluded: stats.zero_variance.clone(),
        }
    }

    /// Replaces every feature's interval with `[lower, upper]`.
    pub fn with_global_override(mut self, lower: f64, upper: f64) -> Result<Self> {
        if !(lower <= upper) {
            return Err(Error::Config(format!(
                "global override lower {lower} exceeds upper {upper}"
            )));
        }
        self.lower.iter_mut().for_each(|v| *v = lower);
        self.upper.iter_mut().for_each(|v| *v = upper);
        Ok(self)
    }

    pub fn n_features(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, feature: usize, value: f64) -> bool {
        self.lower[feature] <= value && value <= self.upper[feature]
    }
}

/// Whether moving feature `feature` at history step `history_step` to
/// `proposed` keeps it inside its closed historical range.
pub fn checkbounds(feature: usize, history_step: usize, proposed: f64, bounds: &FeatureBounds) -> bool {
    let _ = history_step;
    bounds.contains(feature, proposed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationStep {
    pub iteration: usize,
    pub horizon_step: usize,
    pub history_step: usize,
    pub feature: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressResult {
    pub spec: PerturbationSpec,
    pub original: Matrix,
    pub perturbed: Matrix,
    pub forecast: ForecastDistribution,
    pub perturbed_forecast: ForecastDistribution,
    pub log: Vec<PerturbationStep>,
    pub terminated_early: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationNorms {
    pub l1: f64,
    pub linf: f64,
    pub modified: usize,
}

/// Norms of `X̂ - X`.
pub fn perturbation_norms(result: &StressResult) -> PerturbationNorms {
    let mut norms = PerturbationNorms {
        l1: 0.0,
        linf: 0.0,
        modified: 0,
    };
    for (a, b) in result.perturbed.iter().zip(result.original.iter()) {
        let d = (a - b).abs();
        if d != 0.0 {
            norms.l1 += d;
            norms.linf = norms.linf.max(d);
            norms.modified += 1;
        }
    }
    norms
}

/// Per-feature L1 mass of `X̂ - X`.
pub fn feature_l1(result: &StressResult) -> Vec<f64> {
    (0..result.original.rows())
        .map(|i| {
            result
                .perturbed
                .row(i)
                .iter()
                .zip(result.original.row(i))
                .map(|(a, b)| (a - b).abs())
                .sum()
        })
        .collect()
}

/// Feature indices at history step `s`, ordered by descending gradient
/// magnitude (ties to the lower index). Excluded and zero-gradient
/// features are dropped: they have no direction to move in.
fn rank_features(grad: &Matrix, s: usize, bounds: &FeatureBounds) -> Vec<usize> {
    let mut order: Vec<usize> = (0..grad.rows())
        .filter(|&i| !bounds.excluded[i] && grad.get(i, s) != 0.0)
        .collect();
    order.sort_by(|&a, &b| {
        grad.get(b, s)
            .abs()
            .total_cmp(&grad.get(a, s).abs())
            .then(a.cmp(&b))
    });
    order
}

/// Perturbs `covariates` to move forecast parameter `spec.param` in
/// direction `spec.direction`.
pub fn perturb<M: ForecastModel + ?Sized>(
    model: &M,
    z_history: &[f64],
    covariates: &Matrix,
    spec: &PerturbationSpec,
    bounds: &FeatureBounds,
) -> Result<StressResult> {
    spec.validate()?;
    check_shapes(model, covariates, bounds)?;
    let horizon = model.horizon();
    let k = covariates.cols();
    let forecast = model.forecast(z_history, covariates)?;
    let mut x_hat = covariates.clone();
    let mut log = Vec::new();
    let mut terminated_early = false;
    let sign_d = spec.direction.sign();

    for j in 0..spec.iterations {
        let mut applied = 0usize;
        for t in 0..horizon {
            let mut grad: Option<Matrix> = None;
            for s in 0..k {
                let g = match &grad {
                    Some(g) => g,
                    None => {
                        let g = model.input_gradient(z_history, &x_hat, spec.param, t)?;
                        if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                            return Err(Error::NonFinite(format!(
                                "gradient of {} at horizon step {t}, feature {}, history step {}",
                                spec.param,
                                pos / k,
                                pos % k
                            )));
                        }
                        grad.insert(g)
                    }
                };
                let chosen = rank_features(g, s, bounds).into_iter().find_map(|i| {
                    let delta = sign_d * g.get(i, s).signum() * spec.epsilon;
                    let proposed = x_hat.get(i, s) + delta;
                    checkbounds(i, s, proposed, bounds).then_some((i, delta, proposed))
                });
                if let Some((i, delta, proposed)) = chosen {
                    x_hat.set(i, s, proposed);
                    log.push(PerturbationStep {
                        iteration: j,
                        horizon_step: t,
                        history_step: s,
                        feature: i,
                        delta,
                    });
                    applied += 1;
                    grad = None;
                }
            }
        }
        if applied == 0 {
            terminated_early = true;
            break;
        }
    }

    let perturbed_forecast = model.forecast(z_history, &x_hat)?;
    Ok(StressResult {
        spec: *spec,
        original: covariates.clone(),
        perturbed: x_hat,
        forecast,
        perturbed_forecast,
        log,
        terminated_early,
    })
}

fn check_shapes<M: ForecastModel + ?Sized>(
    model: &M,
    covariates: &Matrix,
    bounds: &FeatureBounds,
) -> Result<()> {
    if covariates.rows() != model.n_features() {
        return Err(Error::Shape(format!(
            "window has {} features, model expects {}",
            covariates.rows(),
            model.n_features()
        )));
    }
    if bounds.n_features() != covariates.rows() || bounds.excluded.len() != covariates.rows() {
        return Err(Error::Shape(format!(
            "bounds cover {} features, window has {}",
            bounds.n_features(),
            covariates.rows()
        )));
    }
    Ok(())
}

/// Results of one ε value across all windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub epsilon: f64,
    pub results: Vec<StressResult>,
}

/// Runs [`perturb`] for every window and every ε. `ε = 0` yields the
/// unperturbed forecast. The template's own ε is ignored.
pub fn sweep<M: ForecastModel + ?Sized>(
    model: &M,
    windows: &[Window],
    template: &PerturbationSpec,
    bounds: &FeatureBounds,
    epsilons: &[f64],
) -> Result<Vec<SweepEntry>> {
    if epsilons.is_empty() {
        return Err(Error::Config("epsilon list is empty".into()));
    }
    if epsilons.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
        return Err(Error::Config("epsilons must be finite and non-negative".into()));
    }
    if epsilons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("epsilon list must be strictly ascending".into()));
    }
    epsilons
        .iter()
        .map(|&epsilon| {
            let spec = PerturbationSpec { epsilon, ..*template };
            let results = windows
                .par_iter()
                .map(|w| {
                    if epsilon == 0.0 {
                        unperturbed(model, w, spec, bounds)
                    } else {
                        perturb(model, &w.z_history, &w.covariates, &spec, bounds)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SweepEntry { epsilon, results })
        })
        .collect()
}

fn unperturbed<M: ForecastModel + ?Sized>(
    model: &M,
    window: &Window,
    spec: PerturbationSpec,
    bounds: &FeatureBounds,
) -> Result<StressResult> {
    check_shapes(model, &window.covariates, bounds)?;
    let forecast = model.forecast(&window.z_history, &window.covariates)?;
    Ok(StressResult {
        spec,
        original: window.covariates.clone(),
        perturbed: window.covariates.clone(),
        perturbed_forecast: forecast.clone(),
        forecast,
        log: Vec::new(),
        terminated_early: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonComparison {
    pub step: usize,
    pub original: StudentTParams,
    pub perturbed: StudentTParams,
}

/// Serializable summary of one [`StressResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressReport {
    pub spec: PerturbationSpec,
    pub norms: PerturbationNorms,
    pub terminated_early: bool,
    pub horizon: Vec<HorizonComparison>,
    pub log: Vec<PerturbationStep>,
}

impl StressResult {
    pub fn report(&self) -> StressReport {
        StressReport {
            spec: self.spec,
            norms: perturbation_norms(self),
            terminated_early: self.terminated_early,
            horizon: self
                .forecast
                .steps
                .iter()
                .zip(&self.perturbed_forecast.steps)
                .enumerate()
                .map(|(step, (&original, &perturbed))| HorizonComparison {
                    step,
                    original,
                    perturbed,
                })
                .collect(),
            log: self.log.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(direction: Direction, epsilon: f64, iterations: usize) -> PerturbationSpec {
        PerturbationSpec {
            param: DistParam::Mu,
            direction,
            epsilon,
            iterations,
        }
    }

    fn surrogate() -> LinearSurrogate {
        let w = Matrix::from_rows(&[vec![0.5, 1.0, 0.2], vec![2.0, 0.1, 0.3]]).unwrap();
        LinearSurrogate::new(w, 2)
    }

    #[test]
    fn checkbounds_closed_interval() {
        let b = FeatureBounds::uniform(2, 0.0, 1.0).unwrap();
        assert!(checkbounds(0, 0, 0.5, &b));
        assert!(!checkbounds(0, 0, 1.0 + 1e-9, &b));
        assert!(checkbounds(1, 3, 1.0, &b));
        assert!(checkbounds(1, 3, 0.0, &b));
        assert!(!checkbounds(1, 3, -1e-12, &b));
        assert!(FeatureBounds::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn linear_surrogate_steps_follow_weights() {
        let m = surrogate();
        let x = Matrix::zeros(2, 3);
        let b = FeatureBounds::uniform(2, -5.0, 5.0).unwrap();
        let eps = 0.01;
        let r = perturb(&m, &[0.0; 3], &x, &spec(Direction::Up, eps, 1), &b).unwrap();
        // horizon 2, history 3: six cells, each applied
        assert_eq!(r.log.len(), 6);
        let mut mu = r.forecast.steps[0].mu;
        let mut x_run = x.clone();
        for step in &r.log {
            let w = m.weights.get(step.feature, step.history_step);
            let before = m.mu(&x_run);
            x_run.set(
                step.feature,
                step.history_step,
                x_run.get(step.feature, step.history_step) + step.delta,
            );
            assert!((m.mu(&x_run) - before - eps * w).abs() < 1e-15);
            mu += eps * w;
        }
        assert!((r.perturbed_forecast.steps[0].mu - mu).abs() < 1e-12);
        assert!(r.perturbed_forecast.steps[0].mu > r.forecast.steps[0].mu);
        // per-column argmax: feature 1, then 0, then 1
        let chosen: Vec<usize> = r.log.iter().take(3).map(|s| s.feature).collect();
        assert_eq!(chosen, vec![1, 0, 1]);
    }

    #[test]
    fn up_and_down_bracket_original() {
        let m = surrogate();
        let x = Matrix::from_rows(&[vec![0.1, -0.2, 0.3], vec![0.0, 0.4, -0.1]]).unwrap();
        let b = FeatureBounds::uniform(2, -1.0, 1.0).unwrap();
        let up = perturb(&m, &[0.0; 3], &x, &spec(Direction::Up, 0.05, 3), &b).unwrap();
        let down = perturb(&m, &[0.0; 3], &x, &spec(Direction::Down, 0.05, 3), &b).unwrap();
        let mu = up.forecast.steps[0].mu;
        assert!(up.perturbed_forecast.steps[0].mu >= mu);
        assert!(mu >= down.perturbed_forecast.steps[0].mu);
    }

    #[test]
    fn blocked_everywhere_terminates_early() {
        let m = surrogate();
        // all features sit at the upper bound; the up direction pushes further up
        let x = Matrix::from_fn(2, 3, |_, _| 1.0);
        let b = FeatureBounds::uniform(2, 0.0, 1.0).unwrap();
        let r = perturb(&m, &[0.0; 3], &x, &spec(Direction::Up, 2.0, 4), &b).unwrap();
        assert!(r.terminated_early);
        assert_eq!(r.perturbed, x);
        assert!(r.log.is_empty());
        assert_eq!(
            perturbation_norms(&r),
            PerturbationNorms {
                l1: 0.0,
                linf: 0.0,
                modified: 0
            }
        );
    }

    #[test]
    fn blocked_feature_falls_back_to_next() {
        let m = surrogate();
        let mut x = Matrix::zeros(2, 3);
        // feature 1 has the largest |gradient| at s=0 but is pinned at its bound
        x.set(1, 0, 1.0);
        let b = FeatureBounds::uniform(2, -1.0, 1.0).unwrap();
        let r = perturb(&m, &[0.0; 3], &x, &spec(Direction::Up, 0.1, 1), &b).unwrap();
        let first = r.log[0];
        assert_eq!((first.history_step, first.feature), (0, 0));
    }

    #[test]
    fn excluded_features_are_never_chosen() {
        let m = surrogate();
        let x = Matrix::zeros(2, 3);
        let mut b = FeatureBounds::uniform(2, -1.0, 1.0).unwrap();
        b.excluded[1] = true;
        let r = perturb(&m, &[0.0; 3], &x, &spec(Direction::Down, 0.1, 2), &b).unwrap();
        assert!(!r.log.is_empty());
        assert!(r.log.iter().all(|s| s.feature == 0));
    }

    #[test]
    fn norms_examples() {
        let m = LinearSurrogate::new(Matrix::from_rows(&[vec![1.0]]).unwrap(), 1);
        let x = Matrix::zeros(1, 1);
        let b = FeatureBounds::uniform(1, -1.0, 1.0).unwrap();
        let r = perturb(&m, &[0.0], &x, &spec(Direction::Up, 0.01, 1), &b).unwrap();
        let n = perturbation_norms(&r);
        assert_eq!(n.modified, 1);
        assert!((n.l1 - 0.01).abs() < 1e-15 && (n.linf - 0.01).abs() < 1e-15);

        let r = perturb(&m, &[0.0], &x, &spec(Direction::Up, 0.01, 2), &b).unwrap();
        let n = perturbation_norms(&r);
        assert!((n.linf - 0.02).abs() < 1e-15);
        assert_eq!(n.modified, 1);
    }

    #[test]
    fn zero_gradient_model_applies_nothing() {
        let m = LinearSurrogate::new(Matrix::zeros(2, 3), 1);
        let b = FeatureBounds::uniform(2, -1.0, 1.0).unwrap();
        let r = perturb(
            &m,
            &[0.0; 3],
            &Matrix::zeros(2, 3),
            &spec(Direction::Up, 0.1, 3),
            &b,
        )
        .unwrap();
        assert!(r.terminated_early);
        assert!(r.log.is_empty());
    }

    #[test]
    fn sweep_zero_epsilon_is_regular_forecast() {
        let m = surrogate();
        let w = Window {
            origin: 3,
            z_history: vec![0.0; 3],
            covariates: Matrix::from_fn(2, 3, |i, s| 0.1 * (i + s) as f64),
            z_future: vec![0.0; 2],
        };
        let b = FeatureBounds::uniform(2, -1.0, 1.0).unwrap();
        let out = sweep(
            &m,
            std::slice::from_ref(&w),
            &spec(Direction::Up, 1.0, 2),
            &b,
            &[0.0],
        )
        .unwrap();
        let r = &out[0].results[0];
        assert_eq!(r.perturbed, w.covariates);
        assert_eq!(r.perturbed_forecast, r.forecast);

        let out = sweep(
            &m,
            &[w.clone(), w],
            &spec(Direction::Up, 1.0, 2),
            &b,
            &[0.01, 0.03, 0.1],
        )
        .unwrap();
        assert_eq!(out.len(), 3);
        let l1: Vec<f64> = out
            .iter()
            .map(|e| e.results.iter().map(|r| perturbation_norms(r).l1).sum())
            .collect();
        assert!(l1.windows(2).all(|p| p[0] <= p[1]), "{l1:?}");

        assert!(sweep(&m, &[], &spec(Direction::Up, 1.0, 1), &b, &[]).is_err());
        assert!(sweep(&m, &[], &spec(Direction::Up, 1.0, 1), &b, &[0.1, 0.01]).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = surrogate();
        let b = FeatureBounds::uniform(2, -1.0, 1.0).unwrap();
        assert!(perturb(
            &m,
            &[0.0; 3],
            &Matrix::zeros(3, 3),
            &spec(Direction::Up, 0.1, 1),
            &b
        )
        .is_err());
        assert!(perturb(
            &m,
            &[0.0; 3],
            &Matrix::zeros(2, 3),
            &spec(Direction::Up, 0.0, 1),
            &b
        )
        .is_err());
        assert!(perturb(
            &m,
            &[0.0; 3],
            &Matrix::zeros(2, 3),
            &spec(Direction::Up, 0.1, 0),
            &b
        )
        .is_err());
        let short = FeatureBounds::uniform(1, -1.0, 1.0).unwrap();
        assert!(perturb(
            &m,
            &[0.0; 3],
            &Matrix::zeros(2, 3),
            &spec(Direction::Up, 0.1, 1),
            &short
        )
        .is_err());
    }

    #[test]
    fn report_is_json_round_trippable() {
        let m = surrogate();
        let b = FeatureBounds::uniform(2, -1.0, 1.0).unwrap();
        let r = perturb(
            &m,
            &[0.0; 3],
            &Matrix::zeros(2, 3),
            &spec(Direction::Up, 0.1, 1),
            &b,
        )
        .unwrap();
        let rep = r.report();
        let text = serde_json::to_string(&rep).unwrap();
        let back: StressReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, rep);
        assert_eq!(rep.horizon.len(), 2);
    }
}
