//! Autoregressive recurrent forecaster with a student-T output head.
//!
//! A single tanh recurrent cell consumes `[z_prev / scale, x_1..x_N]` at each
//! step. Over the history it reads the observed targets; over the horizon it
//! feeds back either the previous step's location (mean feedback, used for
//! point forecasts and gradients) or a sample drawn from the previous
//! step's distribution ([`sample_paths`]). Covariates beyond the window are
//! unknown, so horizon steps after the first reuse the last covariate column.
//!
//! The head maps raw outputs `(a, b, c)` to
//! `mu = scale * a`, `sigma = scale * (softplus(b) + 1e-6)`,
//! `nu = 2 + softplus(c) + 1e-6`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StudentT};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::series::Window;
use crate::special::{ln_gamma, softplus};

pub const SIGMA_FLOOR: f64 = 1e-6;
/// Keeps `nu` strictly above 2 once `softplus` underflows.
pub const NU_FLOOR: f64 = 1e-6;
const LN_PI: f64 = 1.144_729_885_849_400_2;

/// Index of a student-T distribution parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistParam {
    Mu,
    Sigma,
    Nu,
}

impl DistParam {
    pub const ALL: [DistParam; 3] = [DistParam::Mu, DistParam::Sigma, DistParam::Nu];

    pub fn as_str(&self) -> &'static str {
        match self {
            DistParam::Mu => "mu",
            DistParam::Sigma => "sigma",
            DistParam::Nu => "nu",
        }
    }
}

impl fmt::Display for DistParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mu" => Ok(DistParam::Mu),
            "sigma" => Ok(DistParam::Sigma),
            "nu" => Ok(DistParam::Nu),
            other => Err(Error::Config(format!(
                "unknown distribution parameter `{other}` (expected mu, sigma or nu)"
            ))),
        }
    }
}

/// Location-scale student-T.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudentTParams {
    pub mu: f64,
    pub sigma: f64,
    pub nu: f64,
}

impl StudentTParams {
    pub fn new(mu: f64, sigma: f64, nu: f64) -> Result<Self> {
        let p = Self { mu, sigma, nu };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite()
            || !(self.sigma > 0.0)
            || !(self.nu > 2.0)
            || !self.sigma.is_finite()
            || !self.nu.is_finite()
        {
            return Err(Error::NonFinite(format!(
                "invalid student-T parameters mu={}, sigma={}, nu={}",
                self.mu, self.sigma, self.nu
            )));
        }
        Ok(())
    }

    pub fn get(&self, p: DistParam) -> f64 {
        match p {
            DistParam::Mu => self.mu,
            DistParam::Sigma => self.sigma,
            DistParam::Nu => self.nu,
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.sigma * (self.nu / (self.nu - 2.0)).sqrt()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let t = StudentT::new(self.nu).expect("nu > 2 is a valid degrees-of-freedom");
        self.mu + self.sigma * t.sample(rng)
    }
}

/// Per-step forecast parameters over the horizon (the `n x horizon` matrix).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastDistribution {
    pub steps: Vec<StudentTParams>,
}

impl ForecastDistribution {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn param(&self, p: DistParam, t: usize) -> f64 {
        self.steps[t].get(p)
    }

    pub fn series(&self, p: DistParam) -> Vec<f64> {
        self.steps.iter().map(|s| s.get(p)).collect()
    }
}

/// Negative log-density of `z` under a location-scale student-T, in nats.
pub fn nll(dist: &StudentTParams, z: f64) -> Result<f64> {
    dist.validate()?;
    let StudentTParams { mu, sigma, nu } = *dist;
    let r = (z - mu) / sigma;
    Ok(ln_gamma(nu / 2.0) - ln_gamma((nu + 1.0) / 2.0)
        + 0.5 * (nu.ln() + LN_PI)
        + sigma.ln()
        + 0.5 * (nu + 1.0) * (r * r / nu).ln_1p())
}

fn nll_on_tape<'t>(mu: Var<'t>, sigma: Var<'t>, nu: Var<'t>, z: f64) -> Var<'t> {
    let half_nu = nu * 0.5;
    let half_nu1 = (nu + 1.0) * 0.5;
    let r = (-(mu - z)) / sigma;
    let quad = (r.square() / nu + 1.0).ln();
    half_nu.ln_gamma() - half_nu1.ln_gamma() + (nu.ln() + LN_PI) * 0.5 + sigma.ln() + half_nu1 * quad
}

/// Weights and biases of the recurrent cell and the projection head,
/// stored flat in the order `W_ih (H x (1+N))`, `W_hh (H x H)`, `b_h (H)`,
/// `W_out (3 x H)`, `b_out (3)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    hidden: usize,
    n_features: usize,
    seed: u64,
    /// Target scale applied on input and output; 1 leaves units untouched.
    target_scale: f64,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    hidden: usize,
    input: usize,
    w_hh: usize,
    b_h: usize,
    w_out: usize,
    b_out: usize,
    len: usize,
}

impl Layout {
    fn new(hidden: usize, n_features: usize) -> Self {
        let input = 1 + n_features;
        let w_hh = hidden * input;
        let b_h = w_hh + hidden * hidden;
        let w_out = b_h + hidden;
        let b_out = w_out + 3 * hidden;
        Self {
            hidden,
            input,
            w_hh,
            b_h,
            w_out,
            b_out,
            len: b_out + 3,
        }
    }

    fn is_bias(&self, i: usize) -> bool {
        (self.b_h..self.w_out).contains(&i) || i >= self.b_out
    }
}

impl ModelParams {
    /// Uniform weights in `±1/sqrt(fan_in)` from a seeded generator, zero biases.
    pub fn init(seed: u64, hidden: usize, n_features: usize) -> Result<Self> {
        if hidden == 0 || n_features == 0 {
            return Err(Error::Config(format!(
                "hidden size and feature count must be >= 1 (got {hidden}, {n_features})"
            )));
        }
        let layout = Layout::new(hidden, n_features);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; layout.len];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let a = 1.0 / (fan_in as f64).sqrt();
            for v in &mut values[range] {
                *v = rng.random_range(-a..a);
            }
        };
        fill(0..layout.w_hh, layout.input);
        fill(layout.w_hh..layout.b_h, hidden);
        fill(layout.w_out..layout.b_out, hidden);
        Ok(Self {
            hidden,
            n_features,
            seed,
            target_scale: 1.0,
            values,
        })
    }

    /// All-zero weights and biases.
    pub fn zeros(hidden: usize, n_features: usize) -> Self {
        Self {
            hidden,
            n_features,
            seed: 0,
            target_scale: 1.0,
            values: vec![0.0; Layout::new(hidden, n_features).len],
        }
    }

    fn layout(&self) -> Layout {
        Layout::new(self.hidden, self.n_features)
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn target_scale(&self) -> f64 {
        self.target_scale
    }

    pub fn set_target_scale(&mut self, scale: f64) -> Result<()> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!(
                "target scale must be positive, got {scale}"
            )));
        }
        self.target_scale = scale;
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `W_ih` as an `H x (1+N)` matrix; column 0 is the target input.
    pub fn input_weights(&self) -> Matrix {
        let l = self.layout();
        Matrix::from_vec(l.hidden, l.input, self.values[..l.w_hh].to_vec()).expect("layout")
    }

    pub fn recurrent_weights(&self) -> Matrix {
        let l = self.layout();
        Matrix::from_vec(l.hidden, l.hidden, self.values[l.w_hh..l.b_h].to_vec()).expect("layout")
    }

    pub fn output_weights(&self) -> Matrix {
        let l = self.layout();
        Matrix::from_vec(3, l.hidden, self.values[l.w_out..l.b_out].to_vec()).expect("layout")
    }

    pub fn input_weight_mut(&mut self, h: usize, j: usize) -> &mut f64 {
        let l = self.layout();
        &mut self.values[h * l.input + j]
    }

    pub fn output_bias_mut(&mut self, c: usize) -> &mut f64 {
        let l = self.layout();
        &mut self.values[l.b_out + c]
    }

    /// Zeroes every input weight reading covariate `feature`.
    pub fn zero_feature(&mut self, feature: usize) {
        for h in 0..self.hidden {
            *self.input_weight_mut(h, 1 + feature) = 0.0;
        }
    }

    /// Reorders covariate weights so that new feature `i` reads what old
    /// feature `perm[i]` read.
    pub fn permute_features(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_features {
            return Err(Error::Shape(
                "permutation length differs from feature count".into(),
            ));
        }
        let mut out = self.clone();
        let l = self.layout();
        for h in 0..self.hidden {
            for (i, &src) in perm.iter().enumerate() {
                out.values[h * l.input + 1 + i] = self.values[h * l.input + 1 + src];
            }
        }
        Ok(out)
    }

    fn check_inputs(&self, z_history: &[f64], covariates: &Matrix) -> Result<()> {
        if z_history.is_empty() {
            return Err(Error::Shape("empty target history".into()));
        }
        if covariates.rows() != self.n_features || covariates.cols() != z_history.len() {
            return Err(Error::Shape(format!(
                "covariates are {}x{}, model expects {}x{}",
                covariates.rows(),
                covariates.cols(),
                self.n_features,
                z_history.len()
            )));
        }
        Ok(())
    }

    pub fn to_checkpoint_string(&self) -> Result<String> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            params: self.clone(),
        };
        serde_json::to_string_pretty(&ckpt).map_err(|e| Error::NonFinite(format!("checkpoint encoding: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = self.to_checkpoint_string()?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text)
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let ckpt: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Data(format!("malformed checkpoint: {e}")))?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        let p = ckpt.params;
        if p.hidden == 0 || p.n_features == 0 || p.values.len() != Layout::new(p.hidden, p.n_features).len {
            return Err(Error::Data("checkpoint shapes are inconsistent".into()));
        }
        if p.values.iter().any(|v| !v.is_finite()) || !(p.target_scale > 0.0) {
            return Err(Error::Data("checkpoint holds non-finite values".into()));
        }
        Ok(p)
    }
}

const CHECKPOINT_FORMAT: &str = "fcstress-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    params: ModelParams,
}

// ---------------------------------------------------------------------------
// Plain floating-point evaluation
// ---------------------------------------------------------------------------

fn cell_f64(p: &ModelParams, l: &Layout, h: &[f64], z_in: f64, x: impl Fn(usize) -> f64, out: &mut [f64]) {
    let v = &p.values;
    for r in 0..l.hidden {
        let wi = &v[r * l.input..(r + 1) * l.input];
        let mut acc = v[l.b_h + r] + wi[0] * z_in;
        for (i, w) in wi.iter().enumerate().skip(1) {
            acc += w * x(i - 1);
        }
        let wh = &v[l.w_hh + r * l.hidden..l.w_hh + (r + 1) * l.hidden];
        for (w, hv) in wh.iter().zip(h) {
            acc += w * hv;
        }
        out[r] = acc.tanh();
    }
}

fn head_f64(p: &ModelParams, l: &Layout, h: &[f64]) -> [f64; 3] {
    let v = &p.values;
    let mut raw = [0.0; 3];
    for (c, r) in raw.iter_mut().enumerate() {
        let w = &v[l.w_out + c * l.hidden..l.w_out + (c + 1) * l.hidden];
        *r = v[l.b_out + c] + w.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
    }
    raw
}

fn map_head(raw: [f64; 3], scale: f64) -> StudentTParams {
    StudentTParams {
        mu: scale * raw[0],
        sigma: scale * (softplus(raw[1]) + SIGMA_FLOOR),
        nu: 2.0 + (softplus(raw[2]) + NU_FLOOR),
    }
}

fn check_hidden(h: &[f64], step: usize) -> Result<()> {
    if h.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("hidden state at step {step}")))
    }
}

/// Hidden state after consuming the whole history.
fn encode_f64(p: &ModelParams, z_history: &[f64], covariates: &Matrix) -> Result<Vec<f64>> {
    let l = p.layout();
    let mut h = vec![0.0; l.hidden];
    let mut next = vec![0.0; l.hidden];
    for (s, &z) in z_history.iter().enumerate() {
        cell_f64(p, &l, &h, z / p.target_scale, |i| covariates.get(i, s), &mut next);
        std::mem::swap(&mut h, &mut next);
        check_hidden(&h, s)?;
    }
    Ok(h)
}

/// Mean-feedback forecast over `horizon` steps.
pub fn forward(
    params: &ModelParams,
    z_history: &[f64],
    covariates: &Matrix,
    horizon: usize,
) -> Result<ForecastDistribution> {
    params.check_inputs(z_history, covariates)?;
    let l = params.layout();
    let k = z_history.len();
    let mut h = encode_f64(params, z_history, covariates)?;
    let mut next = vec![0.0; l.hidden];
    let mut steps = Vec::with_capacity(horizon);
    for j in 0..horizon {
        let raw = head_f64(params, &l, &h);
        let dist = map_head(raw, params.target_scale);
        dist.validate()
            .map_err(|_| Error::NonFinite(format!("forecast parameters at horizon step {j}")))?;
        steps.push(dist);
        if j + 1 < horizon {
            cell_f64(params, &l, &h, raw[0], |i| covariates.get(i, k - 1), &mut next);
            std::mem::swap(&mut h, &mut next);
            check_hidden(&h, k + j)?;
        }
    }
    Ok(ForecastDistribution { steps })
}

/// Monte-Carlo trajectories where each step's draw is fed into the next.
///
/// Returns `n_samples` rows of `horizon` sampled log-returns.
pub fn sample_paths(
    params: &ModelParams,
    z_history: &[f64],
    covariates: &Matrix,
    horizon: usize,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be >= 1".into()));
    }
    params.check_inputs(z_history, covariates)?;
    let l = params.layout();
    let k = z_history.len();
    let h0 = encode_f64(params, z_history, covariates)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next = vec![0.0; l.hidden];
    let mut paths = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let mut h = h0.clone();
        let mut path = Vec::with_capacity(horizon);
        for j in 0..horizon {
            let dist = map_head(head_f64(params, &l, &h), params.target_scale);
            let draw = dist.sample(&mut rng);
            path.push(draw);
            if j + 1 < horizon {
                cell_f64(
                    params,
                    &l,
                    &h,
                    draw / params.target_scale,
                    |i| covariates.get(i, k - 1),
                    &mut next,
                );
                std::mem::swap(&mut h, &mut next);
            }
        }
        paths.push(path);
    }
    Ok(paths)
}

// ---------------------------------------------------------------------------
// Tape evaluation
// ---------------------------------------------------------------------------

/// Model parameters recorded on a tape, grouped per output row with the
/// bias last so each pre-activation is a single dot node.
struct ParamVars<'t> {
    leaves: Vec<Var<'t>>,
    /// `[W_ih row, W_hh row, b_h]` per hidden unit.
    cell_rows: Vec<Vec<Var<'t>>>,
    /// `[W_out row, b_out]` per raw output.
    head_rows: Vec<Vec<Var<'t>>>,
}

impl<'t> ParamVars<'t> {
    fn record(tape: &'t Tape, p: &ModelParams) -> Self {
        let l = p.layout();
        let leaves = tape.vars(&p.values);
        let cell_rows = (0..l.hidden)
            .map(|r| {
                let mut row = Vec::with_capacity(l.input + l.hidden + 1);
                row.extend_from_slice(&leaves[r * l.input..(r + 1) * l.input]);
                row.extend_from_slice(&leaves[l.w_hh + r * l.hidden..l.w_hh + (r + 1) * l.hidden]);
                row.push(leaves[l.b_h + r]);
                row
            })
            .collect();
        let head_rows = (0..3)
            .map(|c| {
                let mut row = leaves[l.w_out + c * l.hidden..l.w_out + (c + 1) * l.hidden].to_vec();
                row.push(leaves[l.b_out + c]);
                row
            })
            .collect();
        Self {
            leaves,
            cell_rows,
            head_rows,
        }
    }
}

/// How horizon steps after the first receive their target input.
enum Feedback<'a> {
    Mean,
    Teacher(&'a [f64]),
}

struct TapeForecast<'t> {
    /// `(mu, sigma, nu)` per horizon step.
    steps: Vec<[Var<'t>; 3]>,
}

/// Unrolls the model on the tape. `x` is feature-major `N x k` of vars.
fn unroll<'t>(
    tape: &'t Tape,
    pv: &ParamVars<'t>,
    p: &ModelParams,
    z_history: &[f64],
    x: &[Var<'t>],
    horizon: usize,
    feedback: Feedback<'_>,
) -> Result<TapeForecast<'t>> {
    let l = p.layout();
    let k = z_history.len();
    let n = p.n_features;
    let one = tape.constant(1.0);
    let zero = tape.constant(0.0);
    let mut h: Vec<Var<'t>> = vec![zero; l.hidden];
    // [z_in, x_1..x_N, h_1..h_H, 1]
    let mut inp: Vec<Var<'t>> = vec![zero; l.input + l.hidden + 1];
    inp[l.input + l.hidden] = one;

    let step = |h: &mut Vec<Var<'t>>,
                inp: &mut Vec<Var<'t>>,
                z_in: Var<'t>,
                col: usize,
                index: usize|
     -> Result<()> {
        inp[0] = z_in;
        for i in 0..n {
            inp[1 + i] = x[i * k + col];
        }
        inp[l.input..l.input + l.hidden].copy_from_slice(h);
        for (r, row) in pv.cell_rows.iter().enumerate() {
            h[r] = tape.dot(row, inp).tanh();
        }
        if h.iter().all(|v| v.value().is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("hidden state at step {index}")))
        }
    };

    for (s, &z) in z_history.iter().enumerate() {
        let z_in = tape.constant(z / p.target_scale);
        step(&mut h, &mut inp, z_in, s, s)?;
    }

    let mut head_in: Vec<Var<'t>> = vec![one; l.hidden + 1];
    let mut steps = Vec::with_capacity(horizon);
    for j in 0..horizon {
        head_in[..l.hidden].copy_from_slice(&h);
        let a = tape.dot(&pv.head_rows[0], &head_in);
        let b = tape.dot(&pv.head_rows[1], &head_in);
        let c = tape.dot(&pv.head_rows[2], &head_in);
        let mu = a * p.target_scale;
        let sigma = (b.softplus() + SIGMA_FLOOR) * p.target_scale;
        let nu = (c.softplus() + NU_FLOOR) + 2.0;
        steps.push([mu, sigma, nu]);
        if j + 1 < horizon {
            let z_in = match feedback {
                Feedback::Mean => a,
                Feedback::Teacher(future) => tape.constant(future[j] / p.target_scale),
            };
            step(&mut h, &mut inp, z_in, k - 1, k + j)?;
        }
    }
    Ok(TapeForecast { steps })
}

/// `∂Θ[p, t] / ∂X[i, s]` as a feature-major `N x k` matrix, taken through the
/// mean-feedback forward pass.
pub fn input_gradient(
    params: &ModelParams,
    z_history: &[f64],
    covariates: &Matrix,
    horizon: usize,
    param: DistParam,
    step: usize,
) -> Result<Matrix> {
    let weights = match param {
        DistParam::Mu => [1.0, 0.0, 0.0],
        DistParam::Sigma => [0.0, 1.0, 0.0],
        DistParam::Nu => [0.0, 0.0, 1.0],
    };
    weighted_input_gradient(params, z_history, covariates, horizon, weights, step)
}

/// Input gradient of `w_mu*mu + w_sigma*sigma + w_nu*nu` at horizon `step`.
pub fn weighted_input_gradient(
    params: &ModelParams,
    z_history: &[f64],
    covariates: &Matrix,
    horizon: usize,
    weights: [f64; 3],
    step: usize,
) -> Result<Matrix> {
    params.check_inputs(z_history, covariates)?;
    if step >= horizon {
        return Err(Error::Shape(format!("step {step} outside horizon {horizon}")));
    }
    let tape = Tape::new();
    let pv = ParamVars::record(&tape, params);
    let x = tape.vars(covariates.as_slice());
    let fc = unroll(&tape, &pv, params, z_history, &x, step + 1, Feedback::Mean)?;
    let [mu, sigma, nu] = fc.steps[step];
    let out = tape.affine(&weights, &[mu, sigma, nu], 0.0);
    let grads = tape.backward(out)?;
    let data = grads.wrt(&x);
    if let Some(pos) = data.iter().position(|g| !g.is_finite()) {
        let k = covariates.cols();
        return Err(Error::NonFinite(format!(
            "input gradient at feature {}, step {}",
            pos / k,
            pos % k
        )));
    }
    Matrix::from_vec(covariates.rows(), covariates.cols(), data)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub weight_decay: f64,
    /// Drop probability for covariate inputs during training.
    pub dropout: f64,
    pub batch_size: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            learning_rate: 0.01,
            epochs: 50,
            patience: 5,
            weight_decay: 0.3,
            dropout: 0.1,
            batch_size: 32,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.hidden == 0 || self.epochs == 0 || self.batch_size == 0 {
            return bad("hidden, epochs and batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(self.weight_decay >= 0.0) || !(self.clip_norm >= 0.0) {
            return bad("weight decay and clip norm must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_nll: f64,
    pub valid_nll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub initial_valid_nll: f64,
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were returned; 0 means the initialization.
    pub best_epoch: usize,
    pub best_valid_nll: f64,
    pub stopped_early: bool,
}

/// Mean NLL over every horizon step of every window (mean feedback, no dropout).
pub fn mean_nll(params: &ModelParams, windows: &[Window]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for w in windows {
        let fc = forward(params, &w.z_history, &w.covariates, w.z_future.len())?;
        for (d, &z) in fc.steps.iter().zip(&w.z_future) {
            total += nll(d, z)?;
            count += 1;
        }
    }
    Ok(total / count.max(1) as f64)
}

/// Loss and parameter gradient for one window with teacher-forced targets.
fn window_gradient(
    tape: &mut Tape,
    params: &ModelParams,
    window: &Window,
    dropout_mask: Option<&[f64]>,
    grad: &mut [f64],
    weight: f64,
) -> Result<f64> {
    tape.clear();
    let tape = &*tape;
    let pv = ParamVars::record(tape, params);
    let x: Vec<Var<'_>> = match dropout_mask {
        Some(mask) => window
            .covariates
            .iter()
            .zip(mask)
            .map(|(v, m)| tape.constant(v * m))
            .collect(),
        None => window.covariates.iter().map(|v| tape.constant(v)).collect(),
    };
    let fc = unroll(
        tape,
        &pv,
        params,
        &window.z_history,
        &x,
        window.z_future.len(),
        Feedback::Teacher(&window.z_future),
    )?;
    let losses: Vec<Var<'_>> = fc
        .steps
        .iter()
        .zip(&window.z_future)
        .map(|(&[mu, sigma, nu], &z)| nll_on_tape(mu, sigma, nu, z))
        .collect();
    let loss = tape.sum(&losses);
    let grads = tape.backward(loss)?;
    for (g, v) in grad.iter_mut().zip(&pv.leaves) {
        *g += weight * grads.get(*v);
    }
    Ok(loss.value())
}

/// Fits the model by mini-batch gradient descent on mean NLL with weight
/// decay, covariate dropout and early stopping on validation NLL.
///
/// Returns the best-validation parameters. Deterministic for a fixed seed.
pub fn train(
    train_windows: &[Window],
    valid_windows: &[Window],
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainingLog)> {
    cfg.validate()?;
    let first = train_windows
        .first()
        .ok_or_else(|| Error::Data("no training windows".into()))?;
    if valid_windows.is_empty() {
        return Err(Error::Data("no validation windows".into()));
    }
    let n_features = first.covariates.rows();
    let mut params = ModelParams::init(cfg.seed, cfg.hidden, n_features)?;
    let ms = train_windows
        .iter()
        .flat_map(|w| w.z_future.iter())
        .map(|z| z * z)
        .sum::<f64>()
        / train_windows.iter().map(|w| w.z_future.len()).sum::<usize>() as f64;
    params.set_target_scale(ms.sqrt().max(1e-8))?;
    let layout = params.layout();

    let initial_valid_nll = mean_nll(&params, valid_windows)?;
    let mut best = params.clone();
    let mut best_nll = initial_valid_nll;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut epochs = Vec::new();
    let mut stopped_early = false;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a11);
    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    let mut tape = Tape::with_capacity(4096);
    let mut grad = vec![0.0; params.len()];
    let mut mask = vec![1.0; first.covariates.as_slice().len()];
    let keep = 1.0 - cfg.dropout;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_count = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let steps: usize = batch.iter().map(|&i| train_windows[i].z_future.len()).sum();
            let weight = 1.0 / steps as f64;
            for &i in batch {
                let w = &train_windows[i];
                let m = if cfg.dropout > 0.0 {
                    mask.resize(w.covariates.as_slice().len(), 1.0);
                    for m in mask.iter_mut() {
                        *m = if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        };
                    }
                    Some(mask.as_slice())
                } else {
                    None
                };
                let loss =
                    window_gradient(&mut tape, &params, w, m, &mut grad, weight).map_err(|e| match e {
                        Error::NonFinite(_) | Error::Domain { .. } => Error::Diverged {
                            epoch,
                            loss: f64::NAN,
                        },
                        e => e,
                    })?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, loss });
                }
                epoch_loss += loss;
                epoch_count += w.z_future.len();
            }
            for (i, (g, v)) in grad.iter_mut().zip(params.values.iter()).enumerate() {
                if !layout.is_bias(i) {
                    *g += cfg.weight_decay * v;
                }
            }
            if cfg.clip_norm > 0.0 {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > cfg.clip_norm {
                    let s = cfg.clip_norm / norm;
                    grad.iter_mut().for_each(|g| *g *= s);
                }
            }
            for (v, g) in params.values.iter_mut().zip(&grad) {
                *v -= cfg.learning_rate * g;
            }
        }
        let train_nll = epoch_loss / epoch_count as f64;
        let valid_nll = match mean_nll(&params, valid_windows) {
            Ok(v) if v.is_finite() => v,
            Ok(v) => return Err(Error::Diverged { epoch, loss: v }),
            Err(_) => {
                return Err(Error::Diverged {
                    epoch,
                    loss: f64::NAN,
                })
            }
        };
        epochs.push(EpochLog {
            epoch,
            train_nll,
            valid_nll,
        });
        if valid_nll < best_nll {
            best_nll = valid_nll;
            best = params.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }

    Ok((
        best,
        TrainingLog {
            initial_valid_nll,
            epochs,
            best_epoch,
            best_valid_nll: best_nll,
            stopped_early,
        },
    ))
}

/// Trained parameters bound to a forecast horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecaster {
    pub params: ModelParams,
    pub horizon: usize,
}

impl Forecaster {
    pub fn new(params: ModelParams, horizon: usize) -> Self {
        Self { params, horizon }
    }

    pub fn forecast(&self, z_history: &[f64], covariates: &Matrix) -> Result<ForecastDistribution> {
        forward(&self.params, z_history, covariates, self.horizon)
    }

    pub fn input_gradient(
        &self,
        z_history: &[f64],
        covariates: &Matrix,
        param: DistParam,
        step: usize,
    ) -> Result<Matrix> {
        input_gradient(&self.params, z_history, covariates, self.horizon, param, step)
    }
}
