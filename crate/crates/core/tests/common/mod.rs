//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code, clippy::needless_range_loop, clippy::manual_clamp)]

use fcstress_core::autodiff::{Tape, Var};
use fcstress_core::special::{ln_gamma, sigmoid, softplus};
use fcstress_core::{Matrix, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Central differences, one coordinate at a time.
pub fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

// ---------------------------------------------------------------------------
// Random computation graphs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum GNode {
    Input,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// `a / (1 + b^2)`
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Shift(usize, f64),
    Exp(usize),
    /// `ln(softplus(a) + 0.1)`
    Ln(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    Square(usize),
    /// `lnΓ(softplus(a) + 0.2)`
    LnGamma(usize),
    Sum(Vec<usize>),
    Dot(Vec<usize>, Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct Graph {
    pub n_inputs: usize,
    pub nodes: Vec<GNode>,
}

impl Graph {
    /// Random graph whose intermediate values stay finite and below 1e4
    /// in magnitude at `x`.
    pub fn random(r: &mut ChaCha8Rng, n_inputs: usize, n_ops: usize, x: &[f64]) -> Self {
        loop {
            let g = Self::draw(r, n_inputs, n_ops);
            if g.values(x).iter().all(|v| v.is_finite() && v.abs() < 1e4) {
                return g;
            }
        }
    }

    fn draw(r: &mut ChaCha8Rng, n_inputs: usize, n_ops: usize) -> Self {
        let mut nodes = vec![GNode::Input; n_inputs];
        for _ in 0..n_ops {
            let n = nodes.len();
            // Bias operands toward recent nodes so graphs get deep.
            let pick = |r: &mut ChaCha8Rng| {
                if r.random_bool(0.6) {
                    n - 1 - r.random_range(0..n.min(3))
                } else {
                    r.random_range(0..n)
                }
            };
            let a = pick(r);
            let b = pick(r);
            let node = match r.random_range(0..17) {
                0 => GNode::Add(a, b),
                1 => GNode::Sub(a, b),
                2 => GNode::Mul(a, b),
                3 => GNode::Div(a, b),
                4 => GNode::Neg(a),
                5 => GNode::Scale(a, r.random_range(-2.0..2.0)),
                6 => GNode::Shift(a, r.random_range(-1.0..1.0)),
                7 => GNode::Exp(a),
                8 => GNode::Ln(a),
                9 => GNode::Tanh(a),
                10 => GNode::Sigmoid(a),
                11 => GNode::Softplus(a),
                12 => GNode::Square(a),
                13 => GNode::LnGamma(a),
                14 => GNode::Sum((0..r.random_range(2..5)).map(|_| pick(r)).collect()),
                15 | 16 => {
                    let len = r.random_range(2..4);
                    let xs = (0..len).map(|_| pick(r)).collect();
                    let ys = (0..len).map(|_| pick(r)).collect();
                    GNode::Dot(xs, ys)
                }
                _ => unreachable!(),
            };
            nodes.push(node);
        }
        Self { n_inputs, nodes }
    }

    /// Plain evaluation of every node.
    pub fn values(&self, x: &[f64]) -> Vec<f64> {
        let mut v: Vec<f64> = Vec::with_capacity(self.nodes.len());
        for (k, node) in self.nodes.iter().enumerate() {
            let val = match node {
                GNode::Input => x[k],
                GNode::Add(a, b) => v[*a] + v[*b],
                GNode::Sub(a, b) => v[*a] - v[*b],
                GNode::Mul(a, b) => v[*a] * v[*b],
                GNode::Div(a, b) => v[*a] / (1.0 + v[*b] * v[*b]),
                GNode::Neg(a) => -v[*a],
                GNode::Scale(a, c) => v[*a] * c,
                GNode::Shift(a, c) => v[*a] + c,
                GNode::Exp(a) => v[*a].exp(),
                GNode::Ln(a) => (softplus(v[*a]) + 0.1).ln(),
                GNode::Tanh(a) => v[*a].tanh(),
                GNode::Sigmoid(a) => sigmoid(v[*a]),
                GNode::Softplus(a) => softplus(v[*a]),
                GNode::Square(a) => v[*a] * v[*a],
                GNode::LnGamma(a) => ln_gamma(softplus(v[*a]) + 0.2),
                GNode::Sum(xs) => xs.iter().map(|i| v[*i]).sum(),
                GNode::Dot(xs, ys) => xs.iter().zip(ys).map(|(i, j)| v[*i] * v[*j]).sum(),
            };
            v.push(val);
        }
        v
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        *self.values(x).last().expect("non-empty graph")
    }

    /// Records the graph on `tape` and returns the input vars and output.
    pub fn record<'t>(&self, tape: &'t Tape, x: &[f64]) -> (Vec<Var<'t>>, Var<'t>) {
        let inputs = tape.vars(&x[..self.n_inputs]);
        let mut v: Vec<Var<'t>> = Vec::with_capacity(self.nodes.len());
        for (k, node) in self.nodes.iter().enumerate() {
            let val = match node {
                GNode::Input => inputs[k],
                GNode::Add(a, b) => v[*a] + v[*b],
                GNode::Sub(a, b) => v[*a] - v[*b],
                GNode::Mul(a, b) => v[*a] * v[*b],
                GNode::Div(a, b) => v[*a] / (v[*b].square() + 1.0),
                GNode::Neg(a) => -v[*a],
                GNode::Scale(a, c) => v[*a] * *c,
                GNode::Shift(a, c) => v[*a] + *c,
                GNode::Exp(a) => v[*a].exp(),
                GNode::Ln(a) => (v[*a].softplus() + 0.1).ln(),
                GNode::Tanh(a) => v[*a].tanh(),
                GNode::Sigmoid(a) => v[*a].sigmoid(),
                GNode::Softplus(a) => v[*a].softplus(),
                GNode::Square(a) => v[*a].square(),
                GNode::LnGamma(a) => (v[*a].softplus() + 0.2).ln_gamma(),
                GNode::Sum(xs) => tape.sum(&xs.iter().map(|i| v[*i]).collect::<Vec<_>>()),
                GNode::Dot(xs, ys) => tape.dot(
                    &xs.iter().map(|i| v[*i]).collect::<Vec<_>>(),
                    &ys.iter().map(|i| v[*i]).collect::<Vec<_>>(),
                ),
            };
            v.push(val);
        }
        let out = *v.last().expect("non-empty graph");
        (inputs, out)
    }
}

// ---------------------------------------------------------------------------
// Random forecasters
// ---------------------------------------------------------------------------

/// Initialized parameters with every weight rescaled by a random factor,
/// random output biases and a random target scale.
pub fn random_params(r: &mut ChaCha8Rng, hidden: usize, n_features: usize) -> ModelParams {
    let mut p = ModelParams::init(r.random(), hidden, n_features).expect("valid shape");
    let gain = r.random_range(0.5..2.5);
    p.values_mut().iter_mut().for_each(|v| *v *= gain);
    for c in 0..3 {
        *p.output_bias_mut(c) = r.random_range(-1.0..1.0);
    }
    p.set_target_scale(r.random_range(0.5..2.0))
        .expect("positive scale");
    p
}

pub fn random_window(
    r: &mut ChaCha8Rng,
    n_features: usize,
    k: usize,
    lo: f64,
    hi: f64,
) -> (Vec<f64>, Matrix) {
    let z = (0..k).map(|_| r.random_range(-1.0..1.0)).collect();
    let x = Matrix::from_fn(n_features, k, |_, _| r.random_range(lo..hi));
    (z, x)
}

// ---------------------------------------------------------------------------
// Reference trading simulator
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct RefBacktest {
    pub traded: Vec<bool>,
    pub fractions: Vec<f64>,
    pub compounded_pct: f64,
    pub pct_traded: f64,
}

/// Naive replay of the trading rules, written independently of the crate:
/// threshold (0 or trailing mean + sample std), closed `>=` decision,
/// full or trailing-k Kelly sizing, multiplicative compounding.
pub fn reference_backtest(
    forecasts: &[f64],
    opens: &[f64],
    closes: &[f64],
    rolling: bool,
    kelly: bool,
    k: usize,
) -> RefBacktest {
    let n = forecasts.len();
    let mut y = Vec::new();
    for i in 0..n {
        y.push(closes[i] / opens[i] - 1.0);
    }
    let mut traded = Vec::new();
    let mut fractions = Vec::new();
    let mut history: Vec<f64> = Vec::new();
    let mut wealth = 1.0;
    for i in 0..n {
        let mut can_trade = true;
        let mut threshold = 0.0;
        if rolling {
            if i < k {
                can_trade = false;
            } else {
                let mut s = 0.0;
                for j in i - k..i {
                    s += y[j];
                }
                let mean = s / k as f64;
                let mut ss = 0.0;
                for j in i - k..i {
                    ss += (y[j] - mean) * (y[j] - mean);
                }
                threshold = mean + (ss / (k - 1) as f64).sqrt();
            }
        }
        let trade = can_trade && forecasts[i] >= threshold;
        let mut f = 0.0;
        if trade {
            f = 1.0;
            if kelly && history.len() >= k {
                let last = &history[history.len() - k..];
                let mut n_win = 0;
                let mut n_loss = 0;
                let mut gain = 0.0;
                let mut loss = 0.0;
                for &v in last {
                    if v > 0.0 {
                        n_win += 1;
                        gain += v;
                    } else if v < 0.0 {
                        n_loss += 1;
                        loss += v;
                    }
                }
                if n_loss == 0 {
                    f = 1.0;
                } else if n_win == 0 {
                    f = 0.0;
                } else {
                    let w = n_win as f64 / k as f64;
                    let ratio = (gain / n_win as f64) / (-loss / n_loss as f64);
                    f = w - (1.0 - w) / ratio;
                    if f < 0.0 {
                        f = 0.0;
                    }
                    if f > 1.0 {
                        f = 1.0;
                    }
                }
            }
            history.push(y[i]);
        }
        wealth *= 1.0 + f * y[i];
        traded.push(trade);
        fractions.push(f);
    }
    let count = traded.iter().filter(|t| **t).count();
    RefBacktest {
        traded,
        fractions,
        compounded_pct: (wealth - 1.0) * 100.0,
        pct_traded: if n == 0 {
            0.0
        } else {
            count as f64 / n as f64 * 100.0
        },
    }
}
