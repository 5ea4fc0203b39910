//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p fcstress-core --test acceptance`.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use common::{central_diff, random_params, random_window, reference_backtest, rel_err, rng, Graph};
use fcstress_core::autodiff::Tape;
use fcstress_core::forecaster::{forward, input_gradient, nll, train};
use fcstress_core::metrics::{crps_empirical, mape, rmse};
use fcstress_core::pipeline::{prepare, run_pipeline, train_model, Evaluator, Prepared, RunConfig};
use fcstress_core::series::apply_split;
use fcstress_core::stress::{feature_l1, perturb, LinearSurrogate};
use fcstress_core::trading::{backtest, kelly_fraction, Sizing, ThresholdKind};
use fcstress_core::{
    Direction, DistParam, FeatureBounds, Forecaster, Frequency, Matrix, PerturbationSpec, PricePoint,
    StrategySpec, StudentTParams, Timestamp, TrainConfig, Window, WindowSpec,
};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

// Pinned tolerances and budgets.
const GRAPH_REL_TOL: f64 = 1e-4;
const FORECASTER_REL_TOL: f64 = 1e-3;
const GRAPH_FD_STEP: f64 = 1e-6;
const FORECASTER_FD_STEP: f64 = 1e-6;
/// Denominator floor of the relative error, so near-zero gradients are
/// compared absolutely.
const REL_ERR_FLOOR: f64 = 1e-3;
const N_GRAPHS: usize = 100;
const N_FORECASTERS: usize = 50;

const LOCATION_TOL: f64 = 0.05;
const SCALE_REL_TOL: f64 = 0.20;
const GAUSSIAN_NU: f64 = 1e6;
const GAUSSIAN_NLL_TOL: f64 = 1e-3;

const N_PERTURB_RUNS: usize = 500;
/// Slack for floating-point accumulation of up to `R·τ_h` steps.
const BUDGET_SLACK: f64 = 1e-12;

const N_DIRECTION_TRIALS: usize = 200;
const DIRECTION_EPS: f64 = 1e-3;
const DIRECTION_MIN_RATE: f64 = 0.95;
const N_SURROGATE_TRIALS: usize = 200;

const SWEEP_EPSILONS: [f64; 4] = [0.0, 0.01, 0.03, 0.1];

const N_SCENARIOS: usize = 1000;
const COMPOUND_TOL: f64 = 1e-12;

const METRIC_TOL: f64 = 1e-12;
const CRPS_SAMPLES: usize = 100_000;
const CRPS_REL_TOL: f64 = 0.01;

const IMPORTANCE_WINDOWS: usize = 20;
const IMPORTANCE_MIN_SHARE: f64 = 0.70;
const IMPORTANCE_EPS: f64 = 0.01;

type Outcome = Result<String, String>;

struct Criterion {
    id: u8,
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "gradient correctness",
            budget: Some(Duration::from_secs(30)),
            run: gradients,
        },
        Criterion {
            id: 2,
            name: "likelihood sanity",
            budget: Some(Duration::from_secs(120)),
            run: likelihood,
        },
        Criterion {
            id: 3,
            name: "perturbation bounds and budget",
            budget: Some(Duration::from_secs(60)),
            run: bounds_budget,
        },
        Criterion {
            id: 4,
            name: "perturbation directionality",
            budget: None,
            run: directionality,
        },
        Criterion {
            id: 5,
            name: "traded days rise with mu-up stress",
            budget: Some(Duration::from_secs(300)),
            run: traded_days,
        },
        Criterion {
            id: 6,
            name: "trading oracle equivalence",
            budget: None,
            run: trading_oracle,
        },
        Criterion {
            id: 7,
            name: "metric and kelly oracles",
            budget: None,
            run: metric_oracles,
        },
        Criterion {
            id: 8,
            name: "feature importance",
            budget: None,
            run: feature_importance,
        },
        Criterion {
            id: 9,
            name: "split fidelity",
            budget: None,
            run: splits,
        },
        Criterion {
            id: 10,
            name: "end-to-end determinism",
            budget: None,
            run: determinism,
        },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(c.run).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.budget) {
            (Ok(_), Some(b)) if elapsed > b => Err(format!("took {elapsed:.1?}, budget {b:?}")),
            (o, _) => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        if outcome.is_err() {
            failed += 1;
        }
        println!(
            "criterion {:>2} {tag} [{}] {detail} ({elapsed:.2?})",
            c.id, c.name
        );
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// 1 -------------------------------------------------------------------------

fn gradients() -> Outcome {
    let mut r = rng(101);
    let mut worst_graph = 0.0f64;
    for g in 0..N_GRAPHS {
        let n_in = r.random_range(1..6);
        let x: Vec<f64> = (0..n_in).map(|_| r.random_range(-1.5..1.5)).collect();
        let n_ops = r.random_range(3..25);
        let graph = Graph::random(&mut r, n_in, n_ops, &x);
        let tape = Tape::new();
        let (inputs, out) = graph.record(&tape, &x);
        let grads = tape.backward(out).map_err(|e| format!("graph {g}: {e}"))?;
        let ad = grads.wrt(&inputs);
        let fd = central_diff(&|p| graph.eval(p), &x, GRAPH_FD_STEP);
        for (a, f) in ad.iter().zip(&fd) {
            worst_graph = worst_graph.max(rel_err(*a, *f, REL_ERR_FLOOR));
        }
        ensure(worst_graph < GRAPH_REL_TOL, || {
            format!("graph {g}: rel err {worst_graph:.2e} ({graph:?})")
        })?;
    }

    let mut worst_fc = 0.0f64;
    for m in 0..N_FORECASTERS {
        let hidden = r.random_range(1..=4);
        let n = r.random_range(1..=3);
        let k = r.random_range(1..=5);
        let horizon = r.random_range(1..=3);
        let params = random_params(&mut r, hidden, n);
        let (z, x) = random_window(&mut r, n, k, -2.0, 2.0);
        let param = DistParam::ALL[r.random_range(0..3)];
        let step = r.random_range(0..horizon);
        let ad = input_gradient(&params, &z, &x, horizon, param, step)
            .map_err(|e| format!("forecaster {m}: {e}"))?;
        let f = |flat: &[f64]| {
            let xm = Matrix::from_vec(n, k, flat.to_vec()).unwrap();
            forward(&params, &z, &xm, horizon).unwrap().param(param, step)
        };
        let fd = central_diff(&f, x.as_slice(), FORECASTER_FD_STEP);
        for (a, f) in ad.iter().zip(&fd) {
            worst_fc = worst_fc.max(rel_err(a, *f, REL_ERR_FLOOR));
        }
        ensure(worst_fc < FORECASTER_REL_TOL, || {
            format!("forecaster {m} (H={hidden}, N={n}, k={k}, {param} step {step}): rel err {worst_fc:.2e}")
        })?;
    }
    Ok(format!(
        "{N_GRAPHS} graphs max rel err {worst_graph:.1e} < {GRAPH_REL_TOL:.0e}; \
         {N_FORECASTERS} forecasters max rel err {worst_fc:.1e} < {FORECASTER_REL_TOL:.0e}"
    ))
}

// 2 -------------------------------------------------------------------------

fn iid_windows(
    r: &mut rand_chacha::ChaCha8Rng,
    count: usize,
    k: usize,
    n: usize,
    mean: f64,
    sd: f64,
) -> Vec<Window> {
    let draw = |r: &mut rand_chacha::ChaCha8Rng| {
        let e: f64 = StandardNormal.sample(r);
        mean + sd * e
    };
    (0..count)
        .map(|i| {
            let z_history = (0..k).map(|_| draw(r)).collect();
            let covariates = Matrix::from_fn(n, k, |_, _| StandardNormal.sample(r));
            Window {
                origin: k + i,
                z_history,
                covariates,
                z_future: vec![draw(r)],
            }
        })
        .collect()
}

fn likelihood() -> Outcome {
    let gauss = StudentTParams::new(0.0, 1.0, GAUSSIAN_NU).map_err(|e| e.to_string())?;
    let v = nll(&gauss, 0.0).map_err(|e| e.to_string())?;
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    ensure((v - half_ln_2pi).abs() < GAUSSIAN_NLL_TOL, || {
        format!("nll at nu=1e6 is {v}, expected {half_ln_2pi}")
    })?;

    let (mean, sd, k, n) = (0.3, 0.8, 5, 2);
    let mut r = rng(202);
    let train_w = iid_windows(&mut r, 2000, k, n, mean, sd);
    let valid_w = iid_windows(&mut r, 400, k, n, mean, sd);
    let eval_w = iid_windows(&mut r, 400, k, n, mean, sd);
    let cfg = TrainConfig {
        hidden: 8,
        epochs: 300,
        patience: 30,
        learning_rate: 0.01,
        dropout: 0.0,
        seed: 3,
        ..TrainConfig::default()
    };
    let (params, _) = train(&train_w, &valid_w, &cfg).map_err(|e| e.to_string())?;

    let targets: Vec<f64> = train_w.iter().flat_map(|w| w.z_future.iter().copied()).collect();
    let t = targets.len() as f64;
    let sample_mean = targets.iter().sum::<f64>() / t;
    let sample_sd = (targets.iter().map(|z| (z - sample_mean).powi(2)).sum::<f64>() / (t - 1.0)).sqrt();

    let model = Forecaster::new(params, 1);
    let mut mus = 0.0;
    let mut sigmas = 0.0;
    let mut nus = 0.0;
    let mut worst_mu = 0.0f64;
    for w in &eval_w {
        let d = model
            .forecast(&w.z_history, &w.covariates)
            .map_err(|e| e.to_string())?
            .steps[0];
        mus += d.mu;
        sigmas += d.sigma;
        nus += d.nu;
        worst_mu = worst_mu.max((d.mu - sample_mean).abs());
    }
    let mu_hat = mus / eval_w.len() as f64;
    let sigma_hat = sigmas / eval_w.len() as f64;
    let nu_hat = nus / eval_w.len() as f64;
    ensure((mu_hat - sample_mean).abs() < LOCATION_TOL, || {
        format!("mean mu {mu_hat:.4} vs sample mean {sample_mean:.4}")
    })?;
    ensure(
        ((sigma_hat - sample_sd) / sample_sd).abs() < SCALE_REL_TOL,
        || format!("mean sigma {sigma_hat:.4} vs sample std {sample_sd:.4}"),
    )?;
    Ok(format!(
        "nll(nu=1e6) - ln(2pi)/2 = {:.1e}; mu {mu_hat:.4} vs {sample_mean:.4}; sigma {sigma_hat:.4} vs {sample_sd:.4} \
         at nu {nu_hat:.2} (max per-window mu gap {worst_mu:.3})",
        v - half_ln_2pi
    ))
}

// 3 -------------------------------------------------------------------------

fn bounds_budget() -> Outcome {
    let mut r = rng(303);
    let mut entries = 0usize;
    let mut moved = 0usize;
    for run in 0..N_PERTURB_RUNS {
        let n = r.random_range(1..=4);
        let k = r.random_range(1..=6);
        let horizon = r.random_range(1..=3);
        let lower: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..-0.1)).collect();
        let upper: Vec<f64> = (0..n).map(|_| r.random_range(0.1..2.0)).collect();
        let mut bounds = FeatureBounds::new(lower.clone(), upper.clone()).map_err(|e| e.to_string())?;
        for e in bounds.excluded.iter_mut() {
            *e = r.random_bool(0.1);
        }
        let x = Matrix::from_fn(n, k, |i, _| r.random_range(lower[i]..=upper[i]));
        let z: Vec<f64> = (0..k).map(|_| r.random_range(-1.0..1.0)).collect();
        let spec = PerturbationSpec {
            param: DistParam::ALL[r.random_range(0..3)],
            direction: Direction::BOTH[r.random_range(0..2)],
            epsilon: [0.01, 0.1, 0.5, 1.0][r.random_range(0..4)],
            iterations: r.random_range(1..=3),
        };
        let res = if r.random_bool(0.5) {
            let hidden = r.random_range(1..=4);
            let model = Forecaster::new(random_params(&mut r, hidden, n), horizon);
            perturb(&model, &z, &x, &spec, &bounds)
        } else {
            let w = Matrix::from_fn(n, k, |_, _| r.random_range(-1.0..1.0));
            perturb(&LinearSurrogate::new(w, horizon), &z, &x, &spec, &bounds)
        }
        .map_err(|e| format!("run {run}: {e}"))?;
        let budget = spec.entry_budget(horizon);
        for i in 0..n {
            for s in 0..k {
                let v = res.perturbed.get(i, s);
                let d = (v - x.get(i, s)).abs();
                entries += 1;
                if d != 0.0 {
                    moved += 1;
                }
                ensure(bounds.contains(i, v), || {
                    format!(
                        "run {run}: entry ({i},{s}) = {v} outside [{}, {}]",
                        lower[i], upper[i]
                    )
                })?;
                ensure(d <= budget + BUDGET_SLACK, || {
                    format!("run {run}: entry ({i},{s}) moved {d}, budget {budget}")
                })?;
                ensure(!(bounds.excluded[i] && d != 0.0), || {
                    format!("run {run}: excluded feature {i} moved")
                })?;
            }
        }
    }
    Ok(format!(
        "{N_PERTURB_RUNS} runs, {entries} entries ({moved} modified) all in bounds and within R*tau_h*eps"
    ))
}

// 4 -------------------------------------------------------------------------

fn directionality() -> Outcome {
    let mut r = rng(404);
    let mut agree = 0usize;
    let mut trials = 0usize;
    while trials < N_DIRECTION_TRIALS {
        let n = r.random_range(1..=3);
        let k = r.random_range(1..=5);
        let horizon = r.random_range(1..=3);
        let hidden = r.random_range(1..=4);
        let model = Forecaster::new(random_params(&mut r, hidden, n), horizon);
        let (z, x) = random_window(&mut r, n, k, -1.0, 1.0);
        let bounds = FeatureBounds::uniform(n, -5.0, 5.0).map_err(|e| e.to_string())?;
        let spec = PerturbationSpec {
            param: DistParam::ALL[r.random_range(0..3)],
            direction: Direction::BOTH[r.random_range(0..2)],
            epsilon: DIRECTION_EPS,
            iterations: 1,
        };
        let res = perturb(&model, &z, &x, &spec, &bounds).map_err(|e| e.to_string())?;
        let Some(first) = res.log.first() else { continue };
        trials += 1;
        let mut one = x.clone();
        one.set(
            first.feature,
            first.history_step,
            x.get(first.feature, first.history_step) + first.delta,
        );
        let t = first.horizon_step;
        let before = model
            .forecast(&z, &x)
            .map_err(|e| e.to_string())?
            .param(spec.param, t);
        let after = model
            .forecast(&z, &one)
            .map_err(|e| e.to_string())?
            .param(spec.param, t);
        if (after - before) * spec.direction.sign() > 0.0 {
            agree += 1;
        }
    }
    let rate = agree as f64 / trials as f64;
    ensure(rate >= DIRECTION_MIN_RATE, || {
        format!("sign agreement {agree}/{trials}")
    })?;

    let mut ordered = 0usize;
    for trial in 0..N_SURROGATE_TRIALS {
        let n = r.random_range(1..=4);
        let k = r.random_range(1..=6);
        let horizon = r.random_range(1..=3);
        let w = Matrix::from_fn(n, k, |_, _| r.random_range(-1.0..1.0));
        let model = LinearSurrogate::new(w, horizon);
        let x = Matrix::from_fn(n, k, |_, _| r.random_range(-1.0..1.0));
        let bounds = FeatureBounds::uniform(n, -1.5, 1.5).map_err(|e| e.to_string())?;
        let eps = r.random_range(0.001..0.5);
        let iterations = r.random_range(1..=3);
        let theta = model.mu(&x);
        let run = |d: Direction| {
            let spec = PerturbationSpec {
                param: DistParam::Mu,
                direction: d,
                epsilon: eps,
                iterations,
            };
            perturb(&model, &[], &x, &spec, &bounds).map(|res| model.mu(&res.perturbed))
        };
        let up = run(Direction::Up).map_err(|e| e.to_string())?;
        let down = run(Direction::Down).map_err(|e| e.to_string())?;
        ensure(up >= theta && theta >= down, || {
            format!("surrogate trial {trial}: up {up} / base {theta} / down {down}")
        })?;
        ordered += 1;
    }
    Ok(format!(
        "single-step sign agreement {agree}/{trials} ({:.1}%) >= {:.0}%; surrogate ordering {ordered}/{N_SURROGATE_TRIALS}",
        rate * 100.0,
        DIRECTION_MIN_RATE * 100.0
    ))
}

// 5 and 8 share one trained model -----------------------------------------

const COUPLED_CONFIG: &str = r#"
schema_version = 1
seed = 42

[data]
kind = "synthetic"
length = 1306
n_features = 13
coupling = 0.01
noise = 0.01
autocorrelation = 0.5

[window]
history = 10
horizon = 1

[train]
hidden = 32
epochs = 50
patience = 5

[metrics]
crps_samples = 50
kde_grid = 64
"#;

struct Trained {
    cfg: RunConfig,
    data: Prepared,
    model: Forecaster,
}

fn trained() -> &'static Result<Trained, String> {
    static CELL: OnceLock<Result<Trained, String>> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = RunConfig::from_toml_str(COUPLED_CONFIG)
            .map_err(|e| e.to_string())?
            .resolved();
        let data = prepare(&cfg).map_err(|e| e.to_string())?;
        let (model, _) = train_model(&cfg, &data).map_err(|e| e.to_string())?;
        Ok(Trained { cfg, data, model })
    })
}

fn traded_days() -> Outcome {
    let t = trained().as_ref().map_err(Clone::clone)?;
    let eval = Evaluator::new(&t.cfg, &t.model, &t.data).map_err(|e| e.to_string())?;
    let t0 = StrategySpec::new(ThresholdKind::FixedZero, Sizing::Full, 10).map_err(|e| e.to_string())?;
    let mut pct = Vec::new();
    for &eps in &SWEEP_EPSILONS {
        let e = if eps == 0.0 {
            eval.regular()
        } else {
            eval.stressed(&PerturbationSpec {
                param: DistParam::Mu,
                direction: Direction::Up,
                epsilon: eps,
                iterations: 1,
            })
        }
        .map_err(|e| e.to_string())?;
        let report = e
            .backtests
            .iter()
            .find(|b| b.strategy == t0.name())
            .ok_or("t0 backtest missing")?;
        pct.push(report.pct_traded);
    }
    let shown = SWEEP_EPSILONS
        .iter()
        .zip(&pct)
        .map(|(e, p)| format!("eps {e}: {p:.1}%"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(pct.windows(2).all(|w| w[1] >= w[0]), || {
        format!("not monotone: {shown}")
    })?;
    ensure(pct[pct.len() - 1] > pct[0], || format!("no increase: {shown}"))?;
    Ok(format!("t0 days traded {shown}"))
}

fn feature_importance() -> Outcome {
    let t = trained().as_ref().map_err(Clone::clone)?;
    let spec = PerturbationSpec {
        param: DistParam::Mu,
        direction: Direction::Up,
        epsilon: IMPORTANCE_EPS,
        iterations: 1,
    };
    let windows = &t.data.test[..IMPORTANCE_WINDOWS.min(t.data.test.len())];
    let mut shares = Vec::new();
    for w in windows {
        let res = perturb(&t.model, &w.z_history, &w.covariates, &spec, &t.data.bounds)
            .map_err(|e| e.to_string())?;
        let l1 = feature_l1(&res);
        let total: f64 = l1.iter().sum();
        shares.push(if total > 0.0 { l1[0] / total } else { 0.0 });
    }
    let share = shares.iter().sum::<f64>() / shares.len() as f64;
    ensure(share >= IMPORTANCE_MIN_SHARE, || {
        format!(
            "mean share on f1 {:.1}% over {} windows",
            share * 100.0,
            shares.len()
        )
    })?;
    Ok(format!(
        "mean L1 share on f1 {:.1}% over {} windows (min {:.1}%)",
        share * 100.0,
        shares.len(),
        shares.iter().copied().fold(f64::INFINITY, f64::min) * 100.0
    ))
}

// 6 -------------------------------------------------------------------------

fn trading_oracle() -> Outcome {
    let mut r = rng(606);
    let day0 = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
    let mut mismatched_total = 0.0f64;
    for sc in 0..N_SCENARIOS {
        let n = r.random_range(0..60);
        let k = r.random_range(2..8);
        let mut opens = Vec::new();
        let mut closes = Vec::new();
        let mut forecasts = Vec::new();
        for _ in 0..n {
            let open = r.random_range(1.0..200.0);
            let y: f64 = match r.random_range(0..10) {
                0 => 0.0,
                _ => r.random_range(-0.05..0.05),
            };
            opens.push(open);
            closes.push(if y == 0.0 { open } else { open * (1.0 + y) });
            forecasts.push(match r.random_range(0..8) {
                0 => 0.0,
                _ => r.random_range(-0.03..0.03),
            });
        }
        let prices: Vec<PricePoint> = (0..n)
            .map(|i| PricePoint {
                timestamp: Timestamp::date(day0 + chrono::Days::new(i as u64)),
                open: opens[i],
                close: closes[i],
            })
            .collect();
        let rolling = r.random_bool(0.5);
        let kelly = r.random_bool(0.5);
        let spec = StrategySpec::new(
            if rolling {
                ThresholdKind::RollingMeanPlusStd
            } else {
                ThresholdKind::FixedZero
            },
            if kelly { Sizing::Kelly } else { Sizing::Full },
            k,
        )
        .map_err(|e| e.to_string())?;
        let got = backtest(&forecasts, &prices, &spec).map_err(|e| format!("scenario {sc}: {e}"))?;
        let want = reference_backtest(&forecasts, &opens, &closes, rolling, kelly, k);
        for (i, rec) in got.records.iter().enumerate() {
            let traded = rec.decision == fcstress_core::trading::Decision::Traded;
            ensure(traded == want.traded[i], || {
                format!("scenario {sc} period {i}: decision differs")
            })?;
            ensure(rec.fraction.to_bits() == want.fractions[i].to_bits(), || {
                format!(
                    "scenario {sc} period {i}: fraction {} vs {}",
                    rec.fraction, want.fractions[i]
                )
            })?;
        }
        let diff = (got.compounded_return_pct - want.compounded_pct).abs();
        mismatched_total = mismatched_total.max(diff);
        ensure(diff <= COMPOUND_TOL, || {
            format!(
                "scenario {sc}: compounded {} vs {}",
                got.compounded_return_pct, want.compounded_pct
            )
        })?;
        ensure(got.pct_traded == want.pct_traded, || {
            format!("scenario {sc}: pct traded differs")
        })?;
    }
    Ok(format!(
        "{N_SCENARIOS} scenarios: decisions and fractions bit-identical, max compounded gap {mismatched_total:.1e}"
    ))
}

// 7 -------------------------------------------------------------------------

fn metric_oracles() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() <= METRIC_TOL;
    let e = |e: fcstress_core::Error| e.to_string();
    let checks = [
        (
            "rmse y=yhat",
            rmse(&[0.3, -1.2, 4.0], &[0.3, -1.2, 4.0]).map_err(e)?,
            0.0,
        ),
        (
            "rmse {0,0} vs {1,1}",
            rmse(&[0.0, 0.0], &[1.0, 1.0]).map_err(e)?,
            1.0,
        ),
        (
            "rmse {1,3} vs {2,5}",
            rmse(&[1.0, 3.0], &[2.0, 5.0]).map_err(e)?,
            2.5f64.sqrt(),
        ),
        (
            "mape y=yhat",
            mape(&[0.3, -1.2], &[0.3, -1.2])
                .map_err(e)?
                .value
                .unwrap_or(f64::NAN),
            0.0,
        ),
        (
            "mape {1,2} vs {2,4}",
            mape(&[1.0, 2.0], &[2.0, 4.0])
                .map_err(e)?
                .value
                .unwrap_or(f64::NAN),
            1.0,
        ),
        (
            "mape {2} vs {1}",
            mape(&[2.0], &[1.0]).map_err(e)?.value.unwrap_or(f64::NAN),
            0.5,
        ),
    ];
    for (name, got, want) in checks {
        ensure(close(got, want), || format!("{name}: {got} vs {want}"))?;
    }

    let kelly = [(0.6, 2.0, 0.4), (1.0, 3.0, 1.0), (0.5, 1.0, 0.0)];
    for (w, ratio, want) in kelly {
        let got = kelly_fraction(w, ratio);
        ensure(close(got.fraction, want) && !got.fallback, || {
            format!("kelly(W={w}, R={ratio}) = {:?}, expected {want}", got)
        })?;
    }

    let mut r = rng(707);
    let samples: Vec<f64> = (0..CRPS_SAMPLES).map(|_| StandardNormal.sample(&mut r)).collect();
    let got = crps_empirical(&samples, 0.0).map_err(e)?;
    let pdf0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let want = 2.0 * pdf0 - 1.0 / std::f64::consts::PI.sqrt();
    ensure(((got - want) / want).abs() < CRPS_REL_TOL, || {
        format!("crps {got} vs closed form {want}")
    })?;
    Ok(format!(
        "rmse/mape exact to {METRIC_TOL:.0e}; kelly 0.4, 1, 0; crps {got:.5} vs {want:.5} ({:.2}% off)",
        ((got - want) / want).abs() * 100.0
    ))
}

// 9 -------------------------------------------------------------------------

fn splits() -> Outcome {
    let w = WindowSpec::new(10, 1).map_err(|e| e.to_string())?;
    let cases = [
        (1306, Frequency::Daily, (0..1150, 1150..1190, 1190..1306)),
        (2890, Frequency::Hourly, (0..2550, 2550..2700, 2700..2890)),
    ];
    for (len, freq, (train, valid, test)) in cases {
        let s = apply_split(len, freq, &w).map_err(|e| e.to_string())?;
        ensure(s.train == train && s.valid == valid && s.test == test, || {
            format!("{len} {freq:?}: got {:?} {:?} {:?}", s.train, s.valid, s.test)
        })?;
    }
    Ok("daily [0,1150) [1150,1190) [1190,1306); hourly [0,2550) [2550,2700) [2700,2890)".into())
}

// 10 ------------------------------------------------------------------------

const SMOKE_CONFIG: &str = include_str!("../../../configs/smoke.toml");

fn collect(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Drops the `generated_at` line, the only wall-clock content.
fn without_timestamp(bytes: &[u8]) -> Vec<u8> {
    String::from_utf8_lossy(bytes)
        .lines()
        .filter(|l| !l.contains("\"generated_at\""))
        .collect::<Vec<_>>()
        .join("\n")
        .into_bytes()
}

fn determinism() -> Outcome {
    let base = RunConfig::from_toml_str(SMOKE_CONFIG).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    let mut dirs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut cfg = base.clone();
        cfg.output_dir = Some(dir.path().to_path_buf());
        run_pipeline(&cfg).map_err(|e| e.to_string())?;
        outputs.push(collect(dir.path()));
        dirs.push(dir);
    }
    let (a, b) = (&outputs[0], &outputs[1]);
    ensure(a.keys().eq(b.keys()), || "file sets differ".into())?;
    ensure(a.len() > 1, || "no reports written".into())?;
    for (name, bytes) in a {
        let other = &b[name];
        let same = if name.ends_with(".json") {
            without_timestamp(bytes) == without_timestamp(other)
        } else {
            bytes == other
        };
        ensure(same, || format!("{name} differs between runs"))?;
    }
    let total: usize = a.values().map(Vec::len).sum();
    Ok(format!(
        "{} files ({total} bytes) identical across two runs",
        a.len()
    ))
}
