use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fcstress_core::forecaster::train;
use fcstress_core::pipeline::{
    self, compute_reports, emit_report, prepare, simulate_to_dir, write_json, Evaluator, Overrides, Reports,
    RunConfig, SettingReport, Summary, CHECKPOINT_FILE, SUMMARY_FILE,
};
use fcstress_core::trading::passive_return;
use fcstress_core::{Direction, DistParam, Error, ErrorKind, Forecaster, ModelParams};

mod render;

#[derive(Parser, Debug)]
#[command(
    name = "fcstress",
    version,
    about = "Probabilistic forecasting, covariate stress tests and trading backtests"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic prices.csv and features.csv.
    SimulateData(Common),
    /// Train a forecaster and write model.json.
    Train(Common),
    /// Backtest a trained model on the test split.
    Backtest(WithModel),
    /// Perturb test-split covariates and re-backtest.
    Stress(WithModel),
    /// Run the whole pipeline end to end.
    Run(Common),
    /// Print a summary written by `run`.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the file value.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the file value.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated ε values.
    #[arg(long, value_delimiter = ',')]
    epsilon: Option<Vec<f64>>,
    /// Forecast parameter to push: mu, sigma or nu.
    #[arg(long, value_parser = parse_param)]
    param: Option<DistParam>,
    /// Push direction: up or down.
    #[arg(long, value_parser = parse_direction)]
    direction: Option<Direction>,
    /// Perturbation passes R.
    #[arg(long)]
    iterations: Option<usize>,
    /// `t0` or `t-musigma`, optionally followed by `,kelly`.
    #[arg(long)]
    strategy: Option<String>,
}

#[derive(Args, Debug)]
struct WithModel {
    #[command(flatten)]
    common: Common,
    /// Checkpoint to evaluate; defaults to `<out>/model.json`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Directory holding summary.json, or the file itself.
    #[arg(long)]
    out: PathBuf,
}

fn parse_param(s: &str) -> Result<DistParam, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

const DEFAULT_OUT: &str = "out";

impl Common {
    fn load(&self) -> Result<(RunConfig, PathBuf), Error> {
        let mut cfg = RunConfig::from_file(&self.config)?;
        cfg.apply(&Overrides {
            seed: self.seed,
            output_dir: self.out.clone(),
            epsilons: self.epsilon.clone(),
            param: self.param,
            direction: self.direction,
            iterations: self.iterations,
            strategy: self.strategy.clone(),
        })?;
        let out = cfg
            .output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        cfg.output_dir = Some(out.clone());
        Ok((cfg, out))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data | ErrorKind::Io => 3,
        ErrorKind::Numeric => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::SimulateData(c) => simulate(&c),
        Command::Train(c) => train_cmd(&c),
        Command::Backtest(m) => evaluate_cmd(&m, false),
        Command::Stress(m) => evaluate_cmd(&m, true),
        Command::Run(c) => run_cmd(&c),
        Command::Report(r) => report_cmd(&r),
    }
}

fn simulate(c: &Common) -> Result<(), Error> {
    let (cfg, out) = c.load()?;
    let (p, f) = simulate_to_dir(&cfg, &out)?;
    println!("wrote {}", p.display());
    println!("wrote {}", f.display());
    Ok(())
}

fn train_cmd(c: &Common) -> Result<(), Error> {
    let (cfg, out) = c.load()?;
    let cfg = cfg.resolved();
    let data = prepare(&cfg)?;
    let (params, log) = train(&data.train, &data.valid, &cfg.train).map_err(|e| Error::Stage {
        stage: "train",
        source: Box::new(e),
    })?;
    std::fs::create_dir_all(&out).map_err(|e| Error::Io {
        path: out.clone(),
        source: e,
    })?;
    let ckpt = out.join(CHECKPOINT_FILE);
    params.save(&ckpt)?;
    write_json(&out.join("training_log.json"), &log)?;
    println!(
        "trained {} epochs (best epoch {}, valid NLL {:.6})",
        log.epochs.len(),
        log.best_epoch,
        log.best_valid_nll
    );
    println!("wrote {}", ckpt.display());
    Ok(())
}

fn evaluate_cmd(m: &WithModel, stress: bool) -> Result<(), Error> {
    let (cfg, out) = m.common.load()?;
    let cfg = cfg.resolved();
    let ckpt = m.checkpoint.clone().unwrap_or_else(|| out.join(CHECKPOINT_FILE));
    let params = ModelParams::load(&ckpt)?;
    let data = prepare(&cfg)?;
    let model = Forecaster::new(params, data.window.horizon);
    let eval = Evaluator::new(&cfg, &model, &data)?;

    let mut reports = Reports {
        feature_names: data.features.names().to_vec(),
        ..Default::default()
    };
    let mut settings: Vec<SettingReport> = Vec::new();
    let regular = eval.regular()?;
    reports.add_evaluation(&data, &regular, cfg.metrics.kde_grid)?;
    settings.push(regular.report);
    if stress {
        for spec in cfg.stress.specs() {
            let e = eval.stressed(&spec)?;
            reports.add_evaluation(&data, &e, cfg.metrics.kde_grid)?;
            settings.push(e.report);
        }
    }
    let written = emit_report(&reports, &out)?;
    let name = if stress {
        "stress_summary.json"
    } else {
        "backtest_summary.json"
    };
    write_json(&out.join(name), &settings)?;

    let passive = passive_return(&data.test_prices())?;
    print!("{}", render::settings(&settings, passive));
    for p in written
        .iter()
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
    {
        println!("wrote {}", p.display());
    }
    println!("wrote {}", out.join(name).display());
    Ok(())
}

fn run_cmd(c: &Common) -> Result<(), Error> {
    let (cfg, out) = c.load()?;
    let reports = compute_reports(&cfg)?;
    emit_report(&reports, &out).map_err(|e| Error::Stage {
        stage: "emit",
        source: Box::new(e),
    })?;
    if let Some(s) = &reports.summary {
        print!("{}", render::summary(s));
    }
    println!("reports written to {}", out.display());
    Ok(())
}

fn summary_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(SUMMARY_FILE)
    } else {
        p.to_path_buf()
    }
}

fn report_cmd(r: &ReportArgs) -> Result<(), Error> {
    let summary: Summary = pipeline::Summary::load(&summary_path(&r.out))?;
    print!("{}", render::summary(&summary));
    Ok(())
}
