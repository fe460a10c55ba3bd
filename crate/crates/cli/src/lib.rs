//! Command-line driver: train, backtest, compare, plot, gradcheck and synth.

pub mod config;
pub mod plot;

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};
use qadqn_core::backtest::{self, BacktestConfig, BacktestReport, Policy};
use qadqn_core::gradcheck::{self, GroupReport};
use qadqn_core::market_data::{self, PriceSeries};
use qadqn_core::network::{ModelFile, Network, NetworkParams};
use qadqn_core::policy::GreedyPolicy;
use qadqn_core::strategies::{BuyAndHold, DualThrustPolicy};
use qadqn_core::training;
use qadqn_core::{Error, ErrorKind};

pub use config::RunConfig;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "qadqn", version, about = "Quantum-attention deep Q-network trading agent")]
pub struct Cli {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct EvalArgs {
    /// Model file written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Commission rate per trade, as a fraction of notional.
    #[arg(long)]
    pub commission: Option<f64>,
    /// First date kept (inclusive, YYYY-MM-DD).
    #[arg(long)]
    pub from: Option<NaiveDate>,
    /// Last date kept (inclusive, YYYY-MM-DD).
    #[arg(long)]
    pub to: Option<NaiveDate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    Gbm,
    Sinusoid,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write model.json and episodes.csv.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Greedy backtest of a model; writes report.json and trades.csv.
    Backtest(EvalArgs),
    /// QADQN, Dual Thrust and Buy & Hold over the same bars.
    Compare(EvalArgs),
    /// Chart closes and trades as chart.svg.
    Plot {
        #[arg(long)]
        trades: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Analytic gradients against finite differences.
    Gradcheck {
        /// Overrides every group's tolerance.
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Write a synthetic price series as CSV.
    Synth {
        #[arg(long, value_enum, default_value = "gbm")]
        kind: SynthKind,
        #[arg(long, default_value_t = 1000)]
        len: usize,
        #[arg(long, default_value_t = 100.0)]
        s0: f64,
        #[arg(long, default_value_t = 0.05)]
        mu: f64,
        #[arg(long, default_value_t = 0.2)]
        sigma: f64,
        #[arg(long, default_value_t = 10.0)]
        amplitude: f64,
        #[arg(long, default_value_t = 50.0)]
        period: f64,
        /// File name inside the output directory.
        #[arg(long, default_value = "synth.csv")]
        name: String,
    },
}

/// A failed command: message plus process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.kind() {
            ErrorKind::Config => EXIT_CONFIG,
            ErrorKind::Data => EXIT_DATA,
            ErrorKind::Numeric => EXIT_NUMERIC,
            ErrorKind::Other => EXIT_FAILURE,
        };
        Self::new(code, e.to_string())
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

/// Effective settings after the config file and global flags are merged.
struct Context {
    config: RunConfig,
    /// Whether the configuration came from a file rather than the defaults.
    explicit: bool,
}

impl Context {
    fn new(cli: &Cli) -> Outcome<Self> {
        let mut config = match &cli.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = cli.seed {
            config.train.seed = seed;
        }
        if let Some(out) = &cli.out {
            config.out = out.clone();
        }
        config.validate()?;
        Ok(Self {
            config,
            explicit: cli.config.is_some(),
        })
    }

    fn out_dir(&self) -> Outcome<&Path> {
        let dir = self.config.out.as_path();
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(dir)
    }

    fn out_file(&self, name: &str) -> Outcome<PathBuf> {
        Ok(self.out_dir()?.join(name))
    }

    fn data(&self, flag: &Option<PathBuf>) -> Outcome<PriceSeries> {
        let path = flag
            .as_ref()
            .or(self.config.data.as_ref())
            .ok_or_else(|| Failure::new(EXIT_CONFIG, "no data file: pass --data or set `data` in the config"))?;
        Ok(market_data::load_csv(path)?)
    }
}

pub fn run(cli: &Cli) -> Outcome<()> {
    let mut ctx = Context::new(cli)?;
    match &cli.command {
        Command::Train { data, episodes } => {
            if let Some(e) = episodes {
                ctx.config.train.episodes = *e;
            }
            cmd_train(&ctx, data)
        }
        Command::Backtest(args) => cmd_backtest(&ctx, args),
        Command::Compare(args) => cmd_compare(&ctx, args),
        Command::Plot { trades, data } => cmd_plot(&ctx, trades, data),
        Command::Gradcheck { tolerance } => cmd_gradcheck(&ctx, *tolerance),
        Command::Synth {
            kind,
            len,
            s0,
            mu,
            sigma,
            amplitude,
            period,
            name,
        } => {
            let series = match kind {
                SynthKind::Gbm => market_data::gbm_series(*s0, *mu, *sigma, 1.0 / 252.0, *len, ctx.config.seed())?,
                SynthKind::Sinusoid => market_data::sinusoid_series(*s0, *amplitude, *period, *len)?,
            };
            let path = ctx.out_file(name)?;
            market_data::write_csv(&series, &path)?;
            println!("wrote {} bars to {}", series.len(), path.display());
            Ok(())
        }
    }
}

fn cmd_train(ctx: &Context, data: &Option<PathBuf>) -> Outcome<()> {
    let config = &ctx.config;
    let series = ctx.data(data)?;
    let network = Network::new(config.network.clone())?;
    let init = network.init_params(config.seed());
    let started = Instant::now();
    let outcome = training::train(&series, &network, init, &config.train)?;

    let model = ModelFile::new(&network, &outcome.params, config.to_json(), config.seed());
    let model_path = ctx.out_file("model.json")?;
    model.save(&model_path)?;
    let log_path = ctx.out_file("episodes.csv")?;
    training::save_episode_log(&outcome.logs, &log_path)?;

    match outcome.logs.last() {
        Some(last) => println!(
            "episode {}/{}: cumulative reward {:.4}, mean loss {:.6}, {} updates",
            last.episode + 1,
            config.train.episodes,
            last.cum_reward,
            last.mean_loss,
            outcome.params.version
        ),
        None => println!("no episodes run; model holds the initial parameters"),
    }
    println!(
        "{} demonstrations, {:.1}s; wrote {} and {}",
        outcome.demonstrations,
        started.elapsed().as_secs_f64(),
        model_path.display(),
        log_path.display()
    );
    Ok(())
}

/// Loads the model and, when a config file was given, checks that it
/// describes the same network shape.
fn load_model(ctx: &Context, path: &Path) -> Outcome<(Network, NetworkParams)> {
    let (network, params) = ModelFile::load(path)?.restore()?;
    if ctx.explicit {
        let (want, got) = (&ctx.config.network, network.config());
        if want.window != got.window || want.qubits != got.qubits {
            return Err(Failure::new(
                EXIT_CONFIG,
                format!(
                    "model {} has window {} and {} qubits, config asks for window {} and {} qubits",
                    path.display(),
                    got.window,
                    got.qubits,
                    want.window,
                    want.qubits
                ),
            ));
        }
    }
    Ok((network, params))
}

fn eval_setup(ctx: &Context, args: &EvalArgs) -> Outcome<(Network, NetworkParams, PriceSeries, BacktestConfig)> {
    let (network, params) = load_model(ctx, &args.model)?;
    let series = ctx.data(&args.data)?.between(args.from, args.to)?;
    let bt = BacktestConfig {
        commission: args.commission.unwrap_or(ctx.config.train.commission),
        initial_cash: ctx.config.initial_cash,
        start: None,
    };
    Ok((network, params, series, bt))
}

fn cmd_backtest(ctx: &Context, args: &EvalArgs) -> Outcome<()> {
    let (network, params, series, bt) = eval_setup(ctx, args)?;
    let mut policy = GreedyPolicy::new(&network, &params)?;
    let (report, trades) = backtest::run(&mut policy, &series, &bt)?;

    let report_path = ctx.out_file("report.json")?;
    let json = serde_json::to_string_pretty(&report.to_json()).map_err(Error::from)?;
    std::fs::write(&report_path, json + "\n").map_err(|source| Error::Io {
        path: report_path.clone(),
        source,
    })?;
    let trades_path = ctx.out_file("trades.csv")?;
    backtest::write_trades_csv(&trades, &trades_path)?;

    print_table(&[report]);
    println!("wrote {} and {}", report_path.display(), trades_path.display());
    Ok(())
}

fn cmd_compare(ctx: &Context, args: &EvalArgs) -> Outcome<()> {
    let (network, params, series, mut bt) = eval_setup(ctx, args)?;
    // Every strategy starts at the same bar so the rows are comparable.
    bt.start = Some(network.config().window.max(ctx.config.train.dual_thrust.lookback));
    let mut greedy = GreedyPolicy::new(&network, &params)?;
    let mut thrust = DualThrustPolicy {
        params: ctx.config.train.dual_thrust,
    };
    let mut hold = BuyAndHold;
    let policies: [&mut dyn Policy; 3] = [&mut greedy, &mut thrust, &mut hold];
    let mut reports = Vec::new();
    for policy in policies {
        reports.push(backtest::run(policy, &series, &bt)?.0);
    }
    print_table(&reports);
    Ok(())
}

fn metric(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"))
}

fn print_table(reports: &[BacktestReport]) {
    println!(
        "{:<12} {:>10} {:>8} {:>8} {:>8} {:>7}",
        "strategy", "return %", "sharpe", "sortino", "maxdd %", "trades"
    );
    for r in reports {
        println!(
            "{:<12} {:>10.2} {:>8} {:>8} {:>8.2} {:>7}",
            r.strategy,
            r.return_pct,
            metric(r.sharpe),
            metric(r.sortino),
            r.max_drawdown_pct,
            r.trades
        );
    }
}

fn cmd_plot(ctx: &Context, trades: &Path, data: &Option<PathBuf>) -> Outcome<()> {
    let series = ctx.data(data)?;
    let trades = backtest::read_trades_csv(trades)?;
    let svg = plot::render(&series, &trades).map_err(|e| Failure::new(EXIT_DATA, e.to_string()))?;
    let path = ctx.out_file("chart.svg")?;
    std::fs::write(&path, svg).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_gradcheck(ctx: &Context, tolerance: Option<f64>) -> Outcome<()> {
    let seed = ctx.config.seed();
    let network = Network::new(ctx.config.network.clone())?;
    let params = network.init_params(seed);

    let mut rows: Vec<(GroupReport, f64)> = Vec::new();
    let circuit = gradcheck::circuit_check(network.postnet_circuit(), 20, seed)?;
    rows.push((circuit, tolerance.unwrap_or(gradcheck::CIRCUIT_TOLERANCE)));
    for r in gradcheck::network_check(&network, &params, 2, seed)? {
        rows.push((r, tolerance.unwrap_or(gradcheck::NETWORK_TOLERANCE)));
    }

    println!("{:<12} {:>8} {:>14} {:>10}", "group", "checked", "max rel err", "tolerance");
    let mut failed = Vec::new();
    for (r, tol) in &rows {
        let verdict = if r.passes(*tol) { "ok" } else { "FAIL" };
        println!(
            "{:<12} {:>8} {:>14.3e} {:>10.1e} {verdict}",
            r.group, r.checked, r.max_relative_error, tol
        );
        if !r.passes(*tol) {
            failed.push(r.group.clone());
        }
    }
    let reports: Vec<&GroupReport> = rows.iter().map(|(r, _)| r).collect();
    let path = ctx.out_file("gradcheck.json")?;
    let json = serde_json::to_string_pretty(&reports).map_err(Error::from)?;
    std::fs::write(&path, json + "\n").map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;

    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::new(
            EXIT_FAILURE,
            format!("gradient check failed for group(s): {}", failed.join(", ")),
        ))
    }
}
