use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use stockloss::data::{self, SynthConfig};
use stockloss::experiment::{self, DataConfig, ExperimentConfig};
use stockloss::gradcheck::{self, GradcheckConfig};
use stockloss::model::Architecture;
use stockloss::{Error, LossVariant, SignalSource};

#[derive(Parser, Debug)]
#[command(name = "stockloss", version, about = "Train and backtest profit-driven portfolio forecasters")]
struct Cli {
    /// Global seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (for `synth`, the CSV file to write).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Experiment config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic feature panel as CSV.
    Synth(SynthArgs),
    /// Train a forecaster and write checkpoint, history and per-restart results.
    Train(TrainArgs),
    /// Backtest a checkpoint on the test year.
    Backtest(BacktestArgs),
    /// Check analytic loss gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Mann-Whitney U tests between the per-restart test profits of runs.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    stocks: Option<usize>,
    #[arg(long)]
    days: Option<usize>,
    /// Stocks with positive drift.
    #[arg(long)]
    up: Option<usize>,
    /// Stocks with negative drift (after the up-drifting ones).
    #[arg(long)]
    down: Option<usize>,
    /// Daily drift magnitude for trending stocks.
    #[arg(long)]
    drift: Option<f64>,
    /// Daily log-volatility.
    #[arg(long)]
    vol: Option<f64>,
    /// First trading day (YYYY-MM-DD).
    #[arg(long)]
    start: Option<NaiveDate>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SourceArg {
    Return,
    Price,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ArchArg {
    Linear,
    Mlp,
}

fn parse_variant(s: &str) -> Result<LossVariant, String> {
    LossVariant::from_str(s).map_err(|e| e.to_string())
}

#[derive(Args, Debug)]
struct DataOverride {
    /// Use this panel CSV instead of the configured data source.
    #[arg(long)]
    panel: Option<PathBuf>,
    #[arg(long)]
    test_year: Option<i32>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataOverride,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long, value_enum)]
    arch: Option<ArchArg>,
    /// Loss variant: StockLoss, StockLossMax, StockLossL2 or StockLossNorm.
    #[arg(long, value_parser = parse_variant)]
    loss: Option<LossVariant>,
    /// Use exact |x| and sign(x) instead of the tanh relaxation.
    #[arg(long)]
    nonsmooth: bool,
    /// Add the hold node.
    #[arg(long)]
    hold: bool,
    #[arg(long, value_enum)]
    source: Option<SourceArg>,
}

#[derive(Args, Debug)]
struct BacktestArgs {
    #[command(flatten)]
    data: DataOverride,
    /// Checkpoint to evaluate (default: `<out>/checkpoint`).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    cost_bps: Option<f64>,
    /// Scale PnL by the initial budget instead of compounding.
    #[arg(long)]
    simple_interest: bool,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    points: usize,
    #[arg(long, default_value_t = 5)]
    stocks: usize,
    #[arg(long, default_value_t = stockloss::losses::DEFAULT_GAMMA)]
    gamma: f64,
    /// Also measure the gradient jump of the non-smooth loss at zero.
    #[arg(long)]
    include_nonsmooth_at_zero: bool,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Run directories containing restarts.csv.
    #[arg(required = true, num_args = 2..)]
    runs: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn base_config(cli: &Cli) -> stockloss::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn apply_data(cfg: &mut ExperimentConfig, d: &DataOverride) {
    if let Some(path) = &d.panel {
        cfg.data = DataConfig::Csv { path: path.clone() };
    }
    if let Some(y) = d.test_year {
        cfg.split.test_year = y;
    }
}

fn run(cli: Cli) -> stockloss::Result<ExitCode> {
    match &cli.command {
        Command::Synth(a) => synth(&cli, a),
        Command::Train(a) => train(&cli, a),
        Command::Backtest(a) => backtest(&cli, a),
        Command::Gradcheck(a) => gradcheck_cmd(&cli, a),
        Command::Compare(a) => compare(a),
    }
}

/// Flags override the config's synthetic data section, which overrides
/// the built-in defaults.
fn synth(cli: &Cli, a: &SynthArgs) -> stockloss::Result<ExitCode> {
    let cfg = base_config(cli)?;
    let base = match (&cli.config, &cfg.data) {
        (Some(_), DataConfig::Synth { .. }) => cfg.data.clone(),
        _ => DataConfig::Synth {
            n_stocks: 10,
            n_days: 1305,
            up: 0,
            down: 0,
            drift: 0.0005,
            vol: 0.015,
            start: data::DEFAULT_START,
            seed: None,
        },
    };
    let DataConfig::Synth {
        n_stocks,
        n_days,
        up,
        down,
        drift,
        vol,
        start,
        seed,
    } = base
    else {
        unreachable!("base is always synthetic")
    };
    let n_stocks = a.stocks.unwrap_or(n_stocks);
    let (up, down) = (a.up.unwrap_or(up), a.down.unwrap_or(down));
    if up + down > n_stocks {
        return Err(Error::InvalidParameter(format!(
            "up ({up}) + down ({down}) exceeds the stock count ({n_stocks})"
        )));
    }
    let seed = cli.seed.or(seed).unwrap_or(cfg.seed);
    let synth = SynthConfig {
        start: a.start.unwrap_or(start),
        ..SynthConfig::trend(
            n_stocks,
            a.days.unwrap_or(n_days),
            seed,
            up,
            down,
            a.drift.unwrap_or(drift),
            a.vol.unwrap_or(vol),
        )
    };
    let panel = synth.generate()?;
    let path = cli.out.clone().unwrap_or_else(|| PathBuf::from("panel.csv"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    data::save_csv(&panel, &path)?;
    println!(
        "wrote {} ({} stocks x {} days, {} to {})",
        path.display(),
        panel.n_stocks(),
        panel.n_days(),
        panel.dates()[0],
        panel.dates()[panel.n_days() - 1]
    );
    Ok(ExitCode::SUCCESS)
}

fn train(cli: &Cli, a: &TrainArgs) -> stockloss::Result<ExitCode> {
    let mut cfg = base_config(cli)?;
    apply_data(&mut cfg, &a.data);
    let t = &mut cfg.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.restarts {
        t.n_restarts = v;
    }
    if let Some(v) = a.lr {
        t.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.loss {
        t.loss.variant = v;
    }
    if a.nonsmooth {
        t.loss.smooth = false;
    }
    if a.hold {
        t.loss.use_hold = true;
    }
    if let Some(s) = a.source {
        t.loss.signal_source = match s {
            SourceArg::Return => SignalSource::Return,
            SourceArg::Price => SignalSource::Price,
        };
    }
    if let Some(v) = a.seq_len {
        cfg.model.seq_len = v;
    }
    if let Some(arch) = a.arch {
        cfg.model.architecture = match arch {
            ArchArg::Linear => Architecture::Linear,
            ArchArg::Mlp => Architecture::Mlp,
        };
    }

    let run = experiment::run_train(&cfg)?;
    for w in &run.warnings {
        eprintln!("warning: {w}");
    }
    let sel = &run.outcome.restarts[run.outcome.selected];
    println!("loss: {}", cfg.train.loss.label());
    println!(
        "selected restart {} of {}: validation profit {:.4}%, test profit {:.4}%",
        sel.restart,
        run.outcome.restarts.len(),
        sel.validation_profit_pct,
        run.test_profits[run.outcome.selected]
    );
    println!("wrote {}", cfg.out.display());
    Ok(ExitCode::SUCCESS)
}

fn backtest(cli: &Cli, a: &BacktestArgs) -> stockloss::Result<ExitCode> {
    let mut cfg = base_config(cli)?;
    apply_data(&mut cfg, &a.data);
    if let Some(bps) = a.cost_bps {
        cfg.backtest.transaction_cost_bps = bps;
    }
    if a.simple_interest {
        cfg.backtest.compounding = false;
    }
    let checkpoint = a.checkpoint.clone().unwrap_or_else(|| cfg.out.join(experiment::CHECKPOINT));
    let run = experiment::run_backtest(&cfg, &checkpoint)?;
    print!("{}", run.summary.render());
    Ok(ExitCode::SUCCESS)
}

fn gradcheck_cmd(cli: &Cli, a: &GradcheckArgs) -> stockloss::Result<ExitCode> {
    let gc = GradcheckConfig {
        points: a.points,
        n_stocks: a.stocks,
        gamma: a.gamma,
        seed: cli.seed.unwrap_or(0),
        include_nonsmooth_at_zero: a.include_nonsmooth_at_zero,
        ..GradcheckConfig::default()
    };
    let report = gradcheck::run(&gc)?;
    print!("{}", report.render());
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn compare(a: &CompareArgs) -> stockloss::Result<ExitCode> {
    let report = experiment::compare_dirs(&a.runs, a.alpha)?;
    print!("{}", report.render());
    Ok(ExitCode::SUCCESS)
}
