//! Experiment configuration and the file-producing pipeline behind the
//! command-line tool.
//!
//! A run directory holds fixed file names so other commands can find
//! results without a manifest:
//!
//! | file          | written by | contents                                   |
//! |---------------|------------|--------------------------------------------|
//! | `config.echo` | train      | the fully resolved config, as TOML         |
//! | `checkpoint`  | train      | selected model, scaler, tickers (JSON)     |
//! | `history.csv` | train      | per-epoch loss and validation profit       |
//! | `restarts.csv`| train      | validation and test profit per restart     |
//! | `ledger.csv`  | backtest   | daily capital on the test year             |
//! | `summary.txt` | backtest   | model vs buy-and-hold profit               |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::backtest::{self, mann_whitney_u, BacktestConfig, BacktestLedger, MannWhitney, Summary};
use crate::data::{self, FeaturePanel, PanelWarning, Segment, Split, SplitSpec, SynthConfig};
use crate::error::{Error, Result};
use crate::model::{
    self, decide_segment, Architecture, Checkpoint, Dataset, ModelConfig, Network, RestartStatus, TrainConfig,
    TrainOutcome,
};

pub const SCHEMA_VERSION: u32 = 1;

pub const CONFIG_ECHO: &str = "config.echo";
pub const CHECKPOINT: &str = "checkpoint";
pub const HISTORY: &str = "history.csv";
pub const RESTARTS: &str = "restarts.csv";
pub const LEDGER: &str = "ledger.csv";
pub const SUMMARY: &str = "summary.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataConfig {
    Csv {
        path: PathBuf,
    },
    /// `up` stocks drift up by `drift` per day, the next `down` drift down,
    /// the rest are driftless.
    Synth {
        n_stocks: usize,
        n_days: usize,
        up: usize,
        down: usize,
        drift: f64,
        vol: f64,
        #[serde(default = "default_start")]
        start: NaiveDate,
        /// Defaults to the experiment seed.
        #[serde(default)]
        seed: Option<u64>,
    },
}

fn default_start() -> NaiveDate {
    data::DEFAULT_START
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synth {
            n_stocks: 10,
            n_days: 1305,
            up: 3,
            down: 3,
            drift: 0.001,
            vol: 0.01,
            start: default_start(),
            seed: None,
        }
    }
}

/// The model settings a user picks; stock count, feature count, hold node
/// and seed are filled in from the data, loss and experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub architecture: Architecture,
    pub hidden_width: usize,
    pub seq_len: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let base = ModelConfig::new(Architecture::Linear, 1);
        ModelSection {
            architecture: base.architecture,
            hidden_width: base.hidden_width,
            seq_len: base.seq_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default = "default_split")]
    pub split: SplitSpec,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub backtest: BacktestConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("run")
}

fn default_split() -> SplitSpec {
    SplitSpec { test_year: 1998 }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            out: default_out(),
            data: DataConfig::default(),
            split: default_split(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            backtest: BacktestConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks everything that can be checked without touching the data.
    pub fn validate(&self) -> Result<()> {
        if let DataConfig::Synth {
            n_stocks, up, down, ..
        } = &self.data
        {
            if up + down > *n_stocks {
                return Err(Error::InvalidParameter(format!(
                    "synthetic data: up ({up}) + down ({down}) exceeds n_stocks ({n_stocks})"
                )));
            }
        }
        self.train.validate()?;
        self.backtest.validate()?;
        self.model_config(1).validate()
    }

    pub fn model_config(&self, n_stocks: usize) -> ModelConfig {
        ModelConfig {
            architecture: self.model.architecture,
            hidden_width: self.model.hidden_width,
            seq_len: self.model.seq_len,
            n_stocks,
            n_features: data::N_FEATURES,
            use_hold: self.train.loss.use_hold,
            seed: self.seed,
        }
    }

    pub fn load_panel(&self) -> Result<(FeaturePanel, Vec<PanelWarning>)> {
        match &self.data {
            DataConfig::Csv { path } => data::load_csv(path),
            DataConfig::Synth {
                n_stocks,
                n_days,
                up,
                down,
                drift,
                vol,
                start,
                seed,
            } => {
                let synth = SynthConfig {
                    start: *start,
                    ..SynthConfig::trend(*n_stocks, *n_days, seed.unwrap_or(self.seed), *up, *down, *drift, *vol)
                };
                Ok((synth.generate()?, Vec::new()))
            }
        }
    }
}

/// What `train` produced, for callers that want more than the files.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub outcome: TrainOutcome,
    pub split: Split,
    pub test_profits: Vec<f64>,
    pub warnings: Vec<PanelWarning>,
}

/// Test-year profit of a network on a split.
pub fn test_profit(net: &Network, data: &Dataset, split: &Split, cfg: &BacktestConfig) -> Result<BacktestLedger> {
    let decisions = decide_segment(net, data, split, Segment::Test)?;
    backtest::run_backtest(&split.trading_panel(Segment::Test), &decisions, cfg)
}

/// Trains and writes `config.echo`, `checkpoint`, `history.csv` and
/// `restarts.csv` into `cfg.out`. Nothing is written if validation,
/// loading or training fails.
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainRun> {
    cfg.validate()?;
    let (panel, warnings) = cfg.load_panel()?;
    let split = data::split(&panel, cfg.split)?;
    let model_cfg = cfg.model_config(panel.n_stocks());
    let outcome = model::train(&split, &model_cfg, &cfg.train, &cfg.backtest)?;

    let data = Dataset::new(
        split.history(),
        &outcome.scaler,
        model_cfg.seq_len,
        cfg.train.loss.signal_source,
    )?;
    let mut test_profits = Vec::with_capacity(outcome.restarts.len());
    for r in &outcome.restarts {
        let profit = match &r.params {
            Some(params) => {
                let net = Network::new(model_cfg, params.clone())?;
                test_profit(&net, &data, &split, &cfg.backtest)?.profit_pct
            }
            None => f64::NAN,
        };
        test_profits.push(profit);
    }

    let echo = cfg.to_toml()?;
    let checkpoint = Checkpoint::new(&outcome.network, &outcome.scaler, panel.tickers());
    let out = &cfg.out;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join(CONFIG_ECHO), &echo)?;
    write_file(&out.join(HISTORY), &history_csv(&outcome))?;
    write_file(&out.join(RESTARTS), &restarts_csv(&outcome, &test_profits))?;
    checkpoint.save(out.join(CHECKPOINT))?;
    Ok(TrainRun {
        outcome,
        split,
        test_profits,
        warnings,
    })
}

fn history_csv(outcome: &TrainOutcome) -> String {
    let mut s = String::from("epoch,train_loss,validation_profit_pct\n");
    for rec in outcome.history() {
        let _ = writeln!(s, "{},{},{}", rec.epoch, rec.train_loss, rec.validation_profit_pct);
    }
    s
}

fn restarts_csv(outcome: &TrainOutcome, test_profits: &[f64]) -> String {
    let mut s = String::from("restart,status,selected,validation_profit_pct,test_profit_pct\n");
    for (r, test) in outcome.restarts.iter().zip(test_profits) {
        let status = match r.status {
            RestartStatus::Completed => "completed".to_string(),
            RestartStatus::Diverged { epoch } => format!("diverged@{epoch}"),
        };
        let _ = writeln!(
            s,
            "{},{status},{},{},{}",
            r.restart,
            r.restart == outcome.selected,
            r.validation_profit_pct,
            test
        );
    }
    s
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct BacktestRun {
    pub ledger: BacktestLedger,
    pub summary: Summary,
}

/// Backtests a checkpoint on the test year of the configured panel and
/// writes `ledger.csv` and `summary.txt` into `cfg.out`.
pub fn run_backtest(cfg: &ExperimentConfig, checkpoint_path: &Path) -> Result<BacktestRun> {
    cfg.backtest.validate()?;
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    let (panel, _) = cfg.load_panel()?;
    let net = checkpoint.network()?;
    if net.config.n_stocks != panel.n_stocks() || net.config.n_features != data::N_FEATURES {
        return Err(Error::Compatibility(format!(
            "checkpoint expects {} stocks x {} features, panel has {} x {}",
            net.config.n_stocks,
            net.config.n_features,
            panel.n_stocks(),
            data::N_FEATURES
        )));
    }
    if checkpoint.tickers != panel.tickers() {
        return Err(Error::Compatibility("panel tickers differ from the checkpoint's".into()));
    }
    let split = data::split(&panel, cfg.split)?;
    let data = Dataset::new(
        split.history(),
        &checkpoint.scaler,
        net.config.seq_len,
        cfg.train.loss.signal_source,
    )?;
    let ledger = test_profit(&net, &data, &split, &cfg.backtest)?;
    let summary = Summary::new(&ledger, &split.trading_panel(Segment::Test), &cfg.backtest)?;

    let out = &cfg.out;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    ledger.save_csv(out.join(LEDGER))?;
    write_file(&out.join(SUMMARY), &summary.render())?;
    Ok(BacktestRun { ledger, summary })
}

/// Per-restart test profits from a run directory's `restarts.csv`;
/// diverged restarts (non-finite profit) are skipped.
pub fn read_restart_profits(dir: &Path) -> Result<Vec<f64>> {
    let path = dir.join(RESTARTS);
    let mut reader = csv::Reader::from_path(&path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(&path, io),
        other => Error::Config(format!("{}: {other:?}", path.display())),
    })?;
    let headers = reader.headers()?.clone();
    let col = headers
        .iter()
        .position(|h| h == "test_profit_pct")
        .ok_or_else(|| Error::MissingColumn {
            path: path.clone(),
            column: "test_profit_pct".into(),
        })?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let field = rec.get(col).unwrap_or("");
        let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
            path: path.clone(),
            line: i as u64 + 2,
            field: "test_profit_pct".into(),
            value: field.to_string(),
        })?;
        if v.is_finite() {
            out.push(v);
        }
    }
    if out.is_empty() {
        return Err(Error::InsufficientData(format!("{}: no finite test profits", path.display())));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunProfits {
    pub name: String,
    pub profits: Vec<f64>,
}

impl RunProfits {
    pub fn mean(&self) -> f64 {
        self.profits.iter().sum::<f64>() / self.profits.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub a: usize,
    pub b: usize,
    pub test: MannWhitney,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub alpha: f64,
    pub runs: Vec<RunProfits>,
    pub pairs: Vec<Comparison>,
}

pub fn compare(runs: Vec<RunProfits>, alpha: f64) -> Result<CompareReport> {
    if runs.len() < 2 {
        return Err(Error::InvalidParameter("compare needs at least two runs".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let mut pairs = Vec::new();
    for a in 0..runs.len() {
        for b in a + 1..runs.len() {
            let test = mann_whitney_u(&runs[a].profits, &runs[b].profits)?;
            pairs.push(Comparison {
                a,
                b,
                significant: test.p_value < alpha,
                test,
            });
        }
    }
    Ok(CompareReport { alpha, runs, pairs })
}

pub fn compare_dirs(dirs: &[PathBuf], alpha: f64) -> Result<CompareReport> {
    if dirs.len() < 2 {
        return Err(Error::InvalidParameter("compare needs at least two run directories".into()));
    }
    let runs = dirs
        .iter()
        .map(|d| {
            Ok(RunProfits {
                name: d.display().to_string(),
                profits: read_restart_profits(d)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    compare(runs, alpha)
}

impl CompareReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<4} {:>4} {:>12} {:>12}  run", "id", "n", "mean_pct", "std_pct");
        for (i, r) in self.runs.iter().enumerate() {
            let mean = r.mean();
            let std = if r.profits.len() > 1 {
                (r.profits.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r.profits.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            let _ = writeln!(s, "{:<4} {:>4} {:>12.4} {:>12.4}  {}", i, r.profits.len(), mean, std, r.name);
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<4} {:<4} {:>10} {:>12} {:>7}  significant (alpha = {})",
            "a", "b", "U", "p_value", "method", self.alpha
        );
        for p in &self.pairs {
            let _ = writeln!(
                s,
                "{:<4} {:<4} {:>10.1} {:>12.6} {:>7}  {}",
                p.a,
                p.b,
                p.test.u,
                p.test.p_value,
                match p.test.method {
                    backtest::MwuMethod::Exact => "exact",
                    backtest::MwuMethod::Normal => "normal",
                },
                if p.significant { "yes" } else { "no" }
            );
        }
        s
    }
}
