use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, ModelConfig, ModelParams, Network, Scratch};
use crate::allocation::{allocate_slices, AllocationDecision, DEFAULT_EPSILON_FLOOR};
use crate::backtest::{run_backtest, BacktestConfig};
use crate::data::{Feature, FeaturePanel, Segment, Split};
use crate::error::{Error, Result};
use crate::losses::{LossConfig, SignalSource};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub n_restarts: usize,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 0.001,
            batch_size: 32,
            n_restarts: 10,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        if self.n_restarts == 0 {
            return Err(Error::InvalidParameter("n_restarts must be >= 1".into()));
        }
        self.loss.validate()
    }
}

/// Per-stock, per-feature standardisation fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub n_stocks: usize,
    pub n_features: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    /// A zero standard deviation is replaced by 1, so constant features
    /// map to 0.
    pub fn fit(panel: &FeaturePanel, rows: std::ops::Range<usize>) -> Result<Self> {
        if rows.is_empty() || rows.end > panel.n_days() {
            return Err(Error::InsufficientData("scaler needs at least one training row".into()));
        }
        let width = panel.n_stocks() * crate::data::N_FEATURES;
        let count = rows.len() as f64;
        let values = panel.values();
        let mut mean = vec![0.0; width];
        for t in rows.clone() {
            for (m, v) in mean.iter_mut().zip(&values[t * width..(t + 1) * width]) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; width];
        for t in rows {
            for ((acc, v), m) in var.iter_mut().zip(&values[t * width..(t + 1) * width]).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / count).sqrt();
                if s > 0.0 && s.is_finite() {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(FeatureScaler {
            n_stocks: panel.n_stocks(),
            n_features: crate::data::N_FEATURES,
            mean,
            std,
        })
    }

    pub fn transform(&self, panel: &FeaturePanel) -> Result<Vec<f64>> {
        if panel.n_stocks() != self.n_stocks {
            return Err(Error::Compatibility(format!(
                "scaler fitted on {} stocks, panel has {}",
                self.n_stocks,
                panel.n_stocks()
            )));
        }
        let width = self.mean.len();
        Ok(panel
            .values()
            .chunks(width)
            .flat_map(|row| {
                row.iter()
                    .zip(&self.mean)
                    .zip(&self.std)
                    .map(|((v, m), s)| (v - m) / s)
            })
            .collect())
    }
}

/// Standardised inputs and raw next-step signals over a whole history.
#[derive(Debug, Clone)]
pub struct Dataset {
    seq_len: usize,
    row_width: usize,
    n_stocks: usize,
    inputs: Vec<f64>,
    /// Row `t` holds the signal change from `t - 1` to `t` (row 0 unused).
    deltas: Vec<f64>,
}

impl Dataset {
    pub fn new(
        history: &FeaturePanel,
        scaler: &FeatureScaler,
        seq_len: usize,
        source: SignalSource,
    ) -> Result<Self> {
        let n = history.n_stocks();
        let feature = match source {
            SignalSource::Return => Feature::Return,
            SignalSource::Price => Feature::Price,
        };
        let mut deltas = vec![0.0; history.n_days() * n];
        for t in 1..history.n_days() {
            for i in 0..n {
                deltas[t * n + i] = history.get(t, i, feature) - history.get(t - 1, i, feature);
            }
        }
        Ok(Dataset {
            seq_len,
            row_width: n * crate::data::N_FEATURES,
            n_stocks: n,
            inputs: scaler.transform(history)?,
            deltas,
        })
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    /// Lookback window for predicting `target`: rows `target - seq_len`
    /// through `target - 1`, flattened.
    pub fn window(&self, target: usize) -> &[f64] {
        &self.inputs[(target - self.seq_len) * self.row_width..target * self.row_width]
    }

    pub fn delta(&self, target: usize) -> &[f64] {
        &self.deltas[target * self.n_stocks..(target + 1) * self.n_stocks]
    }
}

/// One decision per trading day of `segment` (see [`Split::trading_rows`]).
/// Days without a full lookback hold everything.
pub fn decide_segment(net: &Network, data: &Dataset, split: &Split, segment: Segment) -> Result<Vec<AllocationDecision>> {
    let mut scratch = Scratch::default();
    let n = net.config.n_stocks;
    split
        .rows(segment)
        .map(|target| {
            if target < data.seq_len.max(1) {
                return Ok(AllocationDecision::hold_all(n, DEFAULT_EPSILON_FLOOR));
            }
            net.forward_into(data.window(target), &mut scratch);
            let (stocks, hold) = scratch.out.split_at(n);
            allocate_slices(stocks, hold.first().copied(), DEFAULT_EPSILON_FLOOR)
        })
        .collect()
}

fn segment_profit(net: &Network, data: &Dataset, split: &Split, segment: Segment, bt: &BacktestConfig) -> Result<f64> {
    let decisions = decide_segment(net, data, split, segment)?;
    Ok(run_backtest(&split.trading_panel(segment), &decisions, bt)?.profit_pct)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample training loss over the epoch.
    pub train_loss: f64,
    pub validation_profit_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RestartStatus {
    Completed,
    /// Loss or parameters went non-finite during this epoch.
    Diverged { epoch: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartSummary {
    pub restart: usize,
    pub status: RestartStatus,
    pub validation_profit_pct: f64,
    pub history: Vec<EpochRecord>,
    pub params: Option<ModelParams>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub scaler: FeatureScaler,
    pub selected: usize,
    pub restarts: Vec<RestartSummary>,
}

impl TrainOutcome {
    pub fn history(&self) -> &[EpochRecord] {
        &self.restarts[self.selected].history
    }
}

/// Trains `n_restarts` independently seeded models and keeps the one with
/// the best validation profit (earliest restart on ties).
///
/// Restart `r` draws its initialisation and batch order from a ChaCha
/// stream `r` under `model_cfg.seed`, so results do not depend on how many
/// restarts ran before it.
pub fn train(split: &Split, model_cfg: &ModelConfig, train_cfg: &TrainConfig, selection: &BacktestConfig) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    selection.validate()?;
    let history = split.history();
    if model_cfg.n_stocks != history.n_stocks() {
        return Err(Error::Compatibility(format!(
            "model expects {} stocks, panel has {}",
            model_cfg.n_stocks,
            history.n_stocks()
        )));
    }
    if model_cfg.n_features != crate::data::N_FEATURES {
        return Err(Error::Compatibility(format!(
            "model expects {} features, panels carry {}",
            model_cfg.n_features,
            crate::data::N_FEATURES
        )));
    }
    if train_cfg.loss.use_hold != model_cfg.use_hold {
        return Err(Error::HoldMismatch {
            expected: train_cfg.loss.use_hold,
            actual: model_cfg.use_hold,
        });
    }
    let targets = split.targets(Segment::Train, model_cfg.seq_len);
    if targets.is_empty() {
        return Err(Error::InsufficientHistory(format!(
            "no training sample has a full lookback of {} days",
            model_cfg.seq_len
        )));
    }

    let scaler = FeatureScaler::fit(history, split.rows(Segment::Train))?;
    let data = Dataset::new(history, &scaler, model_cfg.seq_len, train_cfg.loss.signal_source)?;

    let mut restarts = Vec::with_capacity(train_cfg.n_restarts);
    for r in 0..train_cfg.n_restarts {
        restarts.push(run_restart(r, split, &data, &targets, model_cfg, train_cfg, selection)?);
    }

    let selected = select_restart(&restarts)
        .ok_or_else(|| Error::Training(format!("all {} restarts diverged", train_cfg.n_restarts)))?;
    let params = restarts[selected].params.clone().expect("selected restart has params");
    Ok(TrainOutcome {
        network: Network::new(*model_cfg, params)?,
        scaler,
        selected,
        restarts,
    })
}

/// Highest validation profit among restarts that finished; the earliest
/// wins ties.
fn select_restart(restarts: &[RestartSummary]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in restarts.iter().enumerate() {
        if s.params.is_none() {
            continue;
        }
        if best.is_none_or(|b| s.validation_profit_pct > restarts[b].validation_profit_pct) {
            best = Some(i);
        }
    }
    best
}

fn run_restart(
    restart: usize,
    split: &Split,
    data: &Dataset,
    targets: &[usize],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    selection: &BacktestConfig,
) -> Result<RestartSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(model_cfg.seed);
    rng.set_stream(restart as u64);
    let mut net = Network::new(*model_cfg, ModelParams::init(model_cfg, &mut rng))?;
    let mut adam = Adam::new(net.params.len(), train_cfg.learning_rate);
    let mut order = targets.to_vec();
    let mut grad = vec![0.0; net.params.len()];
    let mut scratch = Scratch::default();
    let mut history = Vec::with_capacity(train_cfg.epochs);

    for epoch in 1..=train_cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut diverged = false;
        for batch in order.chunks(train_cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &target in batch {
                loss_sum += net.train_step(
                    data.window(target),
                    data.delta(target),
                    &train_cfg.loss,
                    scale,
                    &mut scratch,
                    &mut grad,
                );
            }
            if !loss_sum.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                diverged = true;
                break;
            }
            adam.step(&mut net.params.values, &grad);
            if net.params.values.iter().any(|p| !p.is_finite()) {
                diverged = true;
                break;
            }
        }
        if diverged {
            return Ok(RestartSummary {
                restart,
                status: RestartStatus::Diverged { epoch },
                validation_profit_pct: f64::NAN,
                history,
                params: None,
            });
        }
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            validation_profit_pct: segment_profit(&net, data, split, Segment::Validation, selection)?,
        });
    }

    let validation_profit_pct = match history.last() {
        Some(rec) => rec.validation_profit_pct,
        None => segment_profit(&net, data, split, Segment::Validation, selection)?,
    };
    Ok(RestartSummary {
        restart,
        status: RestartStatus::Completed,
        validation_profit_pct,
        history,
        params: Some(net.params),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split, Regime, SplitSpec, SynthConfig};
    use crate::losses::LossVariant;
    use crate::model::Architecture;

    fn small_split(seed: u64) -> Split {
        let panel = SynthConfig::trend(3, 600, seed, 1, 1, 0.002, 0.01).generate().unwrap();
        split(&panel, SplitSpec { test_year: 1996 }).unwrap()
    }

    fn small_cfgs(arch: Architecture) -> (ModelConfig, TrainConfig) {
        let model = ModelConfig {
            seq_len: 5,
            hidden_width: 4,
            seed: 11,
            ..ModelConfig::new(arch, 3)
        };
        let train = TrainConfig {
            epochs: 3,
            n_restarts: 2,
            loss: LossConfig::new(LossVariant::StockLoss).with_source(SignalSource::Price),
            ..TrainConfig::default()
        };
        (model, train)
    }

    #[test]
    fn scaler_standardises_training_rows() {
        let panel = SynthConfig::uniform(2, 50, 1, Regime { drift: 0.0, vol: 0.02 }).generate().unwrap();
        let sc = FeatureScaler::fit(&panel, 0..50).unwrap();
        let z = sc.transform(&panel).unwrap();
        let width = sc.mean.len();
        for k in 0..width {
            let col: Vec<f64> = z.iter().skip(k).step_by(width).copied().collect();
            let mean = col.iter().sum::<f64>() / 50.0;
            assert!(mean.abs() < 1e-9, "column {k} mean {mean}");
        }
        // shares outstanding are constant: std replaced by 1, values map to 0
        let shares = Feature::SharesOutstanding.index();
        assert_eq!(sc.std[shares], 1.0);
        assert!(z.iter().skip(shares).step_by(width).all(|v| *v == 0.0));
    }

    #[test]
    fn windows_are_contiguous_history() {
        let s = small_split(2);
        let sc = FeatureScaler::fit(s.history(), s.rows(Segment::Train)).unwrap();
        let d = Dataset::new(s.history(), &sc, 4, SignalSource::Price).unwrap();
        let w = d.window(10);
        assert_eq!(w.len(), 4 * 3 * 8);
        let z = sc.transform(s.history()).unwrap();
        assert_eq!(w, &z[6 * 24..10 * 24]);
        let expected = s.history().price(10, 1) - s.history().price(9, 1);
        assert_eq!(d.delta(10)[1], expected);
    }

    #[test]
    fn training_is_deterministic_and_keeps_history() {
        let s = small_split(3);
        let (m, t) = small_cfgs(Architecture::Mlp);
        let bt = BacktestConfig::default();
        let a = train(&s, &m, &t, &bt).unwrap();
        let b = train(&s, &m, &t, &bt).unwrap();
        assert_eq!(a.network.params, b.network.params);
        assert_eq!(a.restarts.len(), 2);
        assert_eq!(a.history().len(), 3);
        assert_eq!(a.selected, b.selected);
        let best = a.restarts.iter().map(|r| r.validation_profit_pct).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(a.restarts[a.selected].validation_profit_pct, best);
    }

    #[test]
    fn restart_streams_are_independent_of_count() {
        let s = small_split(4);
        let (m, mut t) = small_cfgs(Architecture::Linear);
        let bt = BacktestConfig::default();
        let two = train(&s, &m, &t, &bt).unwrap();
        t.n_restarts = 1;
        let one = train(&s, &m, &t, &bt).unwrap();
        assert_eq!(one.restarts[0], two.restarts[0]);
        assert_ne!(two.restarts[0].params, two.restarts[1].params);
    }

    #[test]
    fn zero_epochs_picks_best_initialisation() {
        let s = small_split(5);
        let (m, mut t) = small_cfgs(Architecture::Linear);
        t.epochs = 0;
        t.n_restarts = 4;
        let out = train(&s, &m, &t, &BacktestConfig::default()).unwrap();
        assert!(out.history().is_empty());
        let best = out.restarts.iter().map(|r| r.validation_profit_pct).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.restarts[out.selected].validation_profit_pct, best);
        let first_best = out.restarts.iter().position(|r| r.validation_profit_pct == best).unwrap();
        assert_eq!(out.selected, first_best);
    }

    #[test]
    fn mismatched_configs_are_rejected() {
        let s = small_split(6);
        let (mut m, t) = small_cfgs(Architecture::Linear);
        m.use_hold = true;
        assert!(matches!(
            train(&s, &m, &t, &BacktestConfig::default()),
            Err(Error::HoldMismatch { .. })
        ));
        let (mut m, t) = small_cfgs(Architecture::Linear);
        m.n_stocks = 4;
        assert!(train(&s, &m, &t, &BacktestConfig::default()).is_err());
        let (mut m, t) = small_cfgs(Architecture::Linear);
        m.seq_len = 10_000;
        assert!(matches!(
            train(&s, &m, &t, &BacktestConfig::default()),
            Err(Error::InsufficientHistory(_))
        ));
    }

    #[test]
    fn absurd_step_size_diverges_every_restart() {
        let s = small_split(7);
        let (m, mut t) = small_cfgs(Architecture::Linear);
        t.learning_rate = f64::MAX;
        match train(&s, &m, &t, &BacktestConfig::default()) {
            Err(Error::Training(msg)) => assert_eq!(msg, "all 2 restarts diverged"),
            other => panic!("expected a training error, got {other:?}"),
        }
    }

    #[test]
    fn diverged_restarts_are_never_selected() {
        let summary = |restart, profit: f64, params: Option<ModelParams>| RestartSummary {
            restart,
            status: match params {
                Some(_) => RestartStatus::Completed,
                None => RestartStatus::Diverged { epoch: 1 },
            },
            validation_profit_pct: profit,
            history: Vec::new(),
            params,
        };
        let (m, _) = small_cfgs(Architecture::Linear);
        let p = ModelParams::zeros(&m);
        let restarts = vec![
            summary(0, f64::NAN, None),
            summary(1, 2.0, Some(p.clone())),
            summary(2, 9.0, None),
            summary(3, 5.0, Some(p.clone())),
            summary(4, 5.0, Some(p)),
        ];
        assert_eq!(select_restart(&restarts), Some(3));
        assert_eq!(select_restart(&restarts[..1]), None);
    }
}
