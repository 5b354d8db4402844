//! Daily-rebalancing backtest.
//!
//! Each day `t` the whole capital is re-split according to that day's
//! [`AllocationDecision`]; stock `i` earns
//! `fraction_i * direction_i * (P_{i,t+1} - P_{i,t}) / P_{i,t}` and the hold
//! fraction earns nothing. Positions are settled at `t + 1`.

mod mann_whitney;

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::allocation::AllocationDecision;
use crate::data::FeaturePanel;
use crate::error::{Error, Result};

pub use mann_whitney::{mann_whitney_u, MannWhitney, MwuMethod, EXACT_MAX_N};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestConfig {
    pub initial_budget: f64,
    pub compounding: bool,
    pub transaction_cost_bps: f64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            initial_budget: 1.0,
            compounding: true,
            transaction_cost_bps: 0.0,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_budget.is_finite() && self.initial_budget > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "initial_budget must be positive, got {}",
                self.initial_budget
            )));
        }
        if !(self.transaction_cost_bps.is_finite() && self.transaction_cost_bps >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "transaction_cost_bps must be >= 0, got {}",
                self.transaction_cost_bps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestLedger {
    /// Panel dates; `dates[0]` is the first entry day, `dates[d]` the
    /// settlement day of trading day `d`.
    pub dates: Vec<NaiveDate>,
    /// Capital before day 1 and after each day (length `T + 1`).
    pub daily_capital: Vec<f64>,
    /// Relative PnL per day and stock (`T x N`).
    pub per_day_stock_pnl: Vec<Vec<f64>>,
    /// `Σ_i pnl_i` per day.
    pub gross_pnl: Vec<f64>,
    /// Transaction cost per day, as a fraction of capital.
    pub costs: Vec<f64>,
    pub profit_pct: f64,
}

pub fn run_backtest(
    panel: &FeaturePanel,
    decisions: &[AllocationDecision],
    cfg: &BacktestConfig,
) -> Result<BacktestLedger> {
    cfg.validate()?;
    let days = panel.n_days().saturating_sub(1);
    if decisions.len() != days {
        return Err(Error::LengthMismatch {
            what: "decision stream (one per panel day except the last)",
            expected: days,
            actual: decisions.len(),
        });
    }
    let n = panel.n_stocks();
    let cost_rate = cfg.transaction_cost_bps / 1e4;
    let initial = cfg.initial_budget;

    let mut capital = initial;
    let mut daily_capital = Vec::with_capacity(days + 1);
    daily_capital.push(capital);
    let mut per_day_stock_pnl = Vec::with_capacity(days);
    let mut gross_pnl = Vec::with_capacity(days);
    let mut costs = Vec::with_capacity(days);

    for (t, decision) in decisions.iter().enumerate() {
        if decision.n_stocks() != n || decision.directions.len() != n {
            return Err(Error::LengthMismatch {
                what: "decision stocks",
                expected: n,
                actual: decision.n_stocks(),
            });
        }
        let mut pnl = Vec::with_capacity(n);
        for i in 0..n {
            let (p0, p1) = (panel.price(t, i), panel.price(t + 1, i));
            if p0 <= 0.0 {
                return Err(Error::NonPositivePrice { day: t, stock: i, price: p0 });
            }
            if p1 <= 0.0 {
                return Err(Error::NonPositivePrice { day: t + 1, stock: i, price: p1 });
            }
            let dir = decision.directions[i].multiplier();
            pnl.push(decision.fractions[i] * dir * (p1 - p0) / p0);
        }
        let gross: f64 = pnl.iter().sum();
        let cost = cost_rate * decision.invested();
        capital = if cfg.compounding {
            capital * (1.0 + gross - cost)
        } else {
            capital + initial * (gross - cost)
        };
        daily_capital.push(capital);
        per_day_stock_pnl.push(pnl);
        gross_pnl.push(gross);
        costs.push(cost);
    }

    let profit_pct = (capital - initial) / initial * 100.0;
    Ok(BacktestLedger {
        dates: panel.dates().to_vec(),
        daily_capital,
        per_day_stock_pnl,
        gross_pnl,
        costs,
        profit_pct,
    })
}

/// One share of every stock bought on the first day, sold on the last.
pub fn buy_and_hold(panel: &FeaturePanel) -> Result<f64> {
    if panel.n_days() < 2 {
        return Err(Error::InsufficientData("buy-and-hold needs at least two days".into()));
    }
    let last = panel.n_days() - 1;
    let first_sum: f64 = (0..panel.n_stocks()).map(|i| panel.price(0, i)).sum();
    let last_sum: f64 = (0..panel.n_stocks()).map(|i| panel.price(last, i)).sum();
    Ok((last_sum - first_sum) / first_sum * 100.0)
}

impl BacktestLedger {
    pub fn n_days(&self) -> usize {
        self.gross_pnl.len()
    }

    pub fn final_capital(&self) -> f64 {
        *self.daily_capital.last().expect("ledger always holds the initial capital")
    }

    /// Largest peak-to-trough fall of capital, in percent of the peak.
    pub fn max_drawdown_pct(&self) -> f64 {
        let mut peak = f64::NEG_INFINITY;
        let mut worst = 0.0f64;
        for &c in &self.daily_capital {
            peak = peak.max(c);
            if peak > 0.0 {
                worst = worst.max((peak - c) / peak * 100.0);
            }
        }
        worst
    }

    /// Mean and sample standard deviation of the daily net PnL.
    pub fn daily_pnl_stats(&self) -> (f64, f64) {
        let net: Vec<f64> = self.gross_pnl.iter().zip(&self.costs).map(|(g, c)| g - c).collect();
        if net.is_empty() {
            return (0.0, 0.0);
        }
        let mean = net.iter().sum::<f64>() / net.len() as f64;
        if net.len() < 2 {
            return (mean, 0.0);
        }
        let var = net.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (net.len() - 1) as f64;
        (mean, var.sqrt())
    }

    /// `day,date,capital,gross_pnl,cost`; day 0 is the opening capital.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "day,date,capital,gross_pnl,cost")?;
        for (d, capital) in self.daily_capital.iter().enumerate() {
            let (gross, cost) = if d == 0 { (0.0, 0.0) } else { (self.gross_pnl[d - 1], self.costs[d - 1]) };
            writeln!(out, "{d},{},{capital},{gross},{cost}", self.dates[d].format("%Y-%m-%d"))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

/// Headline numbers for a backtest, with the buy-and-hold baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub profit_pct: f64,
    pub buy_and_hold_pct: f64,
    pub max_drawdown_pct: f64,
    pub daily_pnl_mean: f64,
    pub daily_pnl_std: f64,
    pub trading_days: usize,
    pub compounding: bool,
}

impl Summary {
    pub fn new(ledger: &BacktestLedger, panel: &FeaturePanel, cfg: &BacktestConfig) -> Result<Self> {
        let (mean, std) = ledger.daily_pnl_stats();
        Ok(Summary {
            profit_pct: ledger.profit_pct,
            buy_and_hold_pct: buy_and_hold(panel)?,
            max_drawdown_pct: ledger.max_drawdown_pct(),
            daily_pnl_mean: mean,
            daily_pnl_std: std,
            trading_days: ledger.n_days(),
            compounding: cfg.compounding,
        })
    }

    /// `key = value` lines with fixed precision.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "trading_days = {}", self.trading_days);
        let _ = writeln!(s, "compounding = {}", self.compounding);
        let _ = writeln!(s, "profit_pct = {:.6}", self.profit_pct);
        let _ = writeln!(s, "buy_and_hold_pct = {:.6}", self.buy_and_hold_pct);
        let _ = writeln!(s, "max_drawdown_pct = {:.6}", self.max_drawdown_pct);
        let _ = writeln!(s, "daily_pnl_mean = {:.9}", self.daily_pnl_mean);
        let _ = writeln!(s, "daily_pnl_std = {:.9}", self.daily_pnl_std);
        s
    }
}
