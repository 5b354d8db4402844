//! Market panels: a dense `T x N x 8` feature cube over trading dates and
//! tickers, plus CSV I/O, year-based splitting and a synthetic generator.

mod csv_io;
mod split;
mod synth;

use std::fmt;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csv_io::{load_csv, read_csv, save_csv, write_csv};
pub use split::{split, Segment, Split, SplitSpec};
pub use synth::{synth_market, Regime, SynthConfig, DEFAULT_START};

pub const N_FEATURES: usize = 8;

/// The eight per-stock daily features, in CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Feature {
    VolumeChange = 0,
    BidAskSpread = 1,
    Illiquidity = 2,
    Turnover = 3,
    Price = 4,
    Return = 5,
    SharesOutstanding = 6,
    MarketCap = 7,
}

impl Feature {
    pub const ALL: [Feature; N_FEATURES] = [
        Feature::VolumeChange,
        Feature::BidAskSpread,
        Feature::Illiquidity,
        Feature::Turnover,
        Feature::Price,
        Feature::Return,
        Feature::SharesOutstanding,
        Feature::MarketCap,
    ];

    pub fn column(self) -> &'static str {
        match self {
            Feature::VolumeChange => "volume_change",
            Feature::BidAskSpread => "bid_ask_spread",
            Feature::Illiquidity => "illiquidity",
            Feature::Turnover => "turnover",
            Feature::Price => "price",
            Feature::Return => "return",
            Feature::SharesOutstanding => "shares_outstanding",
            Feature::MarketCap => "market_cap",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Relative tolerance for the market-cap and return identities.
pub const IDENTITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePanel {
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    /// Row-major `[day][stock][feature]`.
    values: Vec<f64>,
}

impl FeaturePanel {
    /// Checks shape, date ordering, finiteness and the hard positivity
    /// constraints on price and shares outstanding.
    pub fn new(dates: Vec<NaiveDate>, tickers: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if dates.is_empty() || tickers.is_empty() {
            return Err(Error::InvalidPanel("panel needs at least one date and one ticker".into()));
        }
        let expected = dates.len() * tickers.len() * N_FEATURES;
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                what: "panel values",
                expected,
                actual: values.len(),
            });
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidPanel(format!(
                "dates not strictly increasing: {} then {}",
                w[0], w[1]
            )));
        }
        let panel = FeaturePanel {
            dates,
            tickers,
            values,
        };
        for t in 0..panel.n_days() {
            for i in 0..panel.n_stocks() {
                let row = panel.cell(t, i);
                if let Some(f) = row.iter().position(|v| !v.is_finite()) {
                    return Err(Error::InvalidPanel(format!(
                        "non-finite {} for {} on {}",
                        Feature::ALL[f].column(),
                        panel.tickers[i],
                        panel.dates[t]
                    )));
                }
                for feature in [Feature::Price, Feature::SharesOutstanding] {
                    if row[feature.index()] <= 0.0 {
                        return Err(Error::InvalidPanel(format!(
                            "non-positive {} {} for {} on {}",
                            feature.column(),
                            row[feature.index()],
                            panel.tickers[i],
                            panel.dates[t]
                        )));
                    }
                }
            }
        }
        Ok(panel)
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn n_stocks(&self) -> usize {
        self.tickers.len()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The eight features of one stock on one day.
    pub fn cell(&self, day: usize, stock: usize) -> &[f64] {
        let start = (day * self.n_stocks() + stock) * N_FEATURES;
        &self.values[start..start + N_FEATURES]
    }

    pub fn get(&self, day: usize, stock: usize, feature: Feature) -> f64 {
        self.cell(day, stock)[feature.index()]
    }

    pub fn price(&self, day: usize, stock: usize) -> f64 {
        self.get(day, stock, Feature::Price)
    }

    /// Rows `range` as a new panel.
    pub fn slice_days(&self, range: std::ops::Range<usize>) -> FeaturePanel {
        let width = self.n_stocks() * N_FEATURES;
        FeaturePanel {
            dates: self.dates[range.clone()].to_vec(),
            tickers: self.tickers.clone(),
            values: self.values[range.start * width..range.end * width].to_vec(),
        }
    }

    pub fn years(&self) -> Vec<i32> {
        let mut years: Vec<i32> = self.dates.iter().map(|d| d.year()).collect();
        years.dedup();
        years
    }

    /// Soft identity checks: `market_cap = price * shares` on every row and
    /// `return_t = (P_t - P_{t-1}) / P_{t-1}` for `t >= 1`.
    pub fn consistency_warnings(&self) -> Vec<PanelWarning> {
        let mut out = Vec::new();
        for t in 0..self.n_days() {
            for i in 0..self.n_stocks() {
                let price = self.price(t, i);
                let cap = price * self.get(t, i, Feature::SharesOutstanding);
                let actual = self.get(t, i, Feature::MarketCap);
                if !within(actual, cap) {
                    out.push(PanelWarning {
                        date: self.dates[t],
                        ticker: self.tickers[i].clone(),
                        kind: WarningKind::MarketCap,
                        expected: cap,
                        actual,
                    });
                }
                if t > 0 {
                    let prev = self.price(t - 1, i);
                    let ret = (price - prev) / prev;
                    let actual = self.get(t, i, Feature::Return);
                    if !within(actual, ret) {
                        out.push(PanelWarning {
                            date: self.dates[t],
                            ticker: self.tickers[i].clone(),
                            kind: WarningKind::Return,
                            expected: ret,
                            actual,
                        });
                    }
                }
            }
        }
        out
    }
}

fn within(actual: f64, expected: f64) -> bool {
    (actual - expected).abs() <= IDENTITY_TOLERANCE * expected.abs() + 1e-12
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarningKind {
    MarketCap,
    Return,
}

/// A row that violates one of the soft panel identities.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelWarning {
    pub date: NaiveDate,
    pub ticker: String,
    pub kind: WarningKind,
    pub expected: f64,
    pub actual: f64,
}

impl fmt::Display for PanelWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.kind {
            WarningKind::MarketCap => "market_cap != price * shares_outstanding",
            WarningKind::Return => "return inconsistent with price change",
        };
        write!(
            f,
            "{} {}: {what} (expected {}, found {})",
            self.date, self.ticker, self.expected, self.actual
        )
    }
}
