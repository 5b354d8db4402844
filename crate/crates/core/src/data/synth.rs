//! Seeded synthetic market standing in for a real price panel.
//!
//! Prices follow a discretised geometric Brownian motion,
//! `P_t = P_{t-1} * (1 + drift) * exp(vol * Z - vol^2 / 2)`, so the expected
//! daily gross return is exactly `1 + drift` and `vol = 0` gives a
//! deterministic compounding path. The other features are drawn from
//! bounded seeded processes and tied to price where the feature definitions
//! require it (turnover, market cap, illiquidity).

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Feature, FeaturePanel, N_FEATURES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    /// Expected simple return per day.
    pub drift: f64,
    /// Daily log-volatility.
    pub vol: f64,
}

impl Regime {
    fn validate(&self, stock: usize) -> Result<()> {
        if !self.vol.is_finite() || self.vol < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "stock {stock}: volatility must be finite and >= 0, got {}",
                self.vol
            )));
        }
        if !self.drift.is_finite() || self.drift <= -1.0 {
            return Err(Error::InvalidParameter(format!(
                "stock {stock}: drift must be finite and > -1, got {}",
                self.drift
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_stocks: usize,
    pub n_days: usize,
    pub seed: u64,
    pub regimes: Vec<Regime>,
    /// First trading day; weekends are skipped.
    pub start: NaiveDate,
}

pub const DEFAULT_START: NaiveDate = match NaiveDate::from_ymd_opt(1994, 1, 3) {
    Some(d) => d,
    None => panic!("bad default start date"),
};

impl SynthConfig {
    pub fn uniform(n_stocks: usize, n_days: usize, seed: u64, regime: Regime) -> Self {
        SynthConfig {
            n_stocks,
            n_days,
            seed,
            regimes: vec![regime; n_stocks],
            start: DEFAULT_START,
        }
    }

    /// `n_up` stocks drifting up and `n_down` drifting down by `drift` per
    /// day, the rest driftless; all share `vol`.
    pub fn trend(n_stocks: usize, n_days: usize, seed: u64, n_up: usize, n_down: usize, drift: f64, vol: f64) -> Self {
        let regimes = (0..n_stocks)
            .map(|i| {
                let d = if i < n_up {
                    drift
                } else if i < n_up + n_down {
                    -drift
                } else {
                    0.0
                };
                Regime { drift: d, vol }
            })
            .collect();
        SynthConfig {
            n_stocks,
            n_days,
            seed,
            regimes,
            start: DEFAULT_START,
        }
    }

    pub fn generate(&self) -> Result<FeaturePanel> {
        if self.n_stocks == 0 {
            return Err(Error::InvalidParameter("n_stocks must be >= 1".into()));
        }
        if self.n_days < 2 {
            return Err(Error::InvalidParameter("n_days must be >= 2".into()));
        }
        if self.regimes.len() != self.n_stocks {
            return Err(Error::LengthMismatch {
                what: "regimes",
                expected: self.n_stocks,
                actual: self.regimes.len(),
            });
        }
        for (i, r) in self.regimes.iter().enumerate() {
            r.validate(i)?;
        }

        let dates = trading_days(self.start, self.n_days);
        let width = (self.n_stocks.max(2) - 1).to_string().len().max(3);
        let tickers: Vec<String> = (0..self.n_stocks).map(|i| format!("S{i:0width$}")).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (n, days) = (self.n_stocks, self.n_days);
        let mut values = vec![0.0; days * n * N_FEATURES];
        for (i, regime) in self.regimes.iter().enumerate() {
            let mut price: f64 = rng.random_range(20.0..200.0);
            let shares = 10f64.powf(rng.random_range(7.5..9.5)).round();
            let turnover_level = logit(rng.random_range(0.02..0.08) / 0.2);
            let spread_level = logit(rng.random_range(0.05..0.4));
            let mut turnover_state = turnover_level;
            let mut prev_volume = f64::NAN;
            let mut prev_price = f64::NAN;
            for t in 0..days {
                if t > 0 {
                    let z: f64 = rng.sample(StandardNormal);
                    let shock = (regime.vol * z - 0.5 * regime.vol * regime.vol).exp();
                    price = price * (1.0 + regime.drift) * shock;
                }
                let zt: f64 = rng.sample(StandardNormal);
                turnover_state = turnover_level + 0.8 * (turnover_state - turnover_level) + 0.3 * zt;
                let turnover = 0.2 * sigmoid(turnover_state);
                let zs: f64 = rng.sample(StandardNormal);
                let spread = 0.01 * sigmoid(spread_level + 0.5 * zs);

                let volume = turnover * shares;
                let ret = if t == 0 { 0.0 } else { (price - prev_price) / prev_price };
                let volume_change = if t == 0 { 0.0 } else { volume / prev_volume - 1.0 };
                let cell = &mut values[(t * n + i) * N_FEATURES..(t * n + i + 1) * N_FEATURES];
                cell[Feature::VolumeChange.index()] = volume_change;
                cell[Feature::BidAskSpread.index()] = spread;
                cell[Feature::Illiquidity.index()] = ret / (volume * price);
                cell[Feature::Turnover.index()] = turnover;
                cell[Feature::Price.index()] = price;
                cell[Feature::Return.index()] = ret;
                cell[Feature::SharesOutstanding.index()] = shares;
                cell[Feature::MarketCap.index()] = price * shares;
                prev_volume = volume;
                prev_price = price;
            }
        }
        FeaturePanel::new(dates, tickers, values)
    }
}

/// Generates a panel with default start date (1994-01-03) from per-stock
/// regimes.
pub fn synth_market(n_stocks: usize, n_days: usize, seed: u64, regimes: &[Regime]) -> Result<FeaturePanel> {
    SynthConfig {
        n_stocks,
        n_days,
        seed,
        regimes: regimes.to_vec(),
        start: DEFAULT_START,
    }
    .generate()
}

fn trading_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_drift_zero_vol_is_constant() {
        let p = synth_market(3, 50, 9, &[Regime { drift: 0.0, vol: 0.0 }; 3]).unwrap();
        for i in 0..3 {
            let p0 = p.price(0, i);
            for t in 0..50 {
                assert_eq!(p.price(t, i), p0);
                assert_eq!(p.get(t, i, Feature::Return), 0.0);
            }
        }
    }

    #[test]
    fn zero_vol_drift_compounds() {
        let p = synth_market(1, 100, 4, &[Regime { drift: 0.001, vol: 0.0 }]).unwrap();
        let expected = p.price(0, 0) * 1.001f64.powi(99);
        assert!((p.price(99, 0) - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn identities_hold_and_ranges_are_plausible() {
        let p = synth_market(4, 300, 1, &[Regime { drift: 0.0005, vol: 0.02 }; 4]).unwrap();
        assert!(p.consistency_warnings().is_empty());
        for t in 0..p.n_days() {
            for i in 0..4 {
                let spread = p.get(t, i, Feature::BidAskSpread);
                let turnover = p.get(t, i, Feature::Turnover);
                assert!(spread > 0.0 && spread < 0.01);
                assert!(turnover > 0.0 && turnover < 0.2);
                assert_eq!(
                    p.get(t, i, Feature::MarketCap),
                    p.price(t, i) * p.get(t, i, Feature::SharesOutstanding)
                );
            }
        }
    }

    #[test]
    fn weekends_are_skipped() {
        let p = synth_market(1, 10, 1, &[Regime { drift: 0.0, vol: 0.01 }]).unwrap();
        assert!(p.dates().iter().all(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun)));
        assert_eq!(p.dates()[0], DEFAULT_START);
    }

    #[test]
    fn same_seed_same_panel() {
        let r = [Regime { drift: 0.0002, vol: 0.015 }; 3];
        assert_eq!(synth_market(3, 200, 42, &r).unwrap(), synth_market(3, 200, 42, &r).unwrap());
        assert_ne!(synth_market(3, 200, 42, &r).unwrap(), synth_market(3, 200, 43, &r).unwrap());
    }

    #[test]
    fn invalid_regimes_are_rejected() {
        assert!(synth_market(1, 10, 0, &[Regime { drift: 0.0, vol: -0.1 }]).is_err());
        assert!(synth_market(2, 10, 0, &[Regime { drift: 0.0, vol: 0.1 }]).is_err());
        assert!(synth_market(1, 1, 0, &[Regime { drift: 0.0, vol: 0.1 }]).is_err());
        assert!(synth_market(0, 10, 0, &[]).is_err());
    }

    #[test]
    fn ticker_width_grows_with_universe() {
        let p = SynthConfig::uniform(1200, 2, 0, Regime { drift: 0.0, vol: 0.0 }).generate().unwrap();
        assert_eq!(p.tickers()[0], "S0000");
        assert!(p.tickers().windows(2).all(|w| w[0] < w[1]));
    }
}
