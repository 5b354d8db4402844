//! Output vectors and the allocation head.
//!
//! Budget fractions are `|O_i| / sum_j |O_j|`, where the sum runs over every
//! node, the hold node included. Outputs whose magnitude falls below the
//! epsilon floor are treated as Flat and their share moves to the hold
//! fraction.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

pub const DEFAULT_EPSILON_FLOOR: f64 = 1e-6;

/// Raw `tanh` outputs of the forecaster: one per stock, plus an optional
/// hold node. Every element lies strictly inside (-1, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputVector {
    stock_outputs: Vec<f64>,
    hold_output: Option<f64>,
}

impl OutputVector {
    pub fn new(stock_outputs: Vec<f64>, hold_output: Option<f64>) -> Result<Self> {
        if stock_outputs.is_empty() {
            return Err(Error::InvalidParameter(
                "output vector needs at least one stock".into(),
            ));
        }
        let out = OutputVector {
            stock_outputs,
            hold_output,
        };
        for (index, value) in out.nodes().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    what: "output vector",
                    index,
                });
            }
            if value.abs() >= 1.0 {
                return Err(Error::OutOfRange { index, value });
            }
        }
        Ok(out)
    }

    /// Builds from a flat node list; the last element is the hold node when
    /// `with_hold` is set.
    pub fn from_nodes(nodes: &[f64], with_hold: bool) -> Result<Self> {
        if with_hold {
            match nodes.split_last() {
                Some((&hold, stocks)) => Self::new(stocks.to_vec(), Some(hold)),
                None => Err(Error::InvalidParameter("empty node list".into())),
            }
        } else {
            Self::new(nodes.to_vec(), None)
        }
    }

    pub fn stock_outputs(&self) -> &[f64] {
        &self.stock_outputs
    }

    pub fn hold_output(&self) -> Option<f64> {
        self.hold_output
    }

    pub fn n_stocks(&self) -> usize {
        self.stock_outputs.len()
    }

    pub fn has_hold(&self) -> bool {
        self.hold_output.is_some()
    }

    /// Number of nodes: N, or N + 1 with a hold node.
    pub fn len(&self) -> usize {
        self.stock_outputs.len() + usize::from(self.hold_output.is_some())
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Stocks first, then the hold node.
    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        self.stock_outputs.iter().copied().chain(self.hold_output)
    }

    pub fn to_nodes(&self) -> Vec<f64> {
        self.nodes().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Buy,
    Short,
    Flat,
}

impl Direction {
    /// +1 for Buy, -1 for Short, 0 for Flat.
    pub fn multiplier(self) -> f64 {
        match self {
            Direction::Buy => 1.0,
            Direction::Short => -1.0,
            Direction::Flat => 0.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Direction::Buy => Direction::Short,
            Direction::Short => Direction::Buy,
            Direction::Flat => Direction::Flat,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationDecision {
    pub fractions: Vec<f64>,
    pub directions: Vec<Direction>,
    pub hold_fraction: f64,
    pub epsilon_floor: f64,
}

impl AllocationDecision {
    /// Everything held, no trades.
    pub fn hold_all(n_stocks: usize, epsilon_floor: f64) -> Self {
        AllocationDecision {
            fractions: vec![0.0; n_stocks],
            directions: vec![Direction::Flat; n_stocks],
            hold_fraction: 1.0,
            epsilon_floor,
        }
    }

    pub fn n_stocks(&self) -> usize {
        self.fractions.len()
    }

    /// Fraction of the budget committed to trades.
    pub fn invested(&self) -> f64 {
        self.fractions.iter().sum()
    }
}

pub fn allocate(outputs: &OutputVector, epsilon_floor: f64) -> Result<AllocationDecision> {
    allocate_slices(outputs.stock_outputs(), outputs.hold_output(), epsilon_floor)
}

/// Allocation over raw node values. Unlike [`OutputVector`], values are not
/// required to lie in (-1, 1): the fractions only depend on relative
/// magnitudes.
pub fn allocate_slices(
    stock_outputs: &[f64],
    hold_output: Option<f64>,
    epsilon_floor: f64,
) -> Result<AllocationDecision> {
    if stock_outputs.is_empty() {
        return Err(Error::InvalidParameter(
            "allocation needs at least one stock output".into(),
        ));
    }
    if !(epsilon_floor.is_finite() && epsilon_floor >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon_floor must be finite and non-negative, got {epsilon_floor}"
        )));
    }
    ensure_finite(stock_outputs, "stock outputs")?;
    if let Some(h) = hold_output {
        ensure_finite(&[h], "hold output")?;
    }

    let n = stock_outputs.len();
    let hold_mag = hold_output.map_or(0.0, f64::abs);
    let all_below = stock_outputs.iter().all(|o| o.abs() < epsilon_floor) && hold_mag < epsilon_floor;
    let total: f64 = stock_outputs.iter().map(|o| o.abs()).sum::<f64>() + hold_mag;
    if all_below || total == 0.0 {
        return Ok(AllocationDecision::hold_all(n, epsilon_floor));
    }

    let mut fractions = Vec::with_capacity(n);
    let mut directions = Vec::with_capacity(n);
    let mut held = hold_mag;
    for &o in stock_outputs {
        if o >= epsilon_floor && o != 0.0 {
            directions.push(Direction::Buy);
            fractions.push(o.abs() / total);
        } else if o <= -epsilon_floor && o != 0.0 {
            directions.push(Direction::Short);
            fractions.push(o.abs() / total);
        } else {
            directions.push(Direction::Flat);
            fractions.push(0.0);
            held += o.abs();
        }
    }

    Ok(AllocationDecision {
        fractions,
        directions,
        hold_fraction: held / total,
        epsilon_floor,
    })
}

/// `sign(x)` with `sign(0) = 0`, or its smooth proxy `tanh(gamma * x)`.
pub fn sign_proxy(x: f64, gamma: f64, smooth: bool) -> f64 {
    if smooth {
        (gamma * x).tanh()
    } else if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
