use std::ops::Range;

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use super::FeaturePanel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub test_year: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Segment {
    Train,
    Validation,
    Test,
}

/// Year-based split: test is `test_year`, validation the year before, train
/// everything earlier. Later years are dropped.
///
/// A sample is a (window, next step) pair; it belongs to the segment of its
/// target day and may draw lookback rows from earlier segments.
#[derive(Debug, Clone)]
pub struct Split {
    history: FeaturePanel,
    train: Range<usize>,
    validation: Range<usize>,
    test: Range<usize>,
}

pub fn split(panel: &FeaturePanel, spec: SplitSpec) -> Result<Split> {
    let year_of = |t: usize| panel.dates()[t].year();
    let rows_where = |pred: &dyn Fn(i32) -> bool| -> Range<usize> {
        let idx: Vec<usize> = (0..panel.n_days()).filter(|&t| pred(year_of(t))).collect();
        match (idx.first(), idx.last()) {
            (Some(&a), Some(&b)) => a..b + 1,
            _ => 0..0,
        }
    };
    let y = spec.test_year;
    let test = rows_where(&|yr| yr == y);
    if test.is_empty() {
        return Err(Error::InsufficientHistory(format!("panel has no rows in test year {y}")));
    }
    let validation = rows_where(&|yr| yr == y - 1);
    if validation.is_empty() {
        return Err(Error::InsufficientHistory(format!(
            "panel has no rows in validation year {}",
            y - 1
        )));
    }
    let train = rows_where(&|yr| yr < y - 1);
    if train.is_empty() {
        return Err(Error::InsufficientHistory(format!(
            "panel has no rows before validation year {}",
            y - 1
        )));
    }
    Ok(Split {
        history: panel.slice_days(0..test.end),
        train,
        validation,
        test,
    })
}

impl Split {
    /// The panel restricted to years up to and including the test year.
    pub fn history(&self) -> &FeaturePanel {
        &self.history
    }

    /// Row index range of a segment within [`Split::history`].
    pub fn rows(&self, segment: Segment) -> Range<usize> {
        match segment {
            Segment::Train => self.train.clone(),
            Segment::Validation => self.validation.clone(),
            Segment::Test => self.test.clone(),
        }
    }

    pub fn panel(&self, segment: Segment) -> FeaturePanel {
        self.history.slice_days(self.rows(segment))
    }

    pub fn train(&self) -> FeaturePanel {
        self.panel(Segment::Train)
    }

    pub fn validation(&self) -> FeaturePanel {
        self.panel(Segment::Validation)
    }

    pub fn test(&self) -> FeaturePanel {
        self.panel(Segment::Test)
    }

    /// Target rows of a segment that have a full `seq_len` lookback ending
    /// the day before.
    pub fn targets(&self, segment: Segment, seq_len: usize) -> Vec<usize> {
        self.rows(segment).filter(|&target| target >= seq_len.max(1)).collect()
    }

    /// The rows a backtest over `segment` trades on: the day before the
    /// segment (entry) through its last day. Decision `k` trades from row
    /// `k` to row `k + 1` of this panel.
    pub fn trading_rows(&self, segment: Segment) -> Range<usize> {
        let rows = self.rows(segment);
        rows.start.saturating_sub(1)..rows.end
    }

    pub fn trading_panel(&self, segment: Segment) -> FeaturePanel {
        self.history.slice_days(self.trading_rows(segment))
    }
}
