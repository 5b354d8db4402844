//! Long-format panel CSV: one row per (date, ticker).
//!
//! `date,ticker,volume_change,bid_ask_spread,illiquidity,turnover,price,return,shares_outstanding,market_cap`

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;

use super::{Feature, FeaturePanel, PanelWarning, N_FEATURES};
use crate::error::{Error, Result};

const DATE_FORMAT: &str = "%Y-%m-%d";

/// Reads and validates a panel. Identity violations (market cap, return)
/// come back as warnings; structural problems are errors.
pub fn load_csv(path: impl AsRef<Path>) -> Result<(FeaturePanel, Vec<PanelWarning>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, path)
}

/// Like [`load_csv`] but from any reader; `origin` labels error messages.
pub fn read_csv<R: Read>(reader: R, origin: &Path) -> Result<(FeaturePanel, Vec<PanelWarning>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                path: origin.to_path_buf(),
                column: name.to_string(),
            })
    };
    let date_col = column("date")?;
    let ticker_col = column("ticker")?;
    let mut feature_cols = [0usize; N_FEATURES];
    for f in Feature::ALL {
        feature_cols[f.index()] = column(f.column())?;
    }

    let mut cells: BTreeMap<(NaiveDate, String), [f64; N_FEATURES]> = BTreeMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |col: usize, name: &str| -> Result<&str> {
            record.get(col).ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line,
                field: name.to_string(),
                value: String::new(),
            })
        };
        let raw_date = field(date_col, "date")?;
        let date = NaiveDate::parse_from_str(raw_date, DATE_FORMAT).map_err(|_| Error::Parse {
            path: origin.to_path_buf(),
            line,
            field: "date".into(),
            value: raw_date.to_string(),
        })?;
        let ticker = field(ticker_col, "ticker")?.to_string();
        let mut row = [0.0; N_FEATURES];
        for f in Feature::ALL {
            let raw = field(feature_cols[f.index()], f.column())?;
            row[f.index()] = raw.parse::<f64>().map_err(|_| Error::Parse {
                path: origin.to_path_buf(),
                line,
                field: f.column().to_string(),
                value: raw.to_string(),
            })?;
        }
        match cells.entry((date, ticker)) {
            Entry::Occupied(e) => {
                let (date, ticker) = e.key().clone();
                return Err(Error::DuplicateRow { date, ticker });
            }
            Entry::Vacant(e) => {
                e.insert(row);
            }
        }
    }

    let dates: Vec<NaiveDate> = cells.keys().map(|(d, _)| *d).collect::<BTreeSet<_>>().into_iter().collect();
    let tickers: Vec<String> = cells
        .keys()
        .map(|(_, t)| t.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut values = Vec::with_capacity(dates.len() * tickers.len() * N_FEATURES);
    for date in &dates {
        for ticker in &tickers {
            // BTreeMap lookups need an owned key; the clone is per cell.
            match cells.get(&(*date, ticker.clone())) {
                Some(row) => values.extend_from_slice(row),
                None => {
                    return Err(Error::PanelGap {
                        date: *date,
                        ticker: ticker.clone(),
                    })
                }
            }
        }
    }
    let panel = FeaturePanel::new(dates, tickers, values)?;
    let warnings = panel.consistency_warnings();
    Ok((panel, warnings))
}

pub fn save_csv(panel: &FeaturePanel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    write_csv(panel, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Canonical formatting: ISO dates and shortest round-trip decimals, so
/// reading the output back reproduces every value bit for bit.
pub fn write_csv<W: Write>(panel: &FeaturePanel, out: &mut W) -> std::io::Result<()> {
    let header: Vec<&str> = ["date", "ticker"]
        .into_iter()
        .chain(Feature::ALL.iter().map(|f| f.column()))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for (t, date) in panel.dates().iter().enumerate() {
        let date = date.format(DATE_FORMAT);
        for (i, ticker) in panel.tickers().iter().enumerate() {
            write!(out, "{date},{ticker}")?;
            for v in panel.cell(t, i) {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}
