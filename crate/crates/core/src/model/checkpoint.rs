use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureScaler, ModelConfig, ModelParams, Network, ParamBlock};
use crate::error::{ensure_finite, Error, Result};

pub const CHECKPOINT_FORMAT: &str = "stockloss-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to rebuild a trained forecaster and preprocess its
/// inputs. Stored as JSON; floats round-trip bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub layout: Vec<ParamBlock>,
    pub params: Vec<f64>,
    pub scaler: FeatureScaler,
    /// Tickers the model was trained on, in column order.
    pub tickers: Vec<String>,
}

impl Checkpoint {
    pub fn new(network: &Network, scaler: &FeatureScaler, tickers: &[String]) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: network.config,
            layout: network.params.layout.clone(),
            params: network.params.values.clone(),
            scaler: scaler.clone(),
            tickers: tickers.to_vec(),
        }
    }

    pub fn network(&self) -> Result<Network> {
        Network::new(
            self.config,
            ModelParams {
                layout: self.layout.clone(),
                values: self.params.clone(),
            },
        )
    }

    pub fn to_json(&self) -> Result<String> {
        ensure_finite(&self.params, "checkpoint parameters")?;
        serde_json::to_string_pretty(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unexpected format tag `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (this build reads version {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        let width = ck.config.n_stocks * ck.config.n_features;
        if ck.scaler.mean.len() != width || ck.scaler.std.len() != width || ck.tickers.len() != ck.config.n_stocks {
            return Err(Error::Checkpoint("scaler or tickers do not match the model config".into()));
        }
        ck.network()?;
        Ok(ck)
    }

    /// Writes via a temporary sibling file and a rename, so a failed write
    /// never leaves a truncated checkpoint behind.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = self.to_json()?;
        let tmp = path.with_extension("json.partial");
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(text.as_bytes())?;
            f.sync_all()?;
            fs::rename(&tmp, path)
        };
        write().map_err(|e| {
            let _ = fs::remove_file(&tmp);
            Error::io(path, e)
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
