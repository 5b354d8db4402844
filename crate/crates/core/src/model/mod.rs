//! A small forecaster mapping a lookback window of features to one `tanh`
//! output per stock (plus the hold node), with hand-written backprop.
//!
//! The window is flattened time-major: `[day][stock][feature]`, which is
//! exactly the panel's memory layout, so windows are contiguous slices.

mod adam;
mod checkpoint;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::allocation::OutputVector;
use crate::error::{ensure_finite, Error, Result};
use crate::losses::{self, LossConfig, SignalDelta};

pub use adam::Adam;
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use train::{
    decide_segment, train, Dataset, EpochRecord, FeatureScaler, RestartStatus, RestartSummary, TrainConfig,
    TrainOutcome,
};

/// Largest double below 1. `tanh` rounds to exactly ±1 for |z| > ~19; the
/// outputs are clamped here so they stay inside the open interval.
const MAX_OUTPUT: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Hidden units (MLP only).
    pub hidden_width: usize,
    pub seq_len: usize,
    pub n_stocks: usize,
    pub n_features: usize,
    pub use_hold: bool,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(architecture: Architecture, n_stocks: usize) -> Self {
        ModelConfig {
            architecture,
            hidden_width: 16,
            seq_len: 96,
            n_stocks,
            n_features: crate::data::N_FEATURES,
            use_hold: false,
            seed: 0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.seq_len * self.n_stocks * self.n_features
    }

    pub fn output_dim(&self) -> usize {
        self.n_stocks + usize::from(self.use_hold)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("seq_len", self.seq_len),
            ("n_stocks", self.n_stocks),
            ("n_features", self.n_features),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidParameter(format!("{name} must be >= 1")));
            }
        }
        if self.architecture == Architecture::Mlp && self.hidden_width == 0 {
            return Err(Error::InvalidParameter("hidden_width must be >= 1 for an MLP".into()));
        }
        Ok(())
    }

    /// Parameter blocks in storage order.
    pub fn layout(&self) -> Vec<ParamBlock> {
        let (inp, out) = (self.input_dim(), self.output_dim());
        let shapes: Vec<(&str, usize, usize)> = match self.architecture {
            Architecture::Linear => vec![("out.weight", out, inp), ("out.bias", out, 1)],
            Architecture::Mlp => {
                let h = self.hidden_width;
                vec![
                    ("hidden.weight", h, inp),
                    ("hidden.bias", h, 1),
                    ("out.weight", out, h),
                    ("out.bias", out, 1),
                ]
            }
        };
        let mut offset = 0;
        shapes
            .into_iter()
            .map(|(name, rows, cols)| {
                let block = ParamBlock {
                    name: name.to_string(),
                    rows,
                    cols,
                    offset,
                };
                offset += rows * cols;
                block
            })
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.layout().iter().map(ParamBlock::len).sum()
    }
}

/// One weight matrix or bias vector inside the flat parameter list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layout: Vec<ParamBlock>,
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        ModelParams {
            values: vec![0.0; cfg.n_params()],
            layout: cfg.layout(),
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` per layer, biases
    /// included.
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(cfg);
        for block in p.layout.clone() {
            let fan_in = match block.name.as_str() {
                "hidden.weight" | "hidden.bias" => cfg.input_dim(),
                _ if cfg.architecture == Architecture::Mlp => cfg.hidden_width,
                _ => cfg.input_dim(),
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut p.values[block.range()] {
                *v = rng.random_range(-bound..=bound);
            }
        }
        p
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.layout.iter().find(|b| b.name == name)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-call buffers so the training loop does not allocate per sample.
#[derive(Debug, Clone, Default)]
pub(crate) struct Scratch {
    hidden: Vec<f64>,
    out: Vec<f64>,
    loss_grad: Vec<f64>,
    g_out: Vec<f64>,
    g_hidden: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Network {
    pub fn new(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        if params.layout != config.layout() {
            return Err(Error::Compatibility("parameter layout does not match model config".into()));
        }
        if params.values.len() != config.n_params() {
            return Err(Error::LengthMismatch {
                what: "parameters",
                expected: config.n_params(),
                actual: params.values.len(),
            });
        }
        Ok(Network { config, params })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        Self::new(config, ModelParams::zeros(&config))
    }

    fn check_window(&self, window: &[f64]) -> Result<()> {
        if window.len() != self.config.input_dim() {
            return Err(Error::LengthMismatch {
                what: "input window (seq_len * n_stocks * n_features)",
                expected: self.config.input_dim(),
                actual: window.len(),
            });
        }
        ensure_finite(window, "input window")
    }

    pub fn forward(&self, window: &[f64]) -> Result<OutputVector> {
        self.check_window(window)?;
        let mut scratch = Scratch::default();
        self.forward_into(window, &mut scratch);
        OutputVector::from_nodes(&scratch.out, self.config.use_hold)
    }

    /// Loss on one window and `∂L/∂params`, flat in layout order.
    pub fn backward(&self, window: &[f64], delta: &SignalDelta, loss_cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
        self.check_window(window)?;
        let mut scratch = Scratch::default();
        self.forward_into(window, &mut scratch);
        let outputs = OutputVector::from_nodes(&scratch.out, self.config.use_hold)?;
        let eval = losses::evaluate(&outputs, delta, loss_cfg)?;
        let mut grad = vec![0.0; self.params.len()];
        self.accumulate_grad(window, &mut scratch, &eval.gradient, 1.0, &mut grad);
        Ok((eval.value, grad))
    }

    pub(crate) fn forward_into(&self, x: &[f64], s: &mut Scratch) {
        let v = &self.params.values;
        let out_dim = self.config.output_dim();
        s.out.resize(out_dim, 0.0);
        match self.config.architecture {
            Architecture::Linear => {
                let inp = x.len();
                let (w, b) = (&v[..out_dim * inp], &v[out_dim * inp..]);
                for r in 0..out_dim {
                    s.out[r] = squash(dot(&w[r * inp..(r + 1) * inp], x) + b[r]);
                }
            }
            Architecture::Mlp => {
                let (inp, h) = (x.len(), self.config.hidden_width);
                let w1 = &v[..h * inp];
                let b1 = &v[h * inp..h * inp + h];
                let rest = &v[h * inp + h..];
                let (w2, b2) = (&rest[..out_dim * h], &rest[out_dim * h..]);
                s.hidden.resize(h, 0.0);
                for j in 0..h {
                    s.hidden[j] = (dot(&w1[j * inp..(j + 1) * inp], x) + b1[j]).tanh();
                }
                for r in 0..out_dim {
                    s.out[r] = squash(dot(&w2[r * h..(r + 1) * h], &s.hidden) + b2[r]);
                }
            }
        }
    }

    /// Adds `scale * ∂L/∂params` to `grad`, given `∂L/∂O` and a scratch
    /// filled by [`Network::forward_into`] on the same input.
    pub(crate) fn accumulate_grad(&self, x: &[f64], s: &mut Scratch, dl_dout: &[f64], scale: f64, grad: &mut [f64]) {
        let v = &self.params.values;
        let out_dim = self.config.output_dim();
        s.g_out.clear();
        s.g_out
            .extend(s.out.iter().zip(dl_dout).map(|(o, g)| scale * g * (1.0 - o * o)));
        match self.config.architecture {
            Architecture::Linear => {
                let inp = x.len();
                let (gw, gb) = grad.split_at_mut(out_dim * inp);
                for r in 0..out_dim {
                    axpy(s.g_out[r], x, &mut gw[r * inp..(r + 1) * inp]);
                    gb[r] += s.g_out[r];
                }
            }
            Architecture::Mlp => {
                let (inp, h) = (x.len(), self.config.hidden_width);
                let w2 = &v[h * inp + h..h * inp + h + out_dim * h];
                let (g1, g2) = grad.split_at_mut(h * inp + h);
                let (gw2, gb2) = g2.split_at_mut(out_dim * h);
                s.g_hidden.clear();
                s.g_hidden.resize(h, 0.0);
                for r in 0..out_dim {
                    let go = s.g_out[r];
                    axpy(go, &s.hidden, &mut gw2[r * h..(r + 1) * h]);
                    gb2[r] += go;
                    axpy(go, &w2[r * h..(r + 1) * h], &mut s.g_hidden);
                }
                let (gw1, gb1) = g1.split_at_mut(h * inp);
                for j in 0..h {
                    let ga = s.g_hidden[j] * (1.0 - s.hidden[j] * s.hidden[j]);
                    axpy(ga, x, &mut gw1[j * inp..(j + 1) * inp]);
                    gb1[j] += ga;
                }
            }
        }
    }

    /// Forward + loss + gradient accumulation on pre-validated inputs.
    /// Returns the loss value (possibly non-finite; the caller checks).
    pub(crate) fn train_step(
        &self,
        x: &[f64],
        deltas: &[f64],
        loss_cfg: &LossConfig,
        scale: f64,
        s: &mut Scratch,
        grad: &mut [f64],
    ) -> f64 {
        self.forward_into(x, s);
        let mut loss_grad = std::mem::take(&mut s.loss_grad);
        loss_grad.resize(s.out.len(), 0.0);
        let value = losses::eval_nodes(&s.out, self.config.use_hold, deltas, loss_cfg, &mut loss_grad);
        self.accumulate_grad(x, s, &loss_grad, scale, grad);
        s.loss_grad = loss_grad;
        value
    }
}

fn squash(z: f64) -> f64 {
    z.tanh().clamp(-MAX_OUTPUT, MAX_OUTPUT)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{LossVariant, SignalSource};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(arch: Architecture, n_stocks: usize, seq_len: usize, use_hold: bool) -> ModelConfig {
        ModelConfig {
            architecture: arch,
            hidden_width: 4,
            seq_len,
            n_stocks,
            n_features: 3,
            use_hold,
            seed: 1,
        }
    }

    #[test]
    fn zero_params_give_zero_outputs() {
        for arch in [Architecture::Linear, Architecture::Mlp] {
            let net = Network::zeros(tiny(arch, 2, 3, true)).unwrap();
            let out = net.forward(&[0.7; 18]).unwrap();
            assert!(out.nodes().all(|o| o == 0.0));
            assert_eq!(out.len(), 3);
        }
    }

    #[test]
    fn identity_weight_gives_tanh_of_input() {
        let cfg = ModelConfig {
            architecture: Architecture::Linear,
            hidden_width: 0,
            seq_len: 1,
            n_stocks: 1,
            n_features: 1,
            use_hold: false,
            seed: 0,
        };
        let mut net = Network::zeros(cfg).unwrap();
        net.params.values[0] = 1.0;
        let out = net.forward(&[0.5]).unwrap();
        assert!((out.stock_outputs()[0] - 0.462_117_157_260_009_76).abs() < 1e-15);
    }

    #[test]
    fn huge_preactivations_stay_inside_interval() {
        let cfg = tiny(Architecture::Linear, 2, 1, false);
        let mut net = Network::zeros(cfg).unwrap();
        net.params.values.iter_mut().for_each(|v| *v = 1e6);
        let out = net.forward(&[1.0, -1.0, 3.0, 2.0, 2.0, 2.0]).unwrap();
        assert!(out.nodes().all(|o| o.abs() < 1.0));
    }

    #[test]
    fn layout_offsets_are_contiguous() {
        let cfg = tiny(Architecture::Mlp, 2, 3, true);
        let layout = cfg.layout();
        assert_eq!(layout[0].len(), 4 * 18);
        assert_eq!(layout[1].offset, 72);
        assert_eq!(layout[3].range().end, cfg.n_params());
        assert_eq!(cfg.n_params(), 72 + 4 + 3 * 4 + 3);
    }

    #[test]
    fn zero_delta_zeroes_the_gradient() {
        let cfg = tiny(Architecture::Mlp, 2, 3, false);
        let net = Network::new(cfg, ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(3))).unwrap();
        let x: Vec<f64> = (0..18).map(|i| (i as f64 * 0.37).sin()).collect();
        let loss = LossConfig::new(LossVariant::StockLoss);
        let (value, grad) = net.backward(&x, &SignalDelta::new(vec![0.0, 0.0]).unwrap(), &loss).unwrap();
        assert_eq!(value, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn dead_hidden_unit_gets_no_gradient() {
        let cfg = tiny(Architecture::Mlp, 2, 3, false);
        let mut params = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(5));
        // zero the outgoing weights of hidden unit 1
        let w2 = params.block("out.weight").unwrap().clone();
        for r in 0..w2.rows {
            params.values[w2.offset + r * w2.cols + 1] = 0.0;
        }
        let net = Network::new(cfg, params).unwrap();
        let x: Vec<f64> = (0..18).map(|i| (i as f64 * 0.61).cos()).collect();
        let loss = LossConfig::new(LossVariant::StockLossMax).with_source(SignalSource::Price);
        let (_, grad) = net.backward(&x, &SignalDelta::new(vec![0.5, -0.2]).unwrap(), &loss).unwrap();
        let w1 = net.params.block("hidden.weight").unwrap();
        let b1 = net.params.block("hidden.bias").unwrap();
        assert!(grad[w1.offset + w1.cols..w1.offset + 2 * w1.cols].iter().all(|g| *g == 0.0));
        assert_eq!(grad[b1.offset + 1], 0.0);
        assert!(grad[w1.offset..w1.offset + w1.cols].iter().any(|g| *g != 0.0));
    }

    #[test]
    fn shape_and_finiteness_checks() {
        let net = Network::zeros(tiny(Architecture::Linear, 2, 3, false)).unwrap();
        assert!(matches!(net.forward(&[0.0; 5]), Err(Error::LengthMismatch { .. })));
        let mut x = vec![0.0; 18];
        x[4] = f64::NAN;
        assert!(matches!(net.forward(&x), Err(Error::NonFinite { .. })));
        let other = tiny(Architecture::Mlp, 2, 3, false);
        assert!(Network::new(other, ModelParams::zeros(&tiny(Architecture::Linear, 2, 3, false))).is_err());
    }
}
