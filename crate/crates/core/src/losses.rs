//! The four portfolio losses and their analytic gradients.
//!
//! Every loss is a function of the node outputs `O` (stocks, then the
//! optional hold node) and a per-stock signal delta `Δ` (next-step minus
//! current return or price). Notation used below:
//!
//! - `m(o)`: allocation magnitude, `|o|`, or `o * tanh(γo)` when smooth.
//! - `s(o)`: trade sign, `sign(o)`, or `tanh(γo)` when smooth.
//! - `S = Σ m(O_j)` over every node, `V̂_i = m(O_i) / S`, `H = m(O_hold) / S`.
//!
//! | variant         | value                                                  |
//! |-----------------|--------------------------------------------------------|
//! | `StockLoss`     | `-(Σ V̂_i Δ_i s_i + u·H)`                              |
//! | `StockLossMax`  | `1 - Σ V̂_i (Δ_i / D) s_i - u·H`, `D = max_j Δ_j`       |
//! | `StockLossL2`   | `1 - sqrt(Σ V̂_i (Δ_i / D)^2 + u·H^2)`                  |
//! | `StockLossNorm` | `1 - Σ m_i Δ_i s_i / Σ_j m_j Δ_j - u·H`                |
//!
//! with `u = 1` when the hold node is enabled. `D`, the `StockLossNorm`
//! denominator and `S` are clamped to `denom_epsilon` in magnitude (keeping
//! their sign). A clamped quantity is a constant: no gradient flows through
//! it. `D` never carries gradient. The `StockLossL2` radicand is floored at
//! `denom_epsilon^2`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::allocation::{sign_proxy, OutputVector};
use crate::error::{ensure_finite, Error, Result};

pub const DEFAULT_GAMMA: f64 = 10.0;
pub const DEFAULT_DENOM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossVariant {
    StockLoss,
    StockLossMax,
    StockLossL2,
    StockLossNorm,
}

impl LossVariant {
    pub const ALL: [LossVariant; 4] = [
        LossVariant::StockLoss,
        LossVariant::StockLossMax,
        LossVariant::StockLossL2,
        LossVariant::StockLossNorm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossVariant::StockLoss => "StockLoss",
            LossVariant::StockLossMax => "StockLossMax",
            LossVariant::StockLossL2 => "StockLossL2",
            LossVariant::StockLossNorm => "StockLossNorm",
        }
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossVariant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let valid: Vec<&str> = LossVariant::ALL.iter().map(|v| v.name()).collect();
                Error::InvalidParameter(format!(
                    "unknown loss variant `{s}`; valid variants: {}",
                    valid.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SignalSource {
    Return,
    Price,
}

impl SignalSource {
    pub const ALL: [SignalSource; 2] = [SignalSource::Return, SignalSource::Price];
}

impl fmt::Display for SignalSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SignalSource::Return => f.write_str("Return"),
            SignalSource::Price => f.write_str("Price"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub variant: LossVariant,
    pub smooth: bool,
    pub gamma: f64,
    pub use_hold: bool,
    pub signal_source: SignalSource,
    pub denom_epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            variant: LossVariant::StockLoss,
            smooth: true,
            gamma: DEFAULT_GAMMA,
            use_hold: false,
            signal_source: SignalSource::Return,
            denom_epsilon: DEFAULT_DENOM_EPSILON,
        }
    }
}

impl LossConfig {
    pub fn new(variant: LossVariant) -> Self {
        LossConfig {
            variant,
            ..Default::default()
        }
    }

    pub fn smooth(mut self, smooth: bool) -> Self {
        self.smooth = smooth;
        self
    }

    pub fn with_hold(mut self, use_hold: bool) -> Self {
        self.use_hold = use_hold;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_source(mut self, source: SignalSource) -> Self {
        self.signal_source = source;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.denom_epsilon.is_finite() && self.denom_epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "denom_epsilon must be positive, got {}",
                self.denom_epsilon
            )));
        }
        Ok(())
    }

    /// Short label such as `StockLossL2/smooth/hold/Price`.
    pub fn label(&self) -> String {
        format!(
            "{}/{}/{}/{}",
            self.variant,
            if self.smooth { "smooth" } else { "nonsmooth" },
            if self.use_hold { "hold" } else { "nohold" },
            self.signal_source
        )
    }
}

/// Per-stock signal: `Ret_{t+1} - Ret_t` or `PRC_{t+1} - PRC_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalDelta {
    deltas: Vec<f64>,
}

impl SignalDelta {
    pub fn new(deltas: Vec<f64>) -> Result<Self> {
        ensure_finite(&deltas, "signal delta")?;
        Ok(SignalDelta { deltas })
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossEvaluation {
    pub value: f64,
    /// `∂L/∂O`, stocks first, then the hold node.
    pub gradient: Vec<f64>,
}

/// Evaluates whichever variant `cfg` selects.
pub fn evaluate(outputs: &OutputVector, delta: &SignalDelta, cfg: &LossConfig) -> Result<LossEvaluation> {
    check_inputs(outputs, delta, cfg)?;
    let nodes = outputs.to_nodes();
    let mut gradient = vec![0.0; nodes.len()];
    let value = eval_nodes(&nodes, outputs.has_hold(), delta.deltas(), cfg, &mut gradient);
    if !value.is_finite() {
        return Err(Error::NonFinite {
            what: "loss value",
            index: 0,
        });
    }
    ensure_finite(&gradient, "loss gradient")?;
    Ok(LossEvaluation { value, gradient })
}

pub fn stock_loss(outputs: &OutputVector, delta: &SignalDelta, cfg: &LossConfig) -> Result<LossEvaluation> {
    expect_variant(cfg, LossVariant::StockLoss)?;
    evaluate(outputs, delta, cfg)
}

pub fn stock_loss_max(outputs: &OutputVector, delta: &SignalDelta, cfg: &LossConfig) -> Result<LossEvaluation> {
    expect_variant(cfg, LossVariant::StockLossMax)?;
    evaluate(outputs, delta, cfg)
}

pub fn stock_loss_l2(outputs: &OutputVector, delta: &SignalDelta, cfg: &LossConfig) -> Result<LossEvaluation> {
    expect_variant(cfg, LossVariant::StockLossL2)?;
    evaluate(outputs, delta, cfg)
}

pub fn stock_loss_norm(outputs: &OutputVector, delta: &SignalDelta, cfg: &LossConfig) -> Result<LossEvaluation> {
    expect_variant(cfg, LossVariant::StockLossNorm)?;
    evaluate(outputs, delta, cfg)
}

fn expect_variant(cfg: &LossConfig, expected: LossVariant) -> Result<()> {
    if cfg.variant == expected {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{expected} called with a {} config",
            cfg.variant
        )))
    }
}

fn check_inputs(outputs: &OutputVector, delta: &SignalDelta, cfg: &LossConfig) -> Result<()> {
    cfg.validate()?;
    if delta.len() != outputs.n_stocks() {
        return Err(Error::LengthMismatch {
            what: "signal delta",
            expected: outputs.n_stocks(),
            actual: delta.len(),
        });
    }
    if outputs.has_hold() != cfg.use_hold {
        return Err(Error::HoldMismatch {
            expected: cfg.use_hold,
            actual: outputs.has_hold(),
        });
    }
    Ok(())
}

/// Clamp `x` to at least `eps` in magnitude, keeping its sign (`+` at 0).
/// Returns the clamped value and whether `x` was used as-is.
fn guard(x: f64, eps: f64) -> (f64, bool) {
    if x.abs() >= eps {
        (x, true)
    } else if x < 0.0 {
        (-eps, false)
    } else {
        (eps, false)
    }
}

/// Magnitude and sign terms of one node, with their derivatives.
#[derive(Debug, Clone, Copy)]
struct NodeTerms {
    m: f64,
    dm: f64,
    s: f64,
    ds: f64,
}

impl NodeTerms {
    fn new(o: f64, cfg: &LossConfig) -> Self {
        if cfg.smooth {
            let t = (cfg.gamma * o).tanh();
            let dt = cfg.gamma * (1.0 - t * t);
            NodeTerms {
                m: o * t,
                dm: t + o * dt,
                s: t,
                ds: dt,
            }
        } else {
            let s = sign_proxy(o, cfg.gamma, false);
            NodeTerms {
                m: o.abs(),
                dm: s,
                s,
                ds: 0.0,
            }
        }
    }
}

/// Core evaluation on a flat node slice. Inputs are assumed validated.
/// Writes `∂L/∂O` into `grad` (length = `nodes.len()`) and returns `L`.
pub(crate) fn eval_nodes(nodes: &[f64], has_hold: bool, deltas: &[f64], cfg: &LossConfig, grad: &mut [f64]) -> f64 {
    let n = deltas.len();
    debug_assert_eq!(nodes.len(), n + usize::from(has_hold));
    debug_assert_eq!(grad.len(), nodes.len());
    let eps = cfg.denom_epsilon;
    let u = if cfg.use_hold && has_hold { 1.0 } else { 0.0 };

    let terms: Vec<NodeTerms> = nodes.iter().map(|&o| NodeTerms::new(o, cfg)).collect();
    let stocks = &terms[..n];
    let hold = if has_hold { Some(terms[n]) } else { None };

    let s_raw: f64 = terms.iter().map(|t| t.m).sum();
    let (s, s_live) = guard(s_raw, eps);
    let s2 = s * s;

    // H = m_h / S and its gradient.
    let hold_val = hold.map_or(0.0, |h| h.m / s);
    let d_hold = |k: usize| -> f64 {
        let Some(h) = hold else { return 0.0 };
        let direct = if k == n { h.dm / s } else { 0.0 };
        let through_s = if s_live { h.m * terms[k].dm / s2 } else { 0.0 };
        direct - through_s
    };

    let max_delta = deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    match cfg.variant {
        LossVariant::StockLoss | LossVariant::StockLossMax => {
            let (scale, offset) = match cfg.variant {
                LossVariant::StockLoss => (1.0, 0.0),
                _ => (1.0 / guard(max_delta, eps).0, 1.0),
            };
            // P = A / S with A = Σ m_i c_i s_i, c_i = Δ_i * scale.
            let a: f64 = stocks
                .iter()
                .zip(deltas)
                .map(|(t, &d)| t.m * d * scale * t.s)
                .sum();
            for k in 0..nodes.len() {
                let mut dp = if s_live { -a * terms[k].dm / s2 } else { 0.0 };
                if k < n {
                    let c = deltas[k] * scale;
                    dp += (terms[k].dm * c * terms[k].s + terms[k].m * c * terms[k].ds) / s;
                }
                grad[k] = -dp - u * d_hold(k);
            }
            offset - (a / s + u * hold_val)
        }
        LossVariant::StockLossL2 => {
            let d = guard(max_delta, eps).0;
            let ratios: Vec<f64> = deltas.iter().map(|&x| x / d).collect();
            let b: f64 = stocks.iter().zip(&ratios).map(|(t, r)| t.m * r * r).sum();
            let radicand = b / s + u * hold_val * hold_val;
            let floor = eps * eps;
            if radicand < floor {
                grad.iter_mut().for_each(|g| *g = 0.0);
                return 1.0 - floor.sqrt();
            }
            let root = radicand.sqrt();
            for k in 0..nodes.len() {
                let mut dr = if s_live { -b * terms[k].dm / s2 } else { 0.0 };
                if k < n {
                    dr += terms[k].dm * ratios[k] * ratios[k] / s;
                }
                dr += 2.0 * u * hold_val * d_hold(k);
                grad[k] = -dr / (2.0 * root);
            }
            1.0 - root
        }
        LossVariant::StockLossNorm => {
            let q_raw: f64 = stocks.iter().zip(deltas).map(|(t, &d)| t.m * d).sum();
            let (q, q_live) = guard(q_raw, eps);
            let a: f64 = stocks.iter().zip(deltas).map(|(t, &d)| t.m * d * t.s).sum();
            for k in 0..nodes.len() {
                let mut dratio = 0.0;
                if k < n {
                    let t = terms[k];
                    dratio = (t.dm * deltas[k] * t.s + t.m * deltas[k] * t.ds) / q;
                    if q_live {
                        dratio -= a * t.dm * deltas[k] / (q * q);
                    }
                }
                grad[k] = -dratio - u * d_hold(k);
            }
            1.0 - a / q - u * hold_val
        }
    }
}

/// Signature shared by the per-variant loss functions.
pub type LossFn = fn(&OutputVector, &SignalDelta, &LossConfig) -> Result<LossEvaluation>;

/// Central finite-difference gradient of `loss_fn` with respect to every
/// node: `(L(O + h e_k) - L(O - h e_k)) / 2h`.
pub fn loss_gradient_fd(
    loss_fn: LossFn,
    outputs: &OutputVector,
    delta: &SignalDelta,
    cfg: &LossConfig,
    h: f64,
) -> Result<Vec<f64>> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidParameter(format!("step h must be positive, got {h}")));
    }
    let nodes = outputs.to_nodes();
    if let Some((index, &value)) = nodes.iter().enumerate().find(|(_, o)| o.abs() + h >= 1.0) {
        return Err(Error::PerturbationOutOfRange { index, value, h });
    }
    let mut grad = Vec::with_capacity(nodes.len());
    let mut probe = nodes.clone();
    for k in 0..nodes.len() {
        probe[k] = nodes[k] + h;
        let plus = loss_fn(&OutputVector::from_nodes(&probe, outputs.has_hold())?, delta, cfg)?.value;
        probe[k] = nodes[k] - h;
        let minus = loss_fn(&OutputVector::from_nodes(&probe, outputs.has_hold())?, delta, cfg)?.value;
        probe[k] = nodes[k];
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// One-sided difference quotient for node `k`: forward
/// `(L(O + h e_k) - L(O)) / h` or backward `(L(O) - L(O - h e_k)) / h`.
pub fn one_sided_fd(
    loss_fn: LossFn,
    outputs: &OutputVector,
    delta: &SignalDelta,
    cfg: &LossConfig,
    k: usize,
    h: f64,
    forward: bool,
) -> Result<f64> {
    let nodes = outputs.to_nodes();
    if k >= nodes.len() {
        return Err(Error::LengthMismatch {
            what: "node index",
            expected: nodes.len(),
            actual: k,
        });
    }
    if nodes[k].abs() + h >= 1.0 {
        return Err(Error::PerturbationOutOfRange {
            index: k,
            value: nodes[k],
            h,
        });
    }
    let mut probe = nodes.clone();
    probe[k] += if forward { h } else { -h };
    let base = loss_fn(outputs, delta, cfg)?.value;
    let moved = loss_fn(&OutputVector::from_nodes(&probe, outputs.has_hold())?, delta, cfg)?.value;
    Ok(if forward { (moved - base) / h } else { (base - moved) / h })
}

/// Mean loss over a batch, with the per-sample gradients averaged in index
/// order.
pub fn batch_mean(batch: &[(OutputVector, SignalDelta)], cfg: &LossConfig) -> Result<LossEvaluation> {
    let Some((first, _)) = batch.first() else {
        return Err(Error::EmptySample("batch_mean"));
    };
    let mut value = 0.0;
    let mut gradient = vec![0.0; first.len()];
    for (outputs, delta) in batch {
        let e = evaluate(outputs, delta, cfg)?;
        if e.gradient.len() != gradient.len() {
            return Err(Error::LengthMismatch {
                what: "batch element",
                expected: gradient.len(),
                actual: e.gradient.len(),
            });
        }
        value += e.value;
        gradient.iter_mut().zip(&e.gradient).for_each(|(g, x)| *g += x);
    }
    let inv = 1.0 / batch.len() as f64;
    gradient.iter_mut().for_each(|g| *g *= inv);
    Ok(LossEvaluation {
        value: value * inv,
        gradient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ov(stocks: &[f64], hold: Option<f64>) -> OutputVector {
        OutputVector::new(stocks.to_vec(), hold).unwrap()
    }

    fn sd(d: &[f64]) -> SignalDelta {
        SignalDelta::new(d.to_vec()).unwrap()
    }

    fn cfg(variant: LossVariant, smooth: bool) -> LossConfig {
        LossConfig::new(variant).smooth(smooth)
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn stock_loss_examples() {
        let c = cfg(LossVariant::StockLoss, false);
        let e = stock_loss(&ov(&[0.8], None), &sd(&[0.02]), &c).unwrap();
        assert!(close(e.value, -0.02, 1e-17));

        let e = stock_loss(&ov(&[0.5, -0.5], None), &sd(&[0.02, -0.02]), &c).unwrap();
        assert!(close(e.value, -0.02, 1e-17));

        // -0.02 * tanh(8), 40-digit reference
        let e = stock_loss(&ov(&[0.8], None), &sd(&[0.02]), &c.smooth(true)).unwrap();
        assert!(close(e.value, -0.019_999_995_498_593_518, 1e-16));
    }

    #[test]
    fn stock_loss_max_examples() {
        let c = cfg(LossVariant::StockLossMax, false);
        let o = 1.0 - 1e-9;
        let e = stock_loss_max(&ov(&[o, o], None), &sd(&[0.02, 0.01]), &c).unwrap();
        assert!(close(e.value, 0.25, 1e-15));

        let e = stock_loss_max(&ov(&[0.5], None), &sd(&[0.03]), &c).unwrap();
        assert!(close(e.value, 0.0, 1e-15));

        let e = stock_loss_max(&ov(&[0.5, 0.5], None), &sd(&[0.0, 0.0]), &c).unwrap();
        assert_eq!(e.value, 1.0);
        assert!(e.gradient.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn stock_loss_l2_examples() {
        let c = cfg(LossVariant::StockLossL2, false);
        let e = stock_loss_l2(&ov(&[0.9], None), &sd(&[0.02]), &c).unwrap();
        assert!(close(e.value, 0.0, 1e-15));

        let e = stock_loss_l2(&ov(&[0.4, -0.4], None), &sd(&[0.02, 0.01]), &c).unwrap();
        // 1 - sqrt(0.625), 40-digit reference
        assert!(close(e.value, 0.209_430_584_957_905_17, 1e-15));

        let e = stock_loss_l2(&ov(&[0.3, 0.6], None), &sd(&[0.0, 0.0]), &c).unwrap();
        assert_eq!(e.value, 1.0 - c.denom_epsilon);
        assert!(e.gradient.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn stock_loss_l2_ignores_direction() {
        let c = cfg(LossVariant::StockLossL2, true);
        let a = evaluate(&ov(&[0.4, 0.7], None), &sd(&[0.02, -0.01]), &c).unwrap();
        let b = evaluate(&ov(&[-0.4, 0.7], None), &sd(&[0.02, -0.01]), &c).unwrap();
        assert!(close(a.value, b.value, 1e-15));
    }

    #[test]
    fn stock_loss_norm_examples() {
        let c = cfg(LossVariant::StockLossNorm, false);
        let e = stock_loss_norm(&ov(&[0.7], None), &sd(&[0.05]), &c).unwrap();
        assert!(close(e.value, 0.0, 1e-15));

        let e = stock_loss_norm(&ov(&[0.5, 0.5], None), &sd(&[0.04, 0.02]), &c).unwrap();
        assert!(close(e.value, 0.0, 1e-15));

        let e = stock_loss_norm(&ov(&[0.5, -0.5], None), &sd(&[0.04, 0.02]), &c).unwrap();
        assert!(close(e.value, 1.0 - 1.0 / 3.0, 1e-14));
    }

    #[test]
    fn norm_denominator_clamp_keeps_sign() {
        let c = cfg(LossVariant::StockLossNorm, false);
        // Σ|O|Δ = 0.5*1e-10 - 0.5*3e-10 < 0 and tiny: clamped to -eps.
        let e = evaluate(&ov(&[0.5, -0.5], None), &sd(&[1e-10, -3e-10]), &c).unwrap();
        let numerator = 0.5 * 1e-10 + 0.5 * 3e-10;
        assert!(close(e.value, 1.0 - numerator / -1e-8, 1e-12));
    }

    #[test]
    fn hold_term_enters_each_variant_as_written() {
        let o = ov(&[0.5, -0.25], Some(0.25));
        let d = sd(&[0.04, -0.02]);
        // V̂ = [0.5, 0.25], H = 0.25
        let l1 = evaluate(&o, &d, &cfg(LossVariant::StockLoss, false).with_hold(true)).unwrap();
        assert!(close(l1.value, -(0.5 * 0.04 + 0.25 * 0.02 + 0.25), 1e-15));
        let l2 = evaluate(&o, &d, &cfg(LossVariant::StockLossMax, false).with_hold(true)).unwrap();
        assert!(close(l2.value, 1.0 - (0.5 + 0.25 * 0.5) - 0.25, 1e-15));
        let l3 = evaluate(&o, &d, &cfg(LossVariant::StockLossL2, false).with_hold(true)).unwrap();
        assert!(close(l3.value, 1.0 - (0.5 + 0.25 * 0.25 + 0.0625f64).sqrt(), 1e-15));
        let l4 = evaluate(&o, &d, &cfg(LossVariant::StockLossNorm, false).with_hold(true)).unwrap();
        // numerator 0.02 + 0.005, denominator 0.02 - 0.005
        assert!(close(l4.value, 1.0 - 0.025 / 0.015 - 0.25, 1e-14));
    }

    #[test]
    fn input_contract_errors() {
        let c = cfg(LossVariant::StockLoss, true);
        assert!(matches!(
            evaluate(&ov(&[0.1, 0.2], None), &sd(&[0.1]), &c),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            evaluate(&ov(&[0.1], Some(0.2)), &sd(&[0.1]), &c),
            Err(Error::HoldMismatch { .. })
        ));
        assert!(SignalDelta::new(vec![0.1, f64::NAN]).is_err());
        assert!(stock_loss_l2(&ov(&[0.1], None), &sd(&[0.1]), &c).is_err());
        assert!(evaluate(&ov(&[0.1], None), &sd(&[0.1]), &c.with_gamma(0.0)).is_err());
    }

    #[test]
    fn variant_names_parse() {
        for v in LossVariant::ALL {
            assert_eq!(v.name().parse::<LossVariant>().unwrap(), v);
        }
        let err = "StockLossL3".parse::<LossVariant>().unwrap_err().to_string();
        assert!(err.contains("StockLoss, StockLossMax, StockLossL2, StockLossNorm"));
    }

    #[test]
    fn fd_rejects_perturbation_outside_interval() {
        let c = cfg(LossVariant::StockLoss, true);
        let err = loss_gradient_fd(evaluate, &ov(&[0.9999995], None), &sd(&[0.1]), &c, 1e-6);
        assert!(matches!(err, Err(Error::PerturbationOutOfRange { .. })));
    }

    #[test]
    fn smooth_gradient_is_finite_at_origin() {
        let c = cfg(LossVariant::StockLoss, true);
        let e = evaluate(&ov(&[0.0, 0.5], None), &sd(&[0.02, 0.01]), &c).unwrap();
        assert!(e.gradient.iter().all(|g| g.is_finite()));
        let fd = loss_gradient_fd(evaluate, &ov(&[0.0, 0.5], None), &sd(&[0.02, 0.01]), &c, 1e-6).unwrap();
        assert!(close(e.gradient[0], fd[0], 1e-6));
    }

    #[test]
    fn smooth_gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for variant in LossVariant::ALL {
            for use_hold in [false, true] {
                let c = cfg(variant, true).with_hold(use_hold);
                for _ in 0..20 {
                    let n = rng.random_range(1..6);
                    let stocks: Vec<f64> = (0..n)
                        .map(|_| rng.random_range(0.1..0.9) * if rng.random_bool(0.5) { 1.0 } else { -1.0 })
                        .collect();
                    let hold = use_hold.then(|| rng.random_range(0.1..0.9));
                    let deltas: Vec<f64> = (0..n).map(|_| rng.random_range(0.005..0.05)).collect();
                    let o = ov(&stocks, hold);
                    let d = sd(&deltas);
                    let analytic = evaluate(&o, &d, &c).unwrap().gradient;
                    let fd = loss_gradient_fd(evaluate, &o, &d, &c, 1e-6).unwrap();
                    for (a, f) in analytic.iter().zip(&fd) {
                        let tol = (1e-5 * a.abs().max(f.abs())).max(1e-9);
                        assert!((a - f).abs() <= tol, "{}: {a} vs {f}", c.label());
                    }
                }
            }
        }
    }

    #[test]
    fn negating_one_output_flips_its_contribution() {
        let c = cfg(LossVariant::StockLoss, false);
        let stocks = [0.3, -0.6, 0.45];
        let deltas = [0.02, 0.01, -0.03];
        let base = evaluate(&ov(&stocks, None), &sd(&deltas), &c).unwrap().value;
        let total: f64 = stocks.iter().map(|o: &f64| o.abs()).sum();
        for i in 0..3 {
            let mut flipped = stocks;
            flipped[i] = -flipped[i];
            let v = evaluate(&ov(&flipped, None), &sd(&deltas), &c).unwrap().value;
            let contribution = stocks[i].abs() / total * deltas[i] * stocks[i].signum();
            // L = -Σ contributions, so flipping one contribution moves L by 2·contribution.
            assert!(close(v - base, 2.0 * contribution, 1e-15));
        }
    }

    #[test]
    fn batch_mean_averages_in_order() {
        let c = cfg(LossVariant::StockLoss, false);
        let batch = vec![
            (ov(&[0.8], None), sd(&[0.02])),
            (ov(&[-0.8], None), sd(&[0.04])),
        ];
        let e = batch_mean(&batch, &c).unwrap();
        assert!(close(e.value, (-0.02 + 0.04) / 2.0, 1e-17));
        assert!(batch_mean(&[], &c).is_err());
    }
}
