//! Finite-difference checks of the analytic loss gradients, plus the
//! numerical properties the losses are expected to show (gradient jump of
//! the non-smooth loss at zero, smoothing error, near-linearity in one
//! output).

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::allocation::OutputVector;
use crate::error::{Error, Result};
use crate::losses::{evaluate, loss_gradient_fd, LossConfig, LossVariant, SignalDelta, SignalSource, DEFAULT_GAMMA};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub points: usize,
    pub n_stocks: usize,
    /// Lower bound on `|O_i|` for sampled points.
    pub min_abs_output: f64,
    pub h: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub gamma: f64,
    pub seed: u64,
    pub include_nonsmooth_at_zero: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            points: 100,
            n_stocks: 5,
            min_abs_output: 0.05,
            h: 1e-6,
            rel_tol: 1e-5,
            abs_tol: 1e-9,
            gamma: DEFAULT_GAMMA,
            seed: 0,
            include_nonsmooth_at_zero: false,
        }
    }
}

impl GradcheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.points == 0 || self.n_stocks == 0 {
            return Err(Error::InvalidParameter("points and n_stocks must be >= 1".into()));
        }
        if !(self.min_abs_output > self.h && self.min_abs_output < 0.5) {
            return Err(Error::InvalidParameter(format!(
                "min_abs_output must lie in (h, 0.5), got {}",
                self.min_abs_output
            )));
        }
        for (name, v) in [
            ("h", self.h),
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("gamma", self.gamma),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// All 32 combinations of variant, smoothing, hold and signal source.
pub fn all_combinations(gamma: f64) -> Vec<LossConfig> {
    let mut out = Vec::with_capacity(32);
    for smooth in [true, false] {
        for variant in LossVariant::ALL {
            for use_hold in [false, true] {
                for source in SignalSource::ALL {
                    out.push(
                        LossConfig::new(variant)
                            .smooth(smooth)
                            .with_hold(use_hold)
                            .with_gamma(gamma)
                            .with_source(source),
                    );
                }
            }
        }
    }
    out
}

/// Typical daily delta scale of each signal source.
pub fn delta_scale(source: SignalSource) -> f64 {
    match source {
        SignalSource::Return => 0.02,
        SignalSource::Price => 2.0,
    }
}

/// Random outputs with `|O_i|` uniform in `[min_abs, 0.95]` and random sign.
pub fn sample_outputs<R: Rng>(rng: &mut R, n_stocks: usize, use_hold: bool, min_abs: f64) -> OutputVector {
    let mut draw = || {
        let m = rng.random_range(min_abs..=0.95);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    };
    let stocks: Vec<f64> = (0..n_stocks).map(|_| draw()).collect();
    let hold = use_hold.then(&mut draw);
    OutputVector::new(stocks, hold).expect("sampled outputs lie inside (-1, 1)")
}

pub fn sample_delta<R: Rng>(rng: &mut R, n_stocks: usize, source: SignalSource) -> SignalDelta {
    let normal = Normal::new(0.0, delta_scale(source)).expect("positive scale");
    SignalDelta::new((0..n_stocks).map(|_| rng.sample(normal)).collect()).expect("finite deltas")
}

/// Whether a point is far enough from the guarded denominators for central
/// differences to be meaningful. Near `max Δ = 0` or `Σ m Δ = 0` the loss
/// has a pole and any fixed step loses accuracy.
pub fn well_conditioned(outputs: &OutputVector, delta: &SignalDelta, cfg: &LossConfig) -> bool {
    let scale = delta_scale(cfg.signal_source);
    let max = delta.deltas().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    match cfg.variant {
        LossVariant::StockLoss => true,
        LossVariant::StockLossMax | LossVariant::StockLossL2 => max.abs() >= 0.1 * scale,
        LossVariant::StockLossNorm => {
            let q: f64 = outputs
                .stock_outputs()
                .iter()
                .zip(delta.deltas())
                .map(|(o, d)| o.abs() * d)
                .sum();
            q.abs() >= 0.1 * scale
        }
    }
}

/// `|a - f|` scaled so that values <= `rel_tol` pass: relative error where
/// the entries are large, absolute error over `abs_tol / rel_tol` near zero.
pub fn scaled_error(analytic: f64, numeric: f64, rel_tol: f64, abs_tol: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(abs_tol / rel_tol);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComboReport {
    pub config: LossConfig,
    pub points: usize,
    /// Draws rejected by [`well_conditioned`] before `points` were found.
    pub resampled: usize,
    pub max_error: f64,
    pub failures: usize,
}

impl ComboReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

pub fn check_combination(cfg: &LossConfig, gc: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<ComboReport> {
    let mut report = ComboReport {
        config: *cfg,
        points: 0,
        resampled: 0,
        max_error: 0.0,
        failures: 0,
    };
    while report.points < gc.points {
        let outputs = sample_outputs(rng, gc.n_stocks, cfg.use_hold, gc.min_abs_output);
        let delta = sample_delta(rng, gc.n_stocks, cfg.signal_source);
        if !well_conditioned(&outputs, &delta, cfg) {
            report.resampled += 1;
            continue;
        }
        let analytic = evaluate(&outputs, &delta, cfg)?.gradient;
        let numeric = loss_gradient_fd(evaluate, &outputs, &delta, cfg, gc.h)?;
        let mut bad = false;
        for (a, f) in analytic.iter().zip(&numeric) {
            let e = scaled_error(*a, *f, gc.rel_tol, gc.abs_tol);
            report.max_error = report.max_error.max(e);
            bad |= e.is_nan() || e > gc.rel_tol;
        }
        report.failures += usize::from(bad);
        report.points += 1;
    }
    Ok(report)
}

/// One non-smooth StockLoss instance with `O_1 = ±offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct WitnessCase {
    pub offset: f64,
    pub delta_1: f64,
    /// `Σ|O_j|` at the probe points.
    pub total: f64,
    pub grad_plus: f64,
    pub grad_minus: f64,
    /// `grad_plus - grad_minus`, from finite differences on each side.
    pub measured_jump: f64,
    /// `2 Σ_{j≠1} O_j Δ_j / (Σ|O_j|)^2`.
    pub analytic_jump: f64,
}

impl WitnessCase {
    pub fn relative_error(&self) -> f64 {
        (self.measured_jump - self.analytic_jump).abs() / self.analytic_jump.abs().max(f64::MIN_POSITIVE)
    }
}

/// Measures the gradient jump of non-smooth StockLoss (hold off) at
/// `O_1 = ±offset`. The other outputs and all deltas are taken from the
/// arguments; `others` excludes stock 1.
pub fn discontinuity_witness(others: &[f64], deltas: &[f64], offset: f64, source: SignalSource) -> Result<WitnessCase> {
    if deltas.len() != others.len() + 1 {
        return Err(Error::LengthMismatch {
            what: "witness deltas",
            expected: others.len() + 1,
            actual: deltas.len(),
        });
    }
    let cfg = LossConfig::new(LossVariant::StockLoss).smooth(false).with_source(source);
    let delta = SignalDelta::new(deltas.to_vec())?;
    // Central differences with a step well inside each side of the kink.
    let h = offset / 100.0;
    let side = |o1: f64| -> Result<f64> {
        let mut stocks = vec![o1];
        stocks.extend_from_slice(others);
        let outputs = OutputVector::new(stocks, None)?;
        Ok(loss_gradient_fd(evaluate, &outputs, &delta, &cfg, h)?[0])
    };
    let grad_plus = side(offset)?;
    let grad_minus = side(-offset)?;
    let total = offset + others.iter().map(|o| o.abs()).sum::<f64>();
    let cross: f64 = others.iter().zip(&deltas[1..]).map(|(o, d)| o * d).sum();
    Ok(WitnessCase {
        offset,
        delta_1: deltas[0],
        total,
        grad_plus,
        grad_minus,
        measured_jump: grad_plus - grad_minus,
        analytic_jump: 2.0 * cross / (total * total),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingReport {
    pub gamma: f64,
    /// Max `|L_smooth - L_nonsmooth| / Σ|Δ|` over points with `|O_i| >= 0.85`.
    pub max_error_confident: f64,
    /// The same over points with `|O_i| >= min_abs_output`.
    pub max_error_general: f64,
}

/// Bound on the smoothing error at confident outputs (`|O_i| >= 0.85`),
/// checked only for `gamma >= 10`.
pub const SMOOTHING_BOUND: f64 = 1e-6;

impl SmoothingReport {
    pub fn passed(&self) -> bool {
        self.gamma < DEFAULT_GAMMA || self.max_error_confident < SMOOTHING_BOUND
    }
}

pub fn smoothing_error(gc: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<SmoothingReport> {
    let smooth = LossConfig::new(LossVariant::StockLoss).with_gamma(gc.gamma);
    let rough = smooth.smooth(false);
    let mut worst = [0.0f64; 2];
    for (slot, min_abs) in [(0, 0.85), (1, gc.min_abs_output)] {
        for _ in 0..gc.points {
            let o = sample_outputs(rng, gc.n_stocks, false, min_abs);
            let d = sample_delta(rng, gc.n_stocks, SignalSource::Return);
            let diff = (evaluate(&o, &d, &smooth)?.value - evaluate(&o, &d, &rough)?.value).abs();
            let scale: f64 = d.deltas().iter().map(|x| x.abs()).sum();
            worst[slot] = worst[slot].max(diff / scale);
        }
    }
    Ok(SmoothingReport {
        gamma: gc.gamma,
        max_error_confident: worst[0],
        max_error_general: worst[1],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearityReport {
    pub n_stocks: usize,
    pub sweep: Vec<(f64, f64)>,
    pub slope: f64,
    pub r_squared: f64,
}

/// Sweeps one output of non-smooth StockLoss over `[0.1, 0.9]` while the
/// other `n - 1` stay fixed at random values in `(0.3, 0.9)`. Stock 0 gets
/// a positive delta above the others' typical size.
pub fn linearity_sweep(n_stocks: usize, steps: usize, rng: &mut ChaCha8Rng) -> Result<LinearityReport> {
    if n_stocks < 2 || steps < 2 {
        return Err(Error::InvalidParameter("linearity sweep needs >= 2 stocks and >= 2 steps".into()));
    }
    let cfg = LossConfig::new(LossVariant::StockLoss).smooth(false);
    let normal = Normal::new(0.0, 0.02).expect("positive scale");
    let mut deltas: Vec<f64> = (0..n_stocks).map(|_| rng.sample(normal)).collect();
    deltas[0] = 0.04;
    let delta = SignalDelta::new(deltas)?;
    let mut stocks: Vec<f64> = (0..n_stocks).map(|_| rng.random_range(0.3..0.9)).collect();
    let mut sweep = Vec::with_capacity(steps);
    for s in 0..steps {
        let x = 0.1 + 0.8 * s as f64 / (steps - 1) as f64;
        stocks[0] = x;
        let value = evaluate(&OutputVector::new(stocks.clone(), None)?, &delta, &cfg)?.value;
        sweep.push((x, value));
    }
    let (slope, r_squared) = linear_fit(&sweep);
    Ok(LinearityReport {
        n_stocks,
        sweep,
        slope,
        r_squared,
    })
}

/// Least-squares slope and coefficient of determination.
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    let syy: f64 = points.iter().map(|(_, y)| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, r2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub config: GradcheckConfig,
    pub combos: Vec<ComboReport>,
    pub smoothing: SmoothingReport,
    pub linearity: LinearityReport,
    pub witness: Vec<WitnessCase>,
}

/// Relative tolerance on the measured witness jump.
pub const WITNESS_TOL: f64 = 0.01;

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.combos.iter().all(ComboReport::passed)
            && self.smoothing.passed()
            && self.linearity.r_squared > 0.98
            && self.witness.iter().all(|w| w.relative_error() < WITNESS_TOL)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let gc = &self.config;
        let _ = writeln!(
            s,
            "gradient check: {} points per combination, {} stocks, h = {:e}, tolerance {:e} (abs {:e})",
            gc.points, gc.n_stocks, gc.h, gc.rel_tol, gc.abs_tol
        );
        let _ = writeln!(s, "{:<36} {:>12} {:>9} {:>6}", "combination", "max_rel_err", "resampled", "status");
        for c in &self.combos {
            let _ = writeln!(
                s,
                "{:<36} {:>12.3e} {:>9} {:>6}",
                c.config.label(),
                c.max_error,
                c.resampled,
                if c.passed() { "ok" } else { "FAIL" }
            );
        }
        let sm = &self.smoothing;
        let _ = writeln!(
            s,
            "smoothing error (gamma = {}): max |smooth - nonsmooth| / sum|delta| = {:.3e} at |O| >= 0.85, {:.3e} at |O| >= {} [{}]",
            sm.gamma,
            sm.max_error_confident,
            sm.max_error_general,
            gc.min_abs_output,
            if sm.passed() { "ok" } else { "FAIL" }
        );
        let lin = &self.linearity;
        let _ = writeln!(
            s,
            "linearity (N = {}): slope = {:.6}, R^2 = {:.6} [{}]",
            lin.n_stocks,
            lin.slope,
            lin.r_squared,
            if lin.r_squared > 0.98 { "ok" } else { "FAIL" }
        );
        for w in &self.witness {
            let _ = writeln!(
                s,
                "jump at O1 = ±{:e}: delta1 = {:+.5}, grad+ = {:+.6e}, grad- = {:+.6e}, jump = {:+.6e}, analytic = {:+.6e}, rel err = {:.2e} [{}]",
                w.offset,
                w.delta_1,
                w.grad_plus,
                w.grad_minus,
                w.measured_jump,
                w.analytic_jump,
                w.relative_error(),
                if w.relative_error() < WITNESS_TOL { "ok" } else { "FAIL" }
            );
        }
        let failed = self.combos.iter().filter(|c| !c.passed()).count();
        let _ = writeln!(
            s,
            "result: {} ({} of {} combinations failed)",
            if self.passed() { "PASS" } else { "FAIL" },
            failed,
            self.combos.len()
        );
        s
    }
}

pub fn run(gc: &GradcheckConfig) -> Result<GradcheckReport> {
    gc.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(gc.seed);
    let combos = all_combinations(gc.gamma)
        .iter()
        .map(|cfg| check_combination(cfg, gc, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let smoothing = smoothing_error(gc, &mut rng)?;
    let linearity = linearity_sweep(50, 50, &mut rng)?;
    let mut witness = Vec::new();
    if gc.include_nonsmooth_at_zero {
        for _ in 0..5 {
            let n = gc.n_stocks.max(2);
            let others: Vec<f64> = (1..n).map(|_| rng.random_range(-0.9..0.9)).collect();
            let d = sample_delta(&mut rng, n, SignalSource::Return);
            let case = discontinuity_witness(&others, d.deltas(), 1e-4, SignalSource::Return)?;
            if case.analytic_jump.abs() > 1e-9 {
                witness.push(case);
            }
        }
    }
    Ok(GradcheckReport {
        config: *gc,
        combos,
        smoothing,
        linearity,
        witness,
    })
}
