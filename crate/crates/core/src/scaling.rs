//! Power-law fits of benchmark loss against the agent-data mixing ratio,
//! weighted aggregation across benchmarks, and compute-budget arithmetic.
//!
//! Each benchmark is modelled as `L(x) = c + k * x^alpha`. For a fixed
//! `alpha` the model is linear in `(c, k)`, so the fit profiles out `(c, k)`
//! by ordinary least squares and searches only over `alpha`: a coarse grid
//! on `[-2, 2]` (with a small gap around 0, where `x^alpha` collapses into
//! `c`), then golden-section refinement around the best grid point.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusError;
use crate::par::*;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Error)]
pub enum ScalingError {
    #[error("need at least {needed} observations with {distinct} distinct positive x, got {got} ({got_distinct} distinct)")]
    TooFewObservations { needed: usize, distinct: usize, got: usize, got_distinct: usize },
    #[error("all observations share x = {0}; alpha is unidentifiable")]
    ConstantX(f64),
    #[error("observations mix benchmarks `{0}` and `{1}`")]
    MixedBenchmarks(String, String),
    #[error("no observations for benchmark `{0}`")]
    UnknownBenchmark(String),
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("x = {x} is outside the domain of curve `{benchmark}` (alpha = {alpha})")]
    Domain { x: f64, alpha: f64, benchmark: String },
    #[error("invalid optimisation input: {0}")]
    InvalidInput(String),
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
    #[error("{}:{line}: {message}", path.display())]
    AtLine { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixObservation {
    /// Agent-data fraction of total training tokens.
    pub x: f64,
    pub loss: f64,
    pub benchmark: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_params: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<u64>,
}

impl MixObservation {
    pub fn new(benchmark: impl Into<String>, x: f64, loss: f64) -> Self {
        MixObservation { x, loss, benchmark: benchmark.into(), model_params: None, tokens: None }
    }

    fn validate(&self) -> Result<(), ScalingError> {
        if !(0.0..=1.0).contains(&self.x) {
            return Err(ScalingError::InvalidObservation(format!("x = {} is outside [0, 1]", self.x)));
        }
        if !(self.loss.is_finite() && self.loss > 0.0) {
            return Err(ScalingError::InvalidObservation(format!("loss = {} is not positive", self.loss)));
        }
        Ok(())
    }
}

/// Fitted `L = c + k * x^alpha`; serialized as the fit report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCurve {
    pub benchmark: String,
    pub c: f64,
    pub k: f64,
    pub alpha: f64,
    pub rmse: f64,
    #[serde(default)]
    pub n_obs: usize,
}

impl ScalingCurve {
    pub fn new(benchmark: impl Into<String>, c: f64, k: f64, alpha: f64) -> Self {
        ScalingCurve { benchmark: benchmark.into(), c, k, alpha, rmse: 0.0, n_obs: 0 }
    }

    pub fn predict(&self, x: f64) -> Result<f64, ScalingError> {
        predict_loss(self, x)
    }
}

/// `c + k * x^alpha` for `x` in `[0, 1]`; `x = 0` is only admissible for
/// `alpha > 0`.
pub fn predict_loss(curve: &ScalingCurve, x: f64) -> Result<f64, ScalingError> {
    let out_of_domain = !(0.0..=1.0).contains(&x) || (x == 0.0 && curve.alpha <= 0.0);
    if out_of_domain {
        return Err(ScalingError::Domain { x, alpha: curve.alpha, benchmark: curve.benchmark.clone() });
    }
    Ok(curve.c + curve.k * x.powf(curve.alpha))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Grid points with `|alpha| < alpha_gap` are skipped.
    pub alpha_gap: f64,
    pub grid_step: f64,
    /// Golden-section stops when the bracket is narrower than this.
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { alpha_min: -2.0, alpha_max: 2.0, alpha_gap: 1e-3, grid_step: 0.01, tolerance: 1e-10 }
    }
}

#[derive(Debug, Clone, Copy)]
struct Profile {
    sse: f64,
    c: f64,
    k: f64,
}

/// Least-squares `(c, k)` for a fixed `alpha`. Infeasible exponents (a
/// negative `alpha` with an observation at `x = 0`) score infinite error.
fn profile(xs: &[f64], ys: &[f64], alpha: f64) -> Profile {
    if alpha < 0.0 && xs.contains(&0.0) {
        return Profile { sse: f64::INFINITY, c: f64::NAN, k: f64::NAN };
    }
    let n = xs.len() as f64;
    let fs: Vec<f64> = xs.iter().map(|x| x.powf(alpha)).collect();
    let f_mean = fs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (f, y) in fs.iter().zip(ys) {
        sxx += (f - f_mean) * (f - f_mean);
        sxy += (f - f_mean) * (y - y_mean);
    }
    let (c, k) = if sxx > 0.0 && sxx.is_finite() {
        let k = sxy / sxx;
        (y_mean - k * f_mean, k)
    } else {
        (y_mean, 0.0)
    };
    let sse = fs.iter().zip(ys).map(|(f, y)| (y - c - k * f).powi(2)).sum();
    Profile { sse, c, k }
}

fn golden_min(mut lo: f64, mut hi: f64, tol: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut a = hi - INV_PHI * (hi - lo);
    let mut b = lo + INV_PHI * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    while hi - lo > tol {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - INV_PHI * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + INV_PHI * (hi - lo);
            fb = f(b);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

/// Fit one benchmark's observations with default options.
pub fn fit_power_law(obs: &[MixObservation]) -> Result<ScalingCurve, ScalingError> {
    fit_power_law_with(obs, &FitOptions::default())
}

/// Fit the observations of `benchmark` out of a mixed set.
pub fn fit_benchmark(obs: &[MixObservation], benchmark: &str) -> Result<ScalingCurve, ScalingError> {
    let subset: Vec<MixObservation> = obs.iter().filter(|o| o.benchmark == benchmark).cloned().collect();
    if subset.is_empty() {
        return Err(ScalingError::UnknownBenchmark(benchmark.to_string()));
    }
    fit_power_law(&subset)
}

pub fn fit_power_law_with(obs: &[MixObservation], opts: &FitOptions) -> Result<ScalingCurve, ScalingError> {
    for o in obs {
        o.validate()?;
    }
    if let Some(first) = obs.first() {
        if let Some(other) = obs.iter().find(|o| o.benchmark != first.benchmark) {
            return Err(ScalingError::MixedBenchmarks(first.benchmark.clone(), other.benchmark.clone()));
        }
    }
    let mut distinct: Vec<f64> = obs.iter().map(|o| o.x).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() == 1 && obs.len() >= 4 {
        return Err(ScalingError::ConstantX(distinct[0]));
    }
    let distinct_positive = distinct.iter().filter(|x| **x > 0.0).count();
    if obs.len() < 4 || distinct_positive < 3 {
        return Err(ScalingError::TooFewObservations {
            needed: 4,
            distinct: 3,
            got: obs.len(),
            got_distinct: distinct_positive,
        });
    }

    let xs: Vec<f64> = obs.iter().map(|o| o.x).collect();
    let ys: Vec<f64> = obs.iter().map(|o| o.loss).collect();
    let steps = ((opts.alpha_max - opts.alpha_min) / opts.grid_step).round() as usize;
    let grid: Vec<f64> = (0..=steps)
        .map(|i| opts.alpha_min + i as f64 * opts.grid_step)
        .filter(|a| a.abs() >= opts.alpha_gap)
        .collect();
    let profiles: Vec<Profile> = grid.par_iter().map(|a| profile(&xs, &ys, *a)).collect();

    let mut best = 0;
    for (i, p) in profiles.iter().enumerate() {
        if p.sse < profiles[best].sse {
            best = i;
        }
    }
    let mut alpha = grid[best];
    let mut fit = profiles[best];
    if !fit.sse.is_finite() {
        return Err(ScalingError::InvalidObservation("no feasible exponent for these observations".into()));
    }

    let (mut lo, mut hi) = (alpha - opts.grid_step, alpha + opts.grid_step);
    lo = lo.max(opts.alpha_min);
    hi = hi.min(opts.alpha_max);
    if alpha > 0.0 {
        lo = lo.max(opts.alpha_gap);
    } else {
        hi = hi.min(-opts.alpha_gap);
    }
    if hi > lo {
        let (a, _) = golden_min(lo, hi, opts.tolerance, |a| profile(&xs, &ys, a).sse);
        let refined = profile(&xs, &ys, a);
        if refined.sse < fit.sse {
            alpha = a;
            fit = refined;
        }
    }

    Ok(ScalingCurve {
        benchmark: obs[0].benchmark.clone(),
        c: fit.c,
        k: fit.k,
        alpha,
        rmse: (fit.sse / obs.len() as f64).sqrt(),
        n_obs: obs.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixOptimum {
    pub x: f64,
    pub aggregate_loss: f64,
}

fn aggregate(curves: &[ScalingCurve], weights: &[f64], x: f64) -> Result<f64, ScalingError> {
    let mut total = 0.0;
    for (c, w) in curves.iter().zip(weights) {
        total += w * predict_loss(c, x)?;
    }
    Ok(total)
}

/// Minimise `sum_i w_i * L_i(x)` over `[lo, hi]`: grid search at
/// `grid_step` (ties go to the smallest x), then golden-section refinement
/// between the neighbours of the best grid point.
pub fn optimal_mix_ratio(
    curves: &[ScalingCurve],
    weights: &[f64],
    domain: (f64, f64),
    grid_step: f64,
) -> Result<MixOptimum, ScalingError> {
    let bad = |m: String| Err(ScalingError::InvalidInput(m));
    if curves.is_empty() {
        return bad("no curves".into());
    }
    if weights.len() != curves.len() {
        return bad(format!("{} weights for {} curves", weights.len(), curves.len()));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return bad(format!("weight {w} is not positive"));
    }
    let (lo, hi) = domain;
    if !(lo > 0.0 && lo < hi && hi <= 1.0) {
        return bad(format!("domain [{lo}, {hi}] must satisfy 0 < lo < hi <= 1"));
    }
    if !(grid_step > 0.0 && grid_step <= (hi - lo) / 10.0 + 1e-15) {
        return bad(format!("grid step {grid_step} must lie in (0, (hi - lo) / 10]"));
    }

    let n = ((hi - lo) / grid_step + 1e-9).floor() as usize;
    let mut grid: Vec<f64> = (0..=n).map(|i| lo + i as f64 * grid_step).collect();
    if let Some(last) = grid.last_mut() {
        if *last > hi {
            *last = hi;
        }
    }
    if hi - grid[grid.len() - 1] > 1e-12 {
        grid.push(hi);
    }
    let values: Vec<Result<f64, ScalingError>> = grid.par_iter().map(|x| aggregate(curves, weights, *x)).collect();
    let values: Vec<f64> = values.into_iter().collect::<Result<_, _>>()?;

    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    let mut x = grid[best];
    let mut value = values[best];
    let left = grid[best.saturating_sub(1)];
    let right = grid[(best + 1).min(grid.len() - 1)];
    if right > left {
        let (rx, _) = golden_min(left, right, 1e-12, |x| aggregate(curves, weights, x).unwrap_or(f64::INFINITY));
        let rv = aggregate(curves, weights, rx)?;
        if rv < value {
            x = rx;
            value = rv;
        }
    }
    Ok(MixOptimum { x, aggregate_loss: value })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSpec {
    pub model_params: u64,
    #[serde(default = "default_multiplier")]
    pub token_multiplier: f64,
    #[serde(default = "default_flops_per_param_token")]
    pub flops_per_param_token: f64,
}

fn default_multiplier() -> f64 {
    50.0
}

fn default_flops_per_param_token() -> f64 {
    6.0
}

impl BudgetSpec {
    pub fn new(model_params: u64) -> Self {
        BudgetSpec { model_params, token_multiplier: default_multiplier(), flops_per_param_token: default_flops_per_param_token() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub tokens: u64,
    pub flops: f64,
}

/// Training tokens `D = multiplier * N` and compute `F = 6 * N * D` (with
/// the default cost per parameter-token).
pub fn compute_budget(spec: &BudgetSpec) -> Result<Budget, ScalingError> {
    if spec.model_params == 0 {
        return Err(ScalingError::InvalidBudget("model_params must be positive".into()));
    }
    if !(spec.token_multiplier.is_finite() && spec.token_multiplier > 0.0) {
        return Err(ScalingError::InvalidBudget(format!("token multiplier {} must be positive", spec.token_multiplier)));
    }
    if !(spec.flops_per_param_token.is_finite() && spec.flops_per_param_token > 0.0) {
        return Err(ScalingError::InvalidBudget(format!(
            "flops per parameter-token {} must be positive",
            spec.flops_per_param_token
        )));
    }
    let n = spec.model_params as f64;
    let tokens = (spec.token_multiplier * n).round() as u64;
    Ok(Budget { tokens, flops: spec.flops_per_param_token * n * tokens as f64 })
}

pub fn read_observations(path: &Path) -> Result<Vec<MixObservation>, ScalingError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |message: String| ScalingError::AtLine { path: path.to_path_buf(), line: i + 1, message };
        let o: MixObservation = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        o.validate().map_err(|e| at(e.to_string()))?;
        out.push(o);
    }
    Ok(out)
}

pub fn read_curve(path: &Path) -> Result<ScalingCurve, ScalingError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| ScalingError::AtLine { path: path.to_path_buf(), line: 1, message: e.to_string() })
}
