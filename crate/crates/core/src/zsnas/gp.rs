//! Bayesian optimization with a Gaussian-process surrogate, the upper
//! confidence bound acquisition and sequential domain reduction.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EarError, Result};
use crate::rng::{self, EarRng};

/// Shared lengthscale candidates, in units of each dimension's original span.
const LENGTHSCALE_GRID: [f64; 5] = [0.05, 0.1, 0.2, 0.4, 0.8];
const MAX_JITTER: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpUcbConfig {
    pub budget: usize,
    pub warmup: usize,
    pub kappa: f64,
    /// Per-iteration contraction of the search window.
    pub shrink: f64,
    /// The window never gets narrower than this fraction of the original span.
    pub min_span_fraction: f64,
    pub jitter: f64,
    /// Random acquisition starts per iteration.
    pub acquisition_samples: usize,
}

impl Default for GpUcbConfig {
    fn default() -> Self {
        Self {
            budget: 50,
            warmup: 10,
            kappa: 2.5,
            shrink: 0.9,
            min_span_fraction: 0.05,
            jitter: 1e-6,
            acquisition_samples: 512,
        }
    }
}

impl GpUcbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup == 0 || self.budget < self.warmup {
            return Err(EarError::Config(format!(
                "budget {} must be at least warmup {} (> 0)",
                self.budget, self.warmup
            )));
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(EarError::Config("kappa must be non-negative".into()));
        }
        if !(self.shrink > 0.0 && self.shrink <= 1.0) {
            return Err(EarError::Config("shrink must be in (0, 1]".into()));
        }
        if !(self.min_span_fraction > 0.0 && self.min_span_fraction <= 1.0) {
            return Err(EarError::Config("min_span_fraction must be in (0, 1]".into()));
        }
        if !(self.jitter > 0.0 && self.jitter.is_finite()) || self.acquisition_samples == 0 {
            return Err(EarError::Config("jitter and acquisition_samples must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub iteration: usize,
    pub x: Vec<f64>,
    /// `None` when the objective returned a non-finite value.
    pub value: Option<f64>,
    /// Window the proposal was drawn from.
    pub bounds: Vec<(f64, f64)>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_x: Vec<f64>,
    pub best_value: f64,
    pub trace: Vec<Evaluation>,
}

struct Surrogate {
    x: Vec<Vec<f64>>,
    lengthscale: f64,
    chol: Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
    y_mean: f64,
    y_std: f64,
}

fn kernel(a: &[f64], b: &[f64], ls: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-0.5 * d2 / (ls * ls)).exp()
}

impl Surrogate {
    /// `x` in unit coordinates of the original bounds.
    fn fit(x: &[Vec<f64>], y: &[f64], jitter: f64) -> Result<Self> {
        let n = y.len();
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64;
        let y_std = if var > 0.0 { var.sqrt() } else { 1.0 };
        let ys = DVector::from_iterator(n, y.iter().map(|v| (v - y_mean) / y_std));

        let mut best: Option<(f64, Self)> = None;
        for &ls in &LENGTHSCALE_GRID {
            let mut j = jitter;
            let chol = loop {
                let k = DMatrix::from_fn(n, n, |a, b| {
                    kernel(&x[a], &x[b], ls) + if a == b { j } else { 0.0 }
                });
                if let Some(c) = Cholesky::new(k) {
                    break Some(c);
                }
                j *= 10.0;
                if j > MAX_JITTER {
                    break None;
                }
            };
            let Some(chol) = chol else { continue };
            let alpha = chol.solve(&ys);
            let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
            let lml = -0.5 * ys.dot(&alpha) - log_det;
            if lml.is_finite() && best.as_ref().is_none_or(|(b, _)| lml > *b) {
                best = Some((
                    lml,
                    Self {
                        x: x.to_vec(),
                        lengthscale: ls,
                        chol,
                        alpha,
                        y_mean,
                        y_std,
                    },
                ));
            }
        }
        best.map(|(_, s)| s)
            .ok_or_else(|| EarError::Numeric("GP covariance is not positive definite".into()))
    }

    fn predict(&self, u: &[f64]) -> (f64, f64) {
        let ks = DVector::from_iterator(
            self.x.len(),
            self.x.iter().map(|xi| kernel(xi, u, self.lengthscale)),
        );
        let mean = ks.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&ks)
            .unwrap_or_else(|| DVector::zeros(self.x.len()));
        let var = (1.0 - v.dot(&v)).max(0.0);
        (self.y_mean + self.y_std * mean, self.y_std * var.sqrt())
    }

    fn ucb(&self, u: &[f64], kappa: f64) -> f64 {
        let (m, s) = self.predict(u);
        m + kappa * s
    }
}

fn uniform(bounds: &[(f64, f64)], r: &mut EarRng) -> Vec<f64> {
    bounds
        .iter()
        .map(|&(lo, hi)| if hi > lo { r.random_range(lo..=hi) } else { lo })
        .collect()
}

fn to_unit(x: &[f64], orig: &[(f64, f64)]) -> Vec<f64> {
    x.iter()
        .zip(orig)
        .map(|(v, (lo, hi))| (v - lo) / (hi - lo))
        .collect()
}

/// Random multistart followed by a coordinate pattern search from the best
/// few starts, all confined to `window`.
fn maximize_acquisition(
    gp: &Surrogate,
    window: &[(f64, f64)],
    orig: &[(f64, f64)],
    cfg: &GpUcbConfig,
    r: &mut EarRng,
) -> Vec<f64> {
    let score = |x: &[f64]| gp.ucb(&to_unit(x, orig), cfg.kappa);
    let mut starts: Vec<(f64, Vec<f64>)> = (0..cfg.acquisition_samples)
        .map(|_| {
            let x = uniform(window, r);
            (score(&x), x)
        })
        .collect();
    starts.sort_by(|a, b| b.0.total_cmp(&a.0));
    starts.truncate(5);

    let mut best = starts[0].clone();
    for (mut val, mut x) in starts {
        let mut step: Vec<f64> = window.iter().map(|(lo, hi)| 0.1 * (hi - lo)).collect();
        for _ in 0..30 {
            let mut improved = false;
            for d in 0..x.len() {
                for dir in [-1.0, 1.0] {
                    let mut y = x.clone();
                    y[d] = (y[d] + dir * step[d]).clamp(window[d].0, window[d].1);
                    let v = score(&y);
                    if v > val {
                        val = v;
                        x = y;
                        improved = true;
                    }
                }
            }
            if !improved {
                step.iter_mut().for_each(|s| *s *= 0.5);
            }
        }
        if val > best.0 {
            best = (val, x);
        }
    }
    best.1
}

/// Window of width `max(shrink * width, min_fraction * span)` centered on
/// the incumbent, shifted to stay inside the original bounds.
fn contract(
    window: &[(f64, f64)],
    orig: &[(f64, f64)],
    center: &[f64],
    cfg: &GpUcbConfig,
) -> Vec<(f64, f64)> {
    window
        .iter()
        .zip(orig)
        .zip(center)
        .map(|((&(lo, hi), &(olo, ohi)), &c)| {
            let width = (cfg.shrink * (hi - lo)).max(cfg.min_span_fraction * (ohi - olo));
            let mut nlo = c - width / 2.0;
            let mut nhi = c + width / 2.0;
            if nlo < olo {
                nlo = olo;
                nhi = (olo + width).min(ohi);
            }
            if nhi > ohi {
                nhi = ohi;
                nlo = (ohi - width).max(olo);
            }
            (nlo, nhi)
        })
        .collect()
}

/// Maximizes `objective` over the box `bounds` with `cfg.budget`
/// evaluations, the first `cfg.warmup` of them uniform at random.
/// Non-finite values are recorded in the trace and otherwise ignored.
pub fn gp_ucb_search<F>(
    mut objective: F,
    bounds: &[(f64, f64)],
    cfg: &GpUcbConfig,
    seed: u64,
) -> Result<SearchResult>
where
    F: FnMut(&[f64]) -> f64,
{
    cfg.validate()?;
    if bounds.is_empty() {
        return Err(EarError::Argument("search space has no dimensions".into()));
    }
    if bounds.iter().any(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
        return Err(EarError::Argument(format!("invalid bounds {bounds:?}")));
    }
    let mut r = rng::seeded(seed);
    let mut window = bounds.to_vec();
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut units: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut trace = Vec::with_capacity(cfg.budget);

    for iteration in 0..cfg.budget {
        let x = if iteration < cfg.warmup || ys.is_empty() {
            uniform(bounds, &mut r)
        } else {
            let gp = Surrogate::fit(&units, &ys, cfg.jitter)?;
            maximize_acquisition(&gp, &window, bounds, cfg, &mut r)
        };
        let proposal_window = if iteration < cfg.warmup {
            bounds.to_vec()
        } else {
            window.clone()
        };
        let start = Instant::now();
        let v = objective(&x);
        let seconds = start.elapsed().as_secs_f64();
        let value = if v.is_finite() {
            units.push(to_unit(&x, bounds));
            xs.push(x.clone());
            ys.push(v);
            Some(v)
        } else {
            log::warn!("iteration {iteration}: objective returned {v}, candidate discarded");
            None
        };
        trace.push(Evaluation {
            iteration,
            x,
            value,
            bounds: proposal_window,
            seconds,
        });
        if iteration >= cfg.warmup && !ys.is_empty() {
            let best = argmax(&ys);
            window = contract(&window, bounds, &xs[best], cfg);
        }
    }

    if ys.is_empty() {
        return Err(EarError::Numeric("objective was never finite".into()));
    }
    let best = argmax(&ys);
    Ok(SearchResult {
        best_x: xs[best].clone(),
        best_value: ys[best],
        trace,
    })
}

/// First index of the maximum.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
