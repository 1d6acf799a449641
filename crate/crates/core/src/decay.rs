//! Decay of the Weiss energy gap from an epiperimetric gain `(eps, gamma)`.
//!
//! Everything is integrated in the logarithmic scale `L = -ln(rho / r0)`, so
//! the doubly-dyadic radii `r0 2^{-2^k}` never underflow. The state variable
//! is `ln W`, where `W = W(u_rho) - W(b)`.

use crate::error::{Error, Result};
use crate::geometry::Dim;
use crate::ode::{self, Tolerance};
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;

/// Geometric levels `r0 2^{-k}`, `k = 0..=GEOMETRIC_LEVELS`.
pub const GEOMETRIC_LEVELS: u32 = 64;
/// Doubly-dyadic levels `r0 2^{-2^k}`, `k = 0..=DYADIC_LEVELS`.
pub const DYADIC_LEVELS: u32 = 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayInput {
    pub eps: f64,
    pub gamma: f64,
    pub d: Dim,
    pub w_start: f64,
    pub r0: f64,
}

impl DecayInput {
    pub fn new(eps: f64, gamma: f64, d: Dim, w_start: f64, r0: f64) -> Result<DecayInput> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Domain(format!("eps must lie in (0, 1), got {eps}")));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Domain(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        if !(w_start > 0.0 && w_start.is_finite()) {
            return Err(Error::Domain(format!("w_start must be positive and finite, got {w_start}")));
        }
        if !(r0 > 0.0 && r0.is_finite()) {
            return Err(Error::Domain(format!("r0 must be positive, got {r0}")));
        }
        Ok(DecayInput { eps, gamma, d, w_start, r0 })
    }

    /// Rate `d eps`, divided by `1 - eps` on the `gamma = 0` branch.
    fn rate(&self) -> f64 {
        let base = self.d.f() * self.eps;
        if self.gamma == 0.0 {
            base / (1.0 - self.eps)
        } else {
            base
        }
    }

    /// Power-law exponent of the `gamma = 0` branch.
    pub fn holder_exponent(&self) -> f64 {
        self.d.f() * self.eps / (1.0 - self.eps)
    }

    /// Closed-form bound at `L = -ln(rho / r0)`.
    pub fn closed_form(&self, log_ratio: f64) -> f64 {
        if self.gamma == 0.0 {
            self.w_start * (-self.holder_exponent() * log_ratio).exp()
        } else {
            (self.eps * self.gamma * self.d.f() * log_ratio).powf(-1.0 / self.gamma)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub input: DecayInput,
    /// `L = -ln(rho / r0)`, increasing.
    pub log_ratios: Vec<f64>,
    /// `r0 e^{-L}`; underflows to zero on the deepest dyadic levels.
    pub radii: Vec<f64>,
    pub w_values: Vec<f64>,
    pub closed_form: Vec<f64>,
    /// Cumulative bound on `||u_rho - u_{r0}||_{L^2}` along the grid.
    pub l2_drift: Vec<f64>,
}

fn grid() -> Vec<f64> {
    let mut levels: Vec<f64> = (0..=GEOMETRIC_LEVELS).map(|k| k as f64 * LN_2).collect();
    levels.extend((0..=DYADIC_LEVELS).map(|k| 2f64.powi(k as i32) * LN_2));
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    levels
}

/// Integrates `dW/dL = -rate W^{1 + gamma}` from `W(0) = w_start`.
pub fn integrate_decay(input: &DecayInput) -> Result<DecayCurve> {
    let rate = input.rate();
    let gamma = input.gamma;
    let rhs = move |_: f64, y: &[f64]| vec![-rate * (gamma * y[0]).exp()];
    let tol = Tolerance { rtol: 1e-12, atol: 1e-12 };
    let log_ratios = grid();
    let mut state = input.w_start.ln();
    let mut prev = 0.0;
    let mut w_values = Vec::with_capacity(log_ratios.len());
    for &l in &log_ratios {
        if l > prev {
            state = ode::solve(rhs, prev, &[state], l, tol)?[0];
            prev = l;
        }
        w_values.push(state.exp());
    }
    let l2_drift = w_values
        .iter()
        .zip(&log_ratios)
        .scan((0.0, 0.0), |(total, last_l), (w, &l)| {
            *total += ((l - *last_l) * w).sqrt();
            *last_l = l;
            Some(*total)
        })
        .collect();
    Ok(DecayCurve {
        input: *input,
        radii: log_ratios.iter().map(|l| input.r0 * (-l).exp()).collect(),
        closed_form: log_ratios.iter().map(|&l| input.closed_form(l)).collect(),
        log_ratios,
        w_values,
        l2_drift,
    })
}

impl DecayCurve {
    /// Energy gap at `L`, read off the grid.
    pub fn at(&self, log_ratio: f64) -> Option<f64> {
        self.log_ratios
            .iter()
            .position(|&l| (l - log_ratio).abs() <= 1e-12 * log_ratio.max(1.0))
            .map(|k| self.w_values[k])
    }

    /// Largest `(W - closed form) / closed form` over the grid, `L > 0`.
    pub fn excess_over_closed_form(&self) -> f64 {
        self.w_values
            .iter()
            .zip(&self.closed_form)
            .zip(&self.log_ratios)
            .filter(|(_, &l)| l > 0.0)
            .map(|((w, c), _)| (w - c) / c)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Least-squares slope of `ln W` against `L` over the geometric levels.
    pub fn fitted_power(&self) -> f64 {
        let points: Vec<(f64, f64)> = self
            .log_ratios
            .iter()
            .zip(&self.w_values)
            .filter(|(&l, _)| l <= GEOMETRIC_LEVELS as f64 * LN_2 + 1e-9)
            .map(|(&l, &w)| (l, -w.ln()))
            .collect();
        fit_line(&points).0
    }
}

/// Slope and intercept of the least-squares line through `points`.
pub fn fit_line(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (sxy, sxx) =
        points.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx) * (x - mx)));
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModulusBranch {
    Logarithmic,
    Holder,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulusSample {
    /// `-ln(t / r0)`.
    pub neg_log_t: f64,
    pub modulus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusReport {
    pub branch: ModulusBranch,
    pub samples: Vec<ModulusSample>,
    /// Fitted exponent of the modulus in `-ln t` (logarithmic branch) or in
    /// `t` (Holder branch).
    pub fitted_exponent: f64,
    pub predicted_exponent: f64,
    /// Smallest `C` with `modulus <= C (-ln t)^{predicted}` (or `C t^{predicted}`).
    pub fitted_constant: f64,
}

/// Tail sum `sum_{k >= i} 2^k e(r0 2^{-2^k})` at each doubly-dyadic level.
fn dyadic_tails(e: &[f64]) -> Vec<ModulusSample> {
    let mut tail = 0.0;
    let mut samples: Vec<ModulusSample> = e
        .iter()
        .enumerate()
        .rev()
        .map(|(k, ek)| {
            tail += 2f64.powi(k as i32) * ek;
            ModulusSample { neg_log_t: 2f64.powi(k as i32) * LN_2, modulus: tail }
        })
        .collect();
    samples.reverse();
    samples
}

fn dyadic_values(curve: &DecayCurve) -> Result<Vec<f64>> {
    (0..=DYADIC_LEVELS)
        .map(|k| {
            curve.at(2f64.powi(k as i32) * LN_2).ok_or_else(|| Error::Domain(format!("curve lacks dyadic level {k}")))
        })
        .collect()
}

/// Modulus of continuity of the traces from the doubly-dyadic sum.
///
/// `gamma = 0` switches to the geometric (Holder) summation.
pub fn dyadic_l2_modulus(curve: &DecayCurve, gamma: f64) -> Result<ModulusReport> {
    if gamma == 0.0 {
        return holder_modulus(curve);
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Domain(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    let samples = dyadic_tails(&dyadic_values(curve)?);
    Ok(log_report(samples, gamma))
}

/// The same summation for an explicit energy profile `e(L)`.
pub fn dyadic_l2_modulus_fn<F: Fn(f64) -> f64>(e: F, gamma: f64) -> Result<ModulusReport> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Domain(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    let values: Vec<f64> = (0..=DYADIC_LEVELS).map(|k| e(2f64.powi(k as i32) * LN_2)).collect();
    Ok(log_report(dyadic_tails(&values), gamma))
}

/// Modulus at a single scale `t`: the sum over the dyadic blocks below `t`.
pub fn modulus_at(curve: &DecayCurve, t: f64) -> Result<f64> {
    let ratio = t / curve.input.r0;
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Domain(format!("t must lie in (0, r0], got {t}")));
    }
    let neg_log = -ratio.ln();
    if neg_log < LN_2 {
        return Ok(0.0);
    }
    let first = (neg_log / LN_2).log2().floor().max(0.0) as u32;
    let e = dyadic_values(curve)?;
    Ok(e.iter().enumerate().skip(first as usize).map(|(k, ek)| 2f64.powi(k as i32) * ek).sum())
}

/// Samples used in the exponent fit: drop the shallowest level and the
/// deepest ones, where the truncated tail is no longer geometric.
fn fit_window(samples: &[ModulusSample]) -> &[ModulusSample] {
    let end = samples.len().saturating_sub(10).max(3);
    &samples[1.min(end)..end]
}

fn log_report(samples: Vec<ModulusSample>, gamma: f64) -> ModulusReport {
    let predicted = (gamma - 1.0) / gamma;
    let points: Vec<(f64, f64)> = fit_window(&samples).iter().map(|s| (s.neg_log_t.ln(), s.modulus.ln())).collect();
    let fitted = fit_line(&points).0;
    let constant = samples.iter().map(|s| s.modulus / s.neg_log_t.powf(predicted)).fold(0.0, f64::max);
    ModulusReport {
        branch: ModulusBranch::Logarithmic,
        samples,
        fitted_exponent: fitted,
        predicted_exponent: predicted,
        fitted_constant: constant,
    }
}

/// Geometric summation `sum_{j >= k} sqrt(ln 2 W(r0 2^{-j}))` of the trace
/// increments; a power of `t` with exponent half the energy decay rate.
pub fn holder_modulus(curve: &DecayCurve) -> Result<ModulusReport> {
    let levels: Vec<f64> = (0..=GEOMETRIC_LEVELS)
        .map(|k| curve.at(k as f64 * LN_2).ok_or_else(|| Error::Domain(format!("curve lacks level {k}"))))
        .collect::<Result<_>>()?;
    let mut tail = 0.0;
    let mut samples: Vec<ModulusSample> = levels
        .iter()
        .enumerate()
        .rev()
        .map(|(k, w)| {
            tail += (LN_2 * w).sqrt();
            ModulusSample { neg_log_t: k as f64 * LN_2, modulus: tail }
        })
        .collect();
    samples.reverse();
    let predicted = 0.5 * curve.input.holder_exponent();
    let cut = samples.len() / 2;
    let points: Vec<(f64, f64)> = samples[1..cut].iter().map(|s| (-s.neg_log_t, s.modulus.ln())).collect();
    let fitted = fit_line(&points).0;
    let constant = samples.iter().map(|s| s.modulus / (-predicted * s.neg_log_t).exp()).fold(0.0, f64::max);
    Ok(ModulusReport {
        branch: ModulusBranch::Holder,
        samples,
        fitted_exponent: fitted,
        predicted_exponent: predicted,
        fitted_constant: constant,
    })
}
