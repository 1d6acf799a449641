//! Ferrers (on-the-cut) associated Legendre functions `P^mu_nu`, `Q^mu_nu`.
//!
//! Both are written as `(1 - t^2)^{mu/2} v(t)` where the reduced function `v`
//! solves
//!
//! `(1 - t^2) v'' - 2 (mu + 1) t v' + (nu - mu)(nu + mu + 1) v = 0`.
//!
//! The reduced equation is integrated from `t = 0`, where the values and
//! slopes are known in closed form, so no recurrence in the degree is needed.

use crate::error::{Error, Result};
use crate::geometry::Dim;
use crate::ode::{self, Tolerance};
use statrs::function::gamma::gamma;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    First,
    Second,
}

fn recip_gamma(x: f64) -> f64 {
    if x <= 0.0 && x == x.round() {
        0.0
    } else {
        1.0 / gamma(x)
    }
}

/// `(v(0), v'(0))` for the reduced function.
fn origin_data(kind: Kind, nu: f64, mu: f64) -> (f64, f64) {
    let sp = PI.sqrt();
    let two_mu = 2f64.powf(mu);
    match kind {
        Kind::First => (
            two_mu * sp * recip_gamma(0.5 * (nu - mu) + 1.0) * recip_gamma(0.5 * (1.0 - nu - mu)),
            -2.0 * two_mu * sp * recip_gamma(0.5 * (nu - mu + 1.0)) * recip_gamma(-0.5 * (nu + mu)),
        ),
        Kind::Second => (
            -0.5 * two_mu
                * sp
                * (0.5 * (nu + mu) * PI).sin()
                * gamma(0.5 * (nu + mu + 1.0))
                * recip_gamma(0.5 * (nu - mu) + 1.0),
            two_mu
                * sp
                * (0.5 * (nu + mu) * PI).cos()
                * gamma(0.5 * (nu + mu) + 1.0)
                * recip_gamma(0.5 * (nu - mu + 1.0)),
        ),
    }
}

fn check_args(nu: f64, mu: f64, t: f64) -> Result<()> {
    if !(t > -1.0 && t < 1.0) {
        return Err(Error::Domain(format!("Ferrers functions need -1 < t < 1, got {t}")));
    }
    if !(nu.is_finite() && mu.is_finite()) || nu + mu + 1.0 <= 0.0 {
        return Err(Error::Domain(format!("unsupported order/degree ({mu}, {nu})")));
    }
    Ok(())
}

/// Reduced function and its derivative at `t`.
pub fn reduced(kind: Kind, nu: f64, mu: f64, t: f64) -> Result<(f64, f64)> {
    check_args(nu, mu, t)?;
    let (v0, dv0) = origin_data(kind, nu, mu);
    let k = (nu - mu) * (nu + mu + 1.0);
    let rhs = move |s: f64, y: &[f64]| vec![y[1], (2.0 * (mu + 1.0) * s * y[1] - k * y[0]) / (1.0 - s * s)];
    let tol = Tolerance { rtol: 1e-13, atol: 1e-13 * v0.abs().max(dv0.abs()).max(1.0) };
    let y = ode::solve(rhs, 0.0, &[v0, dv0], t, tol)?;
    Ok((y[0], y[1]))
}

/// Residual of the reduced equation from values and derivatives.
pub fn reduced_residual(nu: f64, mu: f64, t: f64, v: f64, dv: f64, d2v: f64) -> f64 {
    (1.0 - t * t) * d2v - 2.0 * (mu + 1.0) * t * dv + (nu - mu) * (nu + mu + 1.0) * v
}

/// Ferrers function of the second kind `Q^mu_nu(t)`.
pub fn legendre_q(nu: f64, mu: f64, t: f64) -> Result<f64> {
    let (v, _) = reduced(Kind::Second, nu, mu, t)?;
    Ok((1.0 - t * t).powf(0.5 * mu) * v)
}

/// Ferrers function of the first kind `P^mu_nu(t)`.
pub fn legendre_p(nu: f64, mu: f64, t: f64) -> Result<f64> {
    let (v, _) = reduced(Kind::First, nu, mu, t)?;
    Ok((1.0 - t * t).powf(0.5 * mu) * v)
}

/// Degree, order and kind whose reduced function is the cone's eigenprofile.
///
/// Odd `d` uses `Q`, even `d` uses `P`; in both cases the reduced function
/// is even in `t`.
pub fn cone_parameters(d: Dim) -> (Kind, f64, f64) {
    let df = d.f();
    let kind = if d.get() % 2 == 1 { Kind::Second } else { Kind::First };
    (kind, 0.5 * (df - 1.0), 0.5 * (df - 3.0))
}

/// Unnormalized eigenprofile `v(cos theta)` of the cone in dimension `d`.
pub fn cone_profile(d: Dim, theta: f64) -> Result<f64> {
    let (kind, nu, mu) = cone_parameters(d);
    reduced(kind, nu, mu, theta.cos()).map(|(v, _)| v)
}

/// Smallest positive zero of the reduced cone profile in `t`.
pub fn cone_profile_root(d: Dim) -> Result<f64> {
    let (kind, nu, mu) = cone_parameters(d);
    let f = |t: f64| reduced(kind, nu, mu, t).map(|(v, _)| v);
    let mut lo = 0.0;
    let v0 = f(0.0)?;
    let step = 1.0 / 64.0;
    while lo + step < 1.0 {
        let hi = lo + step;
        if f(hi)?.signum() != v0.signum() {
            return crate::roots::brent(f, lo, hi, 1e-15);
        }
        lo = hi;
    }
    Err(Error::Bracket(format!("no zero of the d = {d} profile on (0, 1)")))
}
