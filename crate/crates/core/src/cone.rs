//! Homogeneous cones over symmetric latitudinal bands.
//!
//! The cone in dimension `d` is `kappa0 * r * phi0(theta)` on the band
//! `(pi/2 - theta0, pi/2 + theta0)`, where `theta0` makes the first Dirichlet
//! eigenvalue of the band equal to `d - 1` and `kappa0` makes the boundary
//! gradient of unit length.

use crate::error::{Error, Result};
use crate::geometry::{band_measure, band_perimeter, Band, Dim, SphereGeom};
use crate::legendre;
use crate::profile::Profile;
use crate::roots;
use crate::sturm::{self, RadialOperator, SolverConfig};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

/// Collocation order used inside the opening-angle root search.
const SEARCH_ORDER: usize = 96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeModel {
    pub d: Dim,
    pub theta0: f64,
    pub kappa0: f64,
    /// Radial part of the first eigenfunction, unit in `L^2` of the band.
    pub profile0: Profile,
    pub m0: f64,
    pub perim: f64,
    pub weiss_density: f64,
    pub c_int: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// False for cones built below dimension 7, which are only stationary.
    pub minimizing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl InvariantCheck {
    fn at_most(name: &str, value: f64, tolerance: f64) -> InvariantCheck {
        InvariantCheck { name: name.into(), value, tolerance, pass: value.abs() <= tolerance }
    }

    fn positive(name: &str, value: f64) -> InvariantCheck {
        InvariantCheck { name: name.into(), value, tolerance: 0.0, pass: value > 0.0 }
    }
}

/// First Dirichlet eigenvalue of the axisymmetric problem at the search order.
pub fn lambda1_fast(band: &Band) -> Result<f64> {
    let op = RadialOperator::new(*band, 0.0)?;
    sturm::first_eigenpair(&op, SEARCH_ORDER).map(|p| p.eigenvalue)
}

fn theta0_root(d: Dim) -> Result<f64> {
    let target = d.f() - 1.0;
    let gap = |theta: f64| -> Result<f64> { Ok(lambda1_fast(&Band::symmetric(d, theta)?)? - target) };
    let (lo, hi) = (0.05 / (d.f() / 7.0).sqrt(), 1.5);
    roots::brent(gap, lo, hi, 1e-13)
}

/// Opening half-angle `theta0` of the minimizing cone, `d >= 7`.
pub fn solve_theta0(d: Dim) -> Result<f64> {
    Dim::cone(d.get())?;
    theta0_root(d)
}

/// Opening half-angle of the stationary cone for any `d >= 3`.
pub fn solve_theta0_stationary(d: Dim) -> Result<f64> {
    theta0_root(d)
}

pub fn build_cone(d: Dim) -> Result<ConeModel> {
    Dim::cone(d.get())?;
    assemble(d, theta0_root(d)?, true)
}

pub fn build_stationary_cone(d: Dim) -> Result<ConeModel> {
    assemble(d, theta0_root(d)?, d.get() >= 7)
}

fn assemble(d: Dim, theta0: f64, minimizing: bool) -> Result<ConeModel> {
    let band = Band::symmetric(d, theta0)?;
    let op = RadialOperator::new(band, 0.0)?;
    let pairs = sturm::eigen_solve(&op, 2, SolverConfig::default())?;
    let area = SphereGeom::new(d).area_dm2;
    let profile0 = pairs[0].profile.scaled(1.0 / area.sqrt());
    let slope = profile0.derivative_values()[profile0.order()].abs();
    if !(slope > 0.0) {
        return Err(Error::NoConvergence { what: "boundary slope of phi0".into(), last: vec![slope] });
    }
    let kappa0 = 1.0 / slope;
    let m0 = band_measure(&band)?;
    let perim = band_perimeter(&band);
    Ok(ConeModel {
        d,
        theta0,
        kappa0,
        c_int: area * profile0.integral(),
        profile0,
        m0,
        perim,
        weiss_density: m0 / d.f(),
        lambda1: pairs[0].eigenvalue,
        lambda2: pairs[1].eigenvalue,
        minimizing,
    })
}

/// Value of the radial eigenprofile at `theta`.
pub fn profile_phi0(cone: &ConeModel, theta: f64) -> Result<f64> {
    cone.profile0.eval(theta)
}

impl ConeModel {
    pub fn band(&self) -> Band {
        self.profile0.band
    }

    pub fn area_dm2(&self) -> f64 {
        SphereGeom::new(self.d).area_dm2
    }

    /// `kappa0^2`, the coefficient in front of the eigenvalue in `F`.
    pub fn kappa0_sq(&self) -> f64 {
        self.kappa0 * self.kappa0
    }

    /// `phi0'(theta_lo)` and `phi0'(theta_hi)`.
    pub fn boundary_slopes(&self) -> (f64, f64) {
        let dv = self.profile0.derivative_values();
        (dv[0], dv[self.profile0.order()])
    }

    /// `cos^{d-2}(theta0)`, the weight at either boundary circle.
    pub fn boundary_weight(&self) -> f64 {
        self.theta0.cos().powi(self.d.weight_power())
    }

    /// Ratio `phi0 / v(cos theta)` against the Legendre closed form: the
    /// constant `c_theta` and the worst relative deviation from it.
    pub fn legendre_constant(&self) -> Result<(f64, f64)> {
        let c = profile_phi0(self, FRAC_PI_2)? / legendre::cone_profile(self.d, FRAC_PI_2)?;
        let band = self.band();
        let mut worst: f64 = 0.0;
        for k in 1..32 {
            let theta = band.theta_lo + band.width() * k as f64 / 32.0;
            let ratio = profile_phi0(self, theta)? / legendre::cone_profile(self.d, theta)?;
            worst = worst.max(((ratio - c) / c).abs());
        }
        Ok((c, worst))
    }

    pub fn check(&self) -> Vec<InvariantCheck> {
        let df = self.d.f();
        let (lo, hi) = self.boundary_slopes();
        let identity = self.perim / ((df - 1.0) * self.kappa0);
        let half = self.theta0 * 0.61;
        let sym = (self.profile0.eval_or_zero(FRAC_PI_2 - half) - self.profile0.eval_or_zero(FRAC_PI_2 + half)).abs();
        vec![
            InvariantCheck::at_most("lambda1 - (d-1)", self.lambda1 - (df - 1.0), 1e-9),
            InvariantCheck::at_most("kappa0 |phi0'(theta_lo)| - 1", self.kappa0 * lo.abs() - 1.0, 1e-8),
            InvariantCheck::at_most("kappa0 |phi0'(theta_hi)| - 1", self.kappa0 * hi.abs() - 1.0, 1e-8),
            InvariantCheck::at_most("|phi0'(theta_lo)| - |phi0'(theta_hi)|", lo.abs() - hi.abs(), 1e-10),
            InvariantCheck::at_most("weiss_density - m0/d", self.weiss_density - self.m0 / df, 0.0),
            InvariantCheck::at_most("c_int / (perim / ((d-1) kappa0)) - 1", self.c_int / identity - 1.0, 1e-7),
            InvariantCheck::at_most("phi0 symmetry defect", sym, 1e-10),
            InvariantCheck::positive("lambda2 - (d-1)", self.lambda2 - (df - 1.0)),
            InvariantCheck::positive("m0 / kappa0^2 - (d-1)", self.m0 / self.kappa0_sq() - (df - 1.0)),
            InvariantCheck::positive(
                "min phi0 in band",
                self.profile0.values[1..self.profile0.order()].iter().cloned().fold(f64::INFINITY, f64::min),
            ),
        ]
    }

    pub fn all_checks_pass(&self) -> bool {
        self.check().iter().all(|c| c.pass)
    }
}
