//! Sphere and latitudinal-band geometry.
//!
//! A band is the set of points of `S^{d-1}` whose colatitude lies in
//! `(theta_lo, theta_hi)`. Its boundary is two round `(d-2)`-spheres of
//! radius `sin(theta_lo)` and `sin(theta_hi)`.

use crate::error::{Error, Result};
use crate::quadrature;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::{FRAC_PI_2, PI};

/// Ambient dimension `d` of `R^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Dim(u32);

impl Dim {
    pub fn new(d: u32) -> Result<Dim> {
        if d < 3 {
            return Err(Error::Domain(format!("dimension must be at least 3, got {d}")));
        }
        Ok(Dim(d))
    }

    /// Dimension in which the singular cones are minimizing.
    pub fn cone(d: u32) -> Result<Dim> {
        if d < 7 {
            return Err(Error::Precondition(format!("singular minimizing cones require d >= 7, got {d}")));
        }
        Dim::new(d)
    }

    pub fn get(self) -> u32 {
        self.0
    }

    pub fn f(self) -> f64 {
        self.0 as f64
    }

    /// Exponent of the band weight `sin^{d-2}`.
    pub fn weight_power(self) -> i32 {
        self.0 as i32 - 2
    }
}

impl TryFrom<u32> for Dim {
    type Error = Error;
    fn try_from(d: u32) -> Result<Dim> {
        Dim::new(d)
    }
}

impl From<Dim> for u32 {
    fn from(d: Dim) -> u32 {
        d.0
    }
}

impl std::fmt::Display for Dim {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Surface measure of the unit `n`-sphere, `2 pi^{(n+1)/2} / Gamma((n+1)/2)`.
pub fn sphere_area(n: i32) -> Result<f64> {
    ln_sphere_area(n).map(f64::exp)
}

pub fn ln_sphere_area(n: i32) -> Result<f64> {
    if n <= 0 {
        return Err(Error::Domain(format!("sphere dimension must be positive, got {n}")));
    }
    let h = (n as f64 + 1.0) / 2.0;
    Ok(2f64.ln() + h * PI.ln() - ln_gamma(h))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereGeom {
    pub d: Dim,
    pub area_dm1: f64,
    pub area_dm2: f64,
}

impl SphereGeom {
    pub fn new(d: Dim) -> SphereGeom {
        let n = d.get() as i32;
        SphereGeom { d, area_dm1: sphere_area(n - 1).expect("n >= 2"), area_dm2: sphere_area(n - 2).expect("n >= 1") }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub d: Dim,
    pub theta_lo: f64,
    pub theta_hi: f64,
}

impl Band {
    pub fn new(d: Dim, theta_lo: f64, theta_hi: f64) -> Result<Band> {
        if !(theta_lo > 0.0 && theta_lo <= theta_hi && theta_hi < PI) {
            return Err(Error::Domain(format!(
                "band requires 0 < theta_lo <= theta_hi < pi, got ({theta_lo}, {theta_hi})"
            )));
        }
        Ok(Band { d, theta_lo, theta_hi })
    }

    /// The band `(pi/2 - half_width, pi/2 + half_width)`.
    pub fn symmetric(d: Dim, half_width: f64) -> Result<Band> {
        Band::new(d, FRAC_PI_2 - half_width, FRAC_PI_2 + half_width)
    }

    pub fn width(&self) -> f64 {
        self.theta_hi - self.theta_lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.theta_lo + self.theta_hi)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * self.width()
    }

    pub fn is_degenerate(&self) -> bool {
        self.theta_hi <= self.theta_lo
    }

    pub fn is_symmetric(&self) -> bool {
        (self.mid() - FRAC_PI_2).abs() <= 1e-13
    }

    pub fn contains(&self, theta: f64) -> bool {
        theta >= self.theta_lo && theta <= self.theta_hi
    }

    /// Band with each boundary circle moved along its outward normal.
    pub fn shifted(&self, lo_out: f64, hi_out: f64) -> Result<Band> {
        Band::new(self.d, self.theta_lo - lo_out, self.theta_hi + hi_out)
    }

    /// Weight `sin^{d-2}(theta)` of the radial measure.
    pub fn weight(&self, theta: f64) -> f64 {
        theta.sin().powi(self.d.weight_power())
    }
}

/// `H^{d-1}` measure of the band.
pub fn band_measure(band: &Band) -> Result<f64> {
    if band.is_degenerate() {
        return Ok(0.0);
    }
    let geom = SphereGeom::new(band.d);
    let p = band.d.weight_power();
    let q = quadrature::integrate(|t| t.sin().powi(p), band.theta_lo, band.theta_hi, 1e-12)?;
    Ok(geom.area_dm2 * q.value)
}

/// `H^{d-2}` measure of the two boundary circles.
pub fn band_perimeter(band: &Band) -> f64 {
    let geom = SphereGeom::new(band.d);
    (band.weight(band.theta_lo) + band.weight(band.theta_hi)) * geom.area_dm2
}

/// Mean curvature of the boundary circles of a symmetric band, `-(d-2) tan(theta0)`.
pub fn boundary_mean_curvature(band: &Band) -> Result<f64> {
    if !band.is_symmetric() {
        return Err(Error::Precondition("mean curvature needs a symmetric band".into()));
    }
    let half = band.half_width();
    if half >= FRAC_PI_2 {
        return Err(Error::Domain(format!("half-width {half} reaches the poles")));
    }
    Ok(-(band.d.f() - 2.0) * half.tan())
}

/// Positive root `alpha` of `alpha (alpha + d - 2) = lambda`.
pub fn homogeneity_exponent(lambda: f64, d: Dim) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("eigenvalue must be nonnegative, got {lambda}")));
    }
    let b = d.f() - 2.0;
    Ok(2.0 * lambda / (b + (b * b + 4.0 * lambda).sqrt()))
}
