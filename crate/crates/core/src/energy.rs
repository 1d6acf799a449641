//! Spherical Alt-Caffarelli energy of a trace on the unit sphere.

use crate::error::{Error, Result};
use crate::geometry::{band_measure, Band, SphereGeom};
use crate::profile::Profile;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceEnergy {
    /// Dirichlet part plus the measure of the positivity set.
    pub e_total: f64,
    /// `int |grad c|^2 - (d-1) c^2` alone.
    pub e_quadratic: f64,
}

impl SliceEnergy {
    pub fn positivity_measure(&self) -> f64 {
        self.e_total - self.e_quadratic
    }
}

/// A trace on the unit sphere supported on a band.
#[derive(Debug, Clone, PartialEq)]
pub enum SphericalTrace {
    /// Depends on colatitude only.
    Axisymmetric(Profile),
    /// `f(theta) psi(omega)` with `psi` a harmonic of the given degree on `S^{d-2}`.
    Separated { profile: Profile, degree: u32 },
    /// The zero function.
    Zero,
}

/// Energy `E(c) = int (|grad c|^2 - (d-1) c^2) + H^{d-1}({c > 0})`.
pub fn slice_energy(trace: &SphericalTrace) -> Result<SliceEnergy> {
    match trace {
        SphericalTrace::Zero => Ok(SliceEnergy { e_total: 0.0, e_quadratic: 0.0 }),
        SphericalTrace::Separated { degree, .. } if *degree > 0 => {
            Err(Error::Unsupported(format!("positivity set of a degree-{degree} separated trace is not axisymmetric")))
        }
        SphericalTrace::Separated { profile, .. } | SphericalTrace::Axisymmetric(profile) => {
            axisymmetric_energy(profile)
        }
    }
}

pub fn axisymmetric_energy(profile: &Profile) -> Result<SliceEnergy> {
    let d = profile.band.d;
    let area = SphereGeom::new(d).area_dm2;
    let weights = profile.weighted_quadrature();
    let deriv = profile.derivative_values();
    let quad: f64 = weights
        .iter()
        .zip(deriv.iter().zip(&profile.values))
        .map(|(w, (df, f))| w * (df * df - (d.f() - 1.0) * f * f))
        .sum();
    let e_quadratic = area * quad;
    Ok(SliceEnergy { e_total: e_quadratic + positivity_measure(profile)?, e_quadratic })
}

/// `H^{d-1}` measure of `{f > 0}` for an axisymmetric profile.
pub fn positivity_measure(profile: &Profile) -> Result<f64> {
    let band = profile.band;
    let mut cuts = vec![band.theta_lo];
    cuts.extend(profile.sign_changes());
    cuts.push(band.theta_hi);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        if profile.eval_or_zero(0.5 * (lo + hi)) > 0.0 {
            total += band_measure(&Band::new(band.d, lo, hi)?)?;
        }
    }
    Ok(total)
}
