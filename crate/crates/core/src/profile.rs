//! Functions of colatitude sampled on a Chebyshev-Lobatto grid of a band.

use crate::cheb;
use crate::error::{Error, Result};
use crate::geometry::Band;
use serde::{Deserialize, Serialize};

pub const MIN_ORDER: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub band: Band,
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
}

/// Lobatto nodes of order `n` mapped onto the band.
pub fn band_nodes(band: &Band, n: usize) -> Vec<f64> {
    let (c, h) = (band.mid(), band.half_width());
    let mut nodes: Vec<f64> = cheb::lobatto_nodes(n).into_iter().map(|x| c + h * x).collect();
    nodes[0] = band.theta_lo;
    nodes[n] = band.theta_hi;
    nodes
}

impl Profile {
    pub fn from_values(band: Band, values: Vec<f64>) -> Result<Profile> {
        if values.len() < MIN_ORDER + 1 {
            return Err(Error::Domain(format!("profile needs at least {} nodes, got {}", MIN_ORDER + 1, values.len())));
        }
        if band.is_degenerate() {
            return Err(Error::Domain("profile on a degenerate band".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite profile sample".into()));
        }
        let nodes = band_nodes(&band, values.len() - 1);
        Ok(Profile { band, nodes, values })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(band: Band, n: usize, f: F) -> Result<Profile> {
        let values = band_nodes(&band, n.max(MIN_ORDER)).into_iter().map(f).collect();
        Profile::from_values(band, values)
    }

    /// Polynomial order (node count minus one).
    pub fn order(&self) -> usize {
        self.values.len() - 1
    }

    fn unit(&self, theta: f64) -> f64 {
        (theta - self.band.mid()) / self.band.half_width()
    }

    /// Value at `theta`; errors outside the band.
    pub fn eval(&self, theta: f64) -> Result<f64> {
        let tol = 1e-12 * self.band.width();
        if theta < self.band.theta_lo - tol || theta > self.band.theta_hi + tol {
            return Err(Error::Domain(format!(
                "colatitude {theta} outside band ({}, {})",
                self.band.theta_lo, self.band.theta_hi
            )));
        }
        Ok(self.eval_unchecked(theta))
    }

    /// Value at `theta`, taken as zero outside the band.
    pub fn eval_or_zero(&self, theta: f64) -> f64 {
        if self.band.contains(theta) {
            self.eval_unchecked(theta)
        } else {
            0.0
        }
    }

    /// Values at several colatitudes, zero outside the band.
    pub fn eval_many_or_zero(&self, thetas: &[f64]) -> Vec<f64> {
        let n = self.order();
        let x = cheb::lobatto_nodes(n);
        let w = cheb::barycentric_weights(n);
        thetas
            .iter()
            .map(|&t| if self.band.contains(t) { cheb::interpolate(&x, &w, &self.values, self.unit(t)) } else { 0.0 })
            .collect()
    }

    fn eval_unchecked(&self, theta: f64) -> f64 {
        let n = self.order();
        let x = cheb::lobatto_nodes(n);
        cheb::interpolate(&x, &cheb::barycentric_weights(n), &self.values, self.unit(theta))
    }

    /// Derivative samples `f'(theta_j)`.
    pub fn derivative_values(&self) -> Vec<f64> {
        let n = self.order();
        let d = cheb::diff_matrix(n);
        let scale = 1.0 / self.band.half_width();
        (0..=n).map(|i| scale * (0..=n).map(|j| d[(i, j)] * self.values[j]).sum::<f64>()).collect()
    }

    pub fn derivative(&self) -> Profile {
        Profile { band: self.band, nodes: self.nodes.clone(), values: self.derivative_values() }
    }

    /// Quadrature weights for `int g(theta) sin^{d-2}(theta) d theta` on the nodes.
    pub fn weighted_quadrature(&self) -> Vec<f64> {
        let h = self.band.half_width();
        cheb::clenshaw_curtis_weights(self.order())
            .into_iter()
            .zip(&self.nodes)
            .map(|(w, &t)| w * h * self.band.weight(t))
            .collect()
    }

    /// `int f sin^{d-2}` over the band.
    pub fn integral(&self) -> f64 {
        self.weighted_quadrature().iter().zip(&self.values).map(|(w, f)| w * f).sum()
    }

    fn check_compatible(&self, other: &Profile) -> Result<()> {
        if self.band != other.band || self.order() != other.order() {
            return Err(Error::Domain("profiles live on different grids".into()));
        }
        Ok(())
    }

    /// Weighted inner product `int f g sin^{d-2}`.
    pub fn inner(&self, other: &Profile) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .weighted_quadrature()
            .iter()
            .zip(self.values.iter().zip(&other.values))
            .map(|(w, (a, b))| w * a * b)
            .sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.inner(self).expect("same grid")
    }

    pub fn scaled(&self, factor: f64) -> Profile {
        Profile { band: self.band, nodes: self.nodes.clone(), values: self.values.iter().map(|v| v * factor).collect() }
    }

    pub fn add_scaled(&self, other: &Profile, factor: f64) -> Result<Profile> {
        self.check_compatible(other)?;
        Ok(Profile {
            band: self.band,
            nodes: self.nodes.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + factor * b).collect(),
        })
    }

    /// Re-samples on a grid of order `n` by interpolation.
    pub fn resample(&self, n: usize) -> Result<Profile> {
        let x = cheb::lobatto_nodes(self.order());
        let w = cheb::barycentric_weights(self.order());
        let targets = cheb::lobatto_nodes(n);
        Profile::from_values(
            self.band,
            targets.into_iter().map(|t| cheb::interpolate(&x, &w, &self.values, t)).collect(),
        )
    }

    /// Colatitudes in the open band where the sampled function changes sign.
    pub fn sign_changes(&self) -> Vec<f64> {
        let n = self.order();
        let mut roots = Vec::new();
        for j in 1..n - 1 {
            let (a, b) = (self.values[j], self.values[j + 1]);
            if a == 0.0 {
                roots.push(self.nodes[j]);
            } else if a * b < 0.0 {
                roots.push(self.bisect(self.nodes[j], self.nodes[j + 1], a));
            }
        }
        roots
    }

    fn bisect(&self, mut lo: f64, mut hi: f64, f_lo: f64) -> f64 {
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            let fm = self.eval_unchecked(mid);
            if fm == 0.0 {
                return mid;
            }
            if (fm > 0.0) == (f_lo > 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Dim;

    fn band() -> Band {
        Band::new(Dim::new(5).unwrap(), 0.7, 2.1).unwrap()
    }

    #[test]
    fn rejects_small_grids() {
        assert!(Profile::from_values(band(), vec![0.0; 10]).is_err());
        let b = Band::new(Dim::new(5).unwrap(), 1.0, 1.0).unwrap();
        assert!(Profile::from_fn(b, 20, |t| t).is_err());
    }

    #[test]
    fn interpolates_and_differentiates() {
        let p = Profile::from_fn(band(), 32, |t| (3.0 * t).sin()).unwrap();
        assert!((p.eval(1.234).unwrap() - (3.0 * 1.234f64).sin()).abs() < 1e-12);
        assert!(p.eval(2.5).is_err());
        assert_eq!(p.eval_or_zero(0.1), 0.0);
        let dp = p.derivative();
        for (t, v) in dp.nodes.iter().zip(&dp.values) {
            assert!((v - 3.0 * (3.0 * t).cos()).abs() < 1e-10);
        }
    }

    #[test]
    fn weighted_integrals() {
        let p = Profile::from_fn(band(), 40, |t| t.cos()).unwrap();
        // int cos sin^3 = sin^4 / 4
        let exact = (2.1f64.sin().powi(4) - 0.7f64.sin().powi(4)) / 4.0;
        assert!((p.integral() - exact).abs() < 1e-13);
        let one = Profile::from_fn(band(), 40, |_| 1.0).unwrap();
        assert!((p.inner(&one).unwrap() - exact).abs() < 1e-13);
        let other = Profile::from_fn(band(), 30, |_| 1.0).unwrap();
        assert!(p.inner(&other).is_err());
    }

    #[test]
    fn finds_sign_changes() {
        let p = Profile::from_fn(band(), 40, |t| (t - 1.3) * (t - 1.9)).unwrap();
        let r = p.sign_changes();
        assert_eq!(r.len(), 2);
        assert!((r[0] - 1.3).abs() < 1e-12 && (r[1] - 1.9).abs() < 1e-12);
    }
}
