//! Explicit spherical harmonics on `S^n` used to spot-check the separated
//! problems numerically.

use crate::error::{Error, Result};
use crate::geometry::sphere_area;
use crate::quadrature;

/// Eigenvalue `l (l + n - 1)` of a degree-`l` harmonic on `S^n`.
pub fn eigenvalue(n: u32, ell: u32) -> f64 {
    let l = ell as f64;
    l * (l + n as f64 - 1.0)
}

/// Dimension of the space of degree-`l` harmonics on `S^n`.
pub fn multiplicity(n: u32, ell: u32) -> u64 {
    let total = |k: i64| -> u64 {
        if k < 0 {
            0
        } else {
            binomial(k as u64 + n as u64, n as u64)
        }
    };
    total(ell as i64) - total(ell as i64 - 2)
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// Gegenbauer polynomial `C^alpha_l(x)`; `alpha = 0` gives `T_l`.
pub fn gegenbauer(alpha: f64, ell: u32, x: f64) -> f64 {
    if alpha == 0.0 {
        return (ell as f64 * x.clamp(-1.0, 1.0).acos()).cos();
    }
    let (mut prev, mut cur) = (1.0, 2.0 * alpha * x);
    if ell == 0 {
        return prev;
    }
    for k in 2..=ell {
        let kf = k as f64;
        let next = (2.0 * x * (kf + alpha - 1.0) * cur - (kf + 2.0 * alpha - 2.0) * prev) / kf;
        prev = cur;
        cur = next;
    }
    cur
}

/// `int_{S^n} g(x_1)` for a function of the first coordinate.
pub fn zonal_integral<F: Fn(f64) -> f64>(n: u32, g: F) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("zonal integral on S^0".into()));
    }
    let (factor, p) = if n == 1 { (2.0, 0) } else { (sphere_area(n as i32 - 1)?, n as i32 - 1) };
    let q = quadrature::integrate(|phi| g(phi.cos()) * phi.sin().powi(p), 0.0, std::f64::consts::PI, 1e-13)?;
    Ok(factor * q.value)
}

/// Zonal harmonic of degree `l` on `S^n`, unit in `L^2(S^n)`.
#[derive(Debug, Clone, Copy)]
pub struct Zonal {
    pub n: u32,
    pub ell: u32,
    scale: f64,
}

impl Zonal {
    pub fn new(n: u32, ell: u32) -> Result<Zonal> {
        let alpha = 0.5 * (n as f64 - 1.0);
        let norm_sq = zonal_integral(n, |x| gegenbauer(alpha, ell, x).powi(2))?;
        Ok(Zonal { n, ell, scale: 1.0 / norm_sq.sqrt() })
    }

    pub fn alpha(&self) -> f64 {
        0.5 * (self.n as f64 - 1.0)
    }

    /// Value as a function of the first coordinate.
    pub fn eval(&self, x1: f64) -> f64 {
        self.scale * gegenbauer(self.alpha(), self.ell, x1)
    }

    /// Value at a point of `R^{n+1}` (projected onto the sphere).
    pub fn eval_point(&self, x: &[f64]) -> f64 {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.eval(x[0] / r)
    }
}

/// `Re (x_1 + i x_2)^l`, harmonic and homogeneous of degree `l`.
pub fn sectoral(ell: u32, x: &[f64]) -> f64 {
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (a, b) = (x[0] / r, x[1] / r);
    let rho = a.hypot(b);
    rho.powi(ell as i32) * (ell as f64 * b.atan2(a)).cos()
}

/// Laplace-Beltrami eigenvalue of `f` at a point of `S^n`, estimated by
/// central differences of the 0-homogeneous extension in `R^{n+1}`.
pub fn rayleigh_at<F: Fn(&[f64]) -> f64>(f: F, point: &[f64], h: f64) -> f64 {
    let dim = point.len();
    let center = f(point);
    let mut lap = 0.0;
    let mut x = point.to_vec();
    for k in 0..dim {
        x[k] = point[k] + h;
        let plus = f(&x);
        x[k] = point[k] - h;
        let minus = f(&x);
        x[k] = point[k];
        lap += (plus - 2.0 * center + minus) / (h * h);
    }
    -lap / center
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multiplicities() {
        assert_eq!(multiplicity(5, 0), 1);
        assert_eq!(multiplicity(5, 1), 6);
        assert_eq!(multiplicity(5, 2), 20);
        assert_eq!(multiplicity(2, 3), 7);
        assert_eq!(multiplicity(1, 4), 2);
    }

    #[test]
    fn zonal_harmonics_are_orthonormal() {
        for n in [1, 2, 5] {
            let a = Zonal::new(n, 2).unwrap();
            let b = Zonal::new(n, 3).unwrap();
            let aa = zonal_integral(n, |x| a.eval(x) * a.eval(x)).unwrap();
            let ab = zonal_integral(n, |x| a.eval(x) * b.eval(x)).unwrap();
            assert!((aa - 1.0).abs() < 1e-12);
            assert!(ab.abs() < 1e-13);
        }
    }

    #[test]
    fn two_harmonics_share_the_eigenvalue() {
        let n = 5;
        let point = [0.3, -0.5, 0.2, 0.6, -0.1, 0.4];
        let r = point.iter().map(|v| v * v).sum::<f64>().sqrt();
        let point: Vec<f64> = point.iter().map(|v| v / r).collect();
        for ell in 1..4 {
            let z = Zonal::new(n, ell).unwrap();
            let q1 = rayleigh_at(|x| z.eval_point(x), &point, 1e-4);
            let q2 = rayleigh_at(|x| sectoral(ell, x), &point, 1e-4);
            let exact = eigenvalue(n, ell);
            assert!((q1 - exact).abs() < 1e-4 * exact, "{q1} vs {exact}");
            assert!((q2 - exact).abs() < 1e-4 * exact, "{q2} vs {exact}");
        }
    }
}
