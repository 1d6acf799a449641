//! Dirichlet problems for the separated Laplace-Beltrami operator on a band,
//!
//! `L f = -f'' - (d-2) cot(theta) f' + m f / sin^2(theta)`,
//!
//! solved by Chebyshev collocation. Low eigenvalues are read off the inverse
//! of the collocation matrix so that their relative accuracy does not degrade
//! with the norm of the second-derivative block. Spurious collocation modes
//! are filtered by their residual on a refined grid.

use crate::cheb;
use crate::error::{Error, Result};
use crate::geometry::Band;
use crate::ode::{self, Tolerance};
use crate::profile::{band_nodes, Profile};
use nalgebra::{DMatrix, DVector};
use std::ops::ControlFlow;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialOperator {
    pub band: Band,
    /// Eigenvalue `l (l + d - 3)` of the harmonic on `S^{d-2}`.
    pub azimuthal_eigenvalue: f64,
    /// Zeroth-order shift used by boundary value problems.
    pub shift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub eigenvalue: f64,
    pub profile: Profile,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub min_order: usize,
    pub max_order: usize,
    pub tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { min_order: 64, max_order: 1024, tol: 1e-10 }
    }
}

pub const SPURIOUS_RESIDUAL: f64 = 1e-6;

impl RadialOperator {
    pub fn new(band: Band, azimuthal_eigenvalue: f64) -> Result<RadialOperator> {
        if band.is_degenerate() {
            return Err(Error::Domain("operator on a degenerate band".into()));
        }
        if !(azimuthal_eigenvalue >= 0.0) {
            return Err(Error::Domain(format!("azimuthal eigenvalue must be nonnegative, got {azimuthal_eigenvalue}")));
        }
        Ok(RadialOperator { band, azimuthal_eigenvalue, shift: 0.0 })
    }

    pub fn with_shift(mut self, shift: f64) -> RadialOperator {
        self.shift = shift;
        self
    }

    /// Collocation matrix of `L` (without shift) on all `n + 1` nodes.
    pub fn matrix(&self, n: usize) -> DMatrix<f64> {
        let nodes = band_nodes(&self.band, n);
        let d1 = cheb::diff_matrix(n);
        let d2 = &d1 * &d1;
        let h = self.band.half_width();
        let p = self.band.d.f() - 2.0;
        let m = self.azimuthal_eigenvalue;
        let mut a = DMatrix::zeros(n + 1, n + 1);
        for i in 0..=n {
            let t = nodes[i];
            let drift = p * t.cos() / t.sin() / h;
            for j in 0..=n {
                a[(i, j)] = -d2[(i, j)] / (h * h) - drift * d1[(i, j)];
            }
            a[(i, i)] += m / (t.sin() * t.sin());
        }
        a
    }

    fn interior(&self, n: usize) -> DMatrix<f64> {
        self.matrix(n).view((1, 1), (n - 1, n - 1)).into_owned()
    }

    /// `(L - shift) f - target` on a grid of order `n`, weighted L2 norm.
    fn residual_on(&self, values_fn: &dyn Fn(f64) -> f64, target: &dyn Fn(f64) -> f64, n: usize) -> f64 {
        let nodes = band_nodes(&self.band, n);
        let u = DVector::from_iterator(n + 1, nodes.iter().map(|&t| values_fn(t)));
        let lu = self.matrix(n) * &u - &u * self.shift;
        let prof = Profile { band: self.band, nodes: nodes.clone(), values: vec![0.0; n + 1] };
        let w = prof.weighted_quadrature();
        let mut num = 0.0;
        for i in 1..n {
            let r = lu[i] - target(nodes[i]);
            num += w[i] * r * r;
        }
        num.sqrt()
    }
}

fn normalize(band: Band, mut values: Vec<f64>) -> Result<Profile> {
    let raw = Profile::from_values(band, values.clone())?;
    let norm = raw.norm_sq().sqrt();
    let slope = raw.derivative_values()[0];
    let sign = if slope < 0.0 { -1.0 } else { 1.0 };
    for v in values.iter_mut() {
        *v *= sign / norm;
    }
    Profile::from_values(band, values)
}

fn embed(interior: &DVector<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(interior.len() + 2);
    v.push(0.0);
    v.extend(interior.iter());
    v.push(0.0);
    v
}

/// Inverse iteration at a fixed shift; returns refined eigenvalue and unit vector.
fn inverse_iteration(m: &DMatrix<f64>, sigma: f64, start: DVector<f64>) -> Option<(f64, DVector<f64>)> {
    let k = m.nrows();
    let lu = (m - DMatrix::identity(k, k) * sigma).lu();
    let mut x = start.normalize();
    for _ in 0..300 {
        let mut y = lu.solve(&x)?.normalize();
        if y.dot(&x) < 0.0 {
            y = -y;
        }
        let delta = (&y - &x).norm();
        x = y;
        if delta < 1e-13 {
            break;
        }
    }
    let mu = x.dot(&lu.solve(&x)?);
    mu.is_finite().then(|| (sigma + 1.0 / mu, x))
}

/// First Dirichlet eigenpair at a fixed collocation order.
pub fn first_eigenpair(op: &RadialOperator, n: usize) -> Result<EigenPair> {
    let m = op.interior(n);
    let fail = |last: Vec<f64>| Error::NoConvergence { what: "inverse iteration".into(), last };
    let (guess, x) = inverse_iteration(&m, 0.0, DVector::from_element(n - 1, 1.0)).ok_or_else(|| fail(vec![]))?;
    let (lambda, x) = inverse_iteration(&m, guess * (1.0 - 1e-7), x).ok_or_else(|| fail(vec![guess]))?;
    let profile = normalize(op.band, embed(&x))?;
    let residual = eigen_residual(op, &profile, lambda);
    Ok(EigenPair { eigenvalue: lambda, profile, residual })
}

fn eigen_residual(op: &RadialOperator, profile: &Profile, lambda: f64) -> f64 {
    let fine = (2 * profile.order()).min(2048);
    let f = |t: f64| profile.eval_or_zero(t);
    let lam_f = |t: f64| lambda * profile.eval_or_zero(t);
    let plain = RadialOperator { shift: 0.0, ..*op };
    plain.residual_on(&f, &lam_f, fine) / lambda.abs().max(1.0)
}

/// The `k` lowest eigenpairs at a fixed order, spurious modes removed.
pub fn eigen_solve_at(op: &RadialOperator, k: usize, n: usize) -> Result<Vec<EigenPair>> {
    if k == 0 {
        return Err(Error::Domain("requested zero eigenpairs".into()));
    }
    let m = op.interior(n);
    let inv = m
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::NoConvergence { what: "collocation inverse".into(), last: vec![] })?;
    let mut mus: Vec<f64> = inv
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-9 * z.re.abs() && z.re > 0.0)
        .map(|z| z.re)
        .collect();
    mus.sort_by(|a, b| b.total_cmp(a));
    let mut out: Vec<EigenPair> = Vec::with_capacity(k);
    for mu in mus {
        if out.len() == k {
            break;
        }
        let guess = 1.0 / mu;
        let start = DVector::from_fn(n - 1, |i, _| 1.0 + 0.1 * ((i * 7 + 3) % 11) as f64);
        let Some((lambda, x)) = inverse_iteration(&m, guess * (1.0 - 1e-9), start) else {
            continue;
        };
        if out.iter().any(|p| (p.eigenvalue - lambda).abs() <= 1e-8 * lambda.abs()) {
            continue;
        }
        let profile = normalize(op.band, embed(&x))?;
        let residual = eigen_residual(op, &profile, lambda);
        if residual > SPURIOUS_RESIDUAL {
            continue;
        }
        out.push(EigenPair { eigenvalue: lambda, profile, residual });
    }
    out.sort_by(|a, b| a.eigenvalue.total_cmp(&b.eigenvalue));
    if out.len() < k {
        return Err(Error::NoConvergence {
            what: format!("{k} resolved eigenpairs at order {n}"),
            last: out.iter().map(|p| p.eigenvalue).collect(),
        });
    }
    Ok(out)
}

/// The `k` lowest eigenpairs, doubling the order until they settle.
pub fn eigen_solve(op: &RadialOperator, k: usize, cfg: SolverConfig) -> Result<Vec<EigenPair>> {
    let mut n = cfg.min_order;
    let mut prev: Option<Vec<EigenPair>> = None;
    let mut last_err = None;
    while n <= cfg.max_order {
        match eigen_solve_at(op, k, n) {
            Ok(cur) => {
                if let Some(p) = &prev {
                    let moved = p
                        .iter()
                        .zip(&cur)
                        .map(|(a, b)| ((a.eigenvalue - b.eigenvalue) / b.eigenvalue).abs())
                        .fold(0.0, f64::max);
                    if moved < cfg.tol && cur.iter().all(|e| e.residual <= 1e-8) {
                        return Ok(cur);
                    }
                }
                prev = Some(cur);
            }
            Err(e) => last_err = Some(e),
        }
        n *= 2;
    }
    Err(Error::NoConvergence {
        what: format!(
            "eigenvalues up to order {} ({})",
            cfg.max_order,
            last_err.map(|e| e.to_string()).unwrap_or_default()
        ),
        last: prev.map(|p| p.iter().map(|e| e.eigenvalue).collect()).unwrap_or_default(),
    })
}

/// Boundary value problem `(L - shift) u = rhs - t * fredholm` with Dirichlet data.
#[derive(Debug, Clone, Copy, Default)]
pub struct BvpData<'a> {
    pub rhs: Option<&'a Profile>,
    pub boundary: (f64, f64),
    pub orthogonality: Option<&'a Profile>,
    pub fredholm_direction: Option<&'a Profile>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvpSolution {
    pub profile: Profile,
    pub multiplier: Option<f64>,
    pub residual: f64,
    pub orthogonality_defect: Option<f64>,
}

fn sample(p: Option<&Profile>, t: f64) -> f64 {
    p.map_or(0.0, |p| p.eval_or_zero(t))
}

pub fn bvp_solve_at(op: &RadialOperator, data: &BvpData<'_>, n: usize) -> Result<BvpSolution> {
    let constrained = match (data.orthogonality, data.fredholm_direction) {
        (Some(_), Some(_)) => true,
        (None, None) => false,
        _ => return Err(Error::Precondition("orthogonality and Fredholm direction must be supplied together".into())),
    };
    let nodes = band_nodes(&op.band, n);
    let size = n + 1 + usize::from(constrained);
    let mut a = DMatrix::zeros(size, size);
    let mut b = DVector::zeros(size);
    let l = op.matrix(n);
    for i in 1..n {
        for j in 0..=n {
            a[(i, j)] = l[(i, j)];
        }
        a[(i, i)] -= op.shift;
        b[i] = sample(data.rhs, nodes[i]);
    }
    a[(0, 0)] = 1.0;
    b[0] = data.boundary.0;
    a[(n, n)] = 1.0;
    b[n] = data.boundary.1;
    if constrained {
        let q = Profile { band: op.band, nodes: nodes.clone(), values: vec![0.0; n + 1] }.weighted_quadrature();
        for i in 1..n {
            a[(i, n + 1)] = sample(data.fredholm_direction, nodes[i]);
        }
        for j in 0..=n {
            a[(n + 1, j)] = q[j] * sample(data.orthogonality, nodes[j]);
        }
    }
    let sol = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::NoConvergence { what: "bordered collocation system".into(), last: vec![] })?;
    let values: Vec<f64> = sol.iter().take(n + 1).copied().collect();
    let profile = Profile::from_values(op.band, values)?;
    let multiplier = constrained.then(|| sol[n + 1]);
    let t = multiplier.unwrap_or(0.0);
    let residual = {
        let f = |x: f64| profile.eval_or_zero(x);
        let target = |x: f64| sample(data.rhs, x) - t * sample(data.fredholm_direction, x);
        op.residual_on(&f, &target, (2 * n).min(2048))
    };
    let orthogonality_defect = match data.orthogonality {
        Some(o) => Some(profile.inner(&o.resample(n)?)?),
        None => None,
    };
    Ok(BvpSolution { profile, multiplier, residual, orthogonality_defect })
}

/// Solves the boundary value problem, checking solvability first.
pub fn bvp_solve(op: &RadialOperator, data: &BvpData<'_>, cfg: SolverConfig) -> Result<BvpSolution> {
    if data.orthogonality.is_none() && data.fredholm_direction.is_none() {
        let lam = nearest_eigenvalue(op, cfg.min_order.clamp(24, 64))?;
        if (lam - op.shift).abs() <= 1e-8 * op.shift.abs().max(1.0) {
            return Err(Error::Solvability { eigenvalue: lam, shift: op.shift });
        }
    }
    let mut n = cfg.min_order;
    let mut prev: Option<BvpSolution> = None;
    while n <= cfg.max_order {
        let cur = bvp_solve_at(op, data, n)?;
        if let Some(p) = &prev {
            let scale = p.profile.values.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
            let diff = p
                .profile
                .nodes
                .iter()
                .zip(&p.profile.values)
                .map(|(&t, v)| (cur.profile.eval_or_zero(t) - v).abs())
                .fold(0.0, f64::max);
            let mult_diff = match (p.multiplier, cur.multiplier) {
                (Some(a), Some(b)) => (a - b).abs() / a.abs().max(1.0),
                _ => 0.0,
            };
            if diff <= cfg.tol * scale && mult_diff <= cfg.tol {
                return Ok(cur);
            }
        }
        prev = Some(cur);
        n *= 2;
    }
    Err(Error::NoConvergence {
        what: "boundary value problem".into(),
        last: prev.and_then(|p| p.multiplier).into_iter().collect(),
    })
}

/// Eigenvalue of `L` closest to the operator's shift.
fn nearest_eigenvalue(op: &RadialOperator, n: usize) -> Result<f64> {
    let m = op.interior(n);
    let inv = m
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::NoConvergence { what: "collocation inverse".into(), last: vec![] })?;
    inv.complex_eigenvalues()
        .iter()
        .filter(|z| z.re != 0.0)
        .map(|z| 1.0 / z.re)
        .min_by(|a, b| (a - op.shift).abs().total_cmp(&(b - op.shift).abs()))
        .ok_or_else(|| Error::NoConvergence { what: "spectrum".into(), last: vec![] })
}

/// First Dirichlet eigenvalue by shooting from `theta_lo` and bisecting on the
/// eigenvalue until the first zero of the solution reaches `theta_hi`.
pub fn shoot_lambda1(band: &Band, m: f64) -> Result<f64> {
    if band.is_degenerate() {
        return Err(Error::Domain("shooting on a degenerate band".into()));
    }
    let p = band.d.f() - 2.0;
    let tol = Tolerance { rtol: 1e-13, atol: 1e-15 };
    let crosses = |lambda: f64| -> Result<bool> {
        let rhs = move |t: f64, y: &[f64]| {
            let s = t.sin();
            vec![y[1], -p * t.cos() / s * y[1] + (m / (s * s) - lambda) * y[0]]
        };
        let mut hit = false;
        let (_, y) = ode::integrate(rhs, band.theta_lo, &[0.0, 1.0], band.theta_hi, tol, |_, y| {
            if y[0] < 0.0 {
                hit = true;
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })?;
        Ok(hit || y[0] <= 0.0)
    };
    let mut lo = 0.0;
    let min_sin = band.theta_lo.sin().min(band.theta_hi.sin());
    let mut hi = (std::f64::consts::PI / band.width()).powi(2) + m / (min_sin * min_sin) + 1.0;
    let mut guard = 0;
    while !crosses(hi)? {
        lo = hi;
        hi *= 2.0;
        guard += 1;
        if guard > 60 {
            return Err(Error::Bracket(format!("no zero up to eigenvalue {hi}")));
        }
    }
    if crosses(lo)? {
        return Err(Error::Bracket(format!("solution vanishes inside the band at {lo}")));
    }
    while hi - lo > 1e-14 * hi {
        let mid = 0.5 * (lo + hi);
        if crosses(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Dim;
    use std::f64::consts::PI;

    fn op(d: u32, lo: f64, hi: f64, m: f64) -> RadialOperator {
        RadialOperator::new(Band::new(Dim::new(d).unwrap(), lo, hi).unwrap(), m).unwrap()
    }

    #[test]
    fn d3_band_matches_shooting() {
        let o = op(3, 0.6, PI - 0.6, 0.0);
        let col = eigen_solve(&o, 1, SolverConfig::default()).unwrap()[0].eigenvalue;
        let shot = shoot_lambda1(&o.band, 0.0).unwrap();
        assert!(((col - shot) / shot).abs() < 1e-9, "{col} vs {shot}");
    }

    #[test]
    fn punctured_hemisphere_sits_above_two() {
        // the hemisphere of S^2 has first Dirichlet eigenvalue 2 (cos theta)
        let o = op(3, 0.05, PI / 2.0, 0.0);
        let lam = eigen_solve(&o, 1, SolverConfig::default()).unwrap()[0].eigenvalue;
        let shot = shoot_lambda1(&o.band, 0.0).unwrap();
        assert!(lam > 2.0);
        assert!(((lam - shot) / shot).abs() < 1e-9, "{lam} vs {shot}");
    }

    #[test]
    fn increasing_in_m() {
        let mut last = 0.0;
        for m in [0.0, 1.0, 5.0, 20.0, 100.0, 1000.0] {
            let lam = first_eigenpair(&op(7, 1.0, 2.1, m), 48).unwrap().eigenvalue;
            assert!(lam > last);
            last = lam;
        }
    }

    #[test]
    fn thin_band_flat_asymptotics() {
        let w = 1e-3;
        let o = op(6, 1.2, 1.2 + w, 0.0);
        let lam = first_eigenpair(&o, 32).unwrap().eigenvalue;
        let flat = (PI / w).powi(2);
        assert!(((lam - flat) / flat).abs() < 1e-5);
    }

    #[test]
    fn full_sphere_limit() {
        let mut last = f64::INFINITY;
        for cap in [0.4, 0.2, 0.1, 0.05] {
            let o = op(4, cap, PI - cap, 0.0);
            let lam = eigen_solve(&o, 1, SolverConfig::default()).unwrap()[0].eigenvalue;
            assert!(lam > 0.0 && lam < last, "{lam}");
            last = lam;
        }
        assert!(last < 0.5, "{last}");
    }

    #[test]
    fn parity_of_first_profiles() {
        let o = op(7, PI / 2.0 - 0.6, PI / 2.0 + 0.6, 0.0);
        let pairs = eigen_solve(&o, 2, SolverConfig::default()).unwrap();
        let (a, b) = (&pairs[0].profile, &pairs[1].profile);
        for s in [0.1, 0.3, 0.55] {
            let l = PI / 2.0 - s;
            let r = PI / 2.0 + s;
            assert!((a.eval(l).unwrap() - a.eval(r).unwrap()).abs() < 1e-10);
            assert!((b.eval(l).unwrap() + b.eval(r).unwrap()).abs() < 1e-10);
        }
        assert!((a.norm_sq() - 1.0).abs() < 1e-12);
        assert!(a.values[1..a.order()].iter().all(|v| *v > 0.0));
        assert!(pairs[1].eigenvalue > pairs[0].eigenvalue);
    }

    #[test]
    fn bvp_zero_data_gives_zero() {
        let o = op(7, PI / 2.0 - 0.54, PI / 2.0 + 0.54, 5.0).with_shift(6.0);
        let sol = bvp_solve(&o, &BvpData::default(), SolverConfig::default()).unwrap();
        assert!(sol.profile.values.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn bvp_recovers_smooth_solution() {
        let o = op(5, 0.7, 2.2, 2.0).with_shift(1.5);
        let exact = |t: f64| t.cos() * t.cos() + t;
        let band = o.band;
        let rhs = Profile::from_fn(band, 128, |t| {
            let (s, c) = (t.sin(), t.cos());
            let f = exact(t);
            let df = -2.0 * c * s + 1.0;
            let d2f = -2.0 * (c * c - s * s);
            -d2f - 3.0 * c / s * df + 2.0 / (s * s) * f - 1.5 * f
        })
        .unwrap();
        let data = BvpData { rhs: Some(&rhs), boundary: (exact(0.7), exact(2.2)), ..Default::default() };
        let sol = bvp_solve(&o, &data, SolverConfig::default()).unwrap();
        for t in [0.8, 1.3, 2.0] {
            assert!((sol.profile.eval(t).unwrap() - exact(t)).abs() < 1e-10);
        }
        assert!(sol.residual < 1e-8);
    }

    #[test]
    fn singular_bvp_is_rejected() {
        let o = op(7, 0.9, 2.0, 0.0);
        let lam = eigen_solve(&o, 1, SolverConfig::default()).unwrap()[0].eigenvalue;
        let o = o.with_shift(lam);
        let data = BvpData { boundary: (1.0, 1.0), ..Default::default() };
        match bvp_solve(&o, &data, SolverConfig::default()) {
            Err(Error::Solvability { eigenvalue, .. }) => assert!((eigenvalue - lam).abs() < 1e-8),
            other => panic!("expected solvability error, got {other:?}"),
        }
    }

    #[test]
    fn bvp_is_linear() {
        let o = op(6, 0.8, 2.3, 4.0).with_shift(5.0);
        let r1 = Profile::from_fn(o.band, 64, |t| t.sin()).unwrap();
        let r2 = Profile::from_fn(o.band, 64, |t| t * t).unwrap();
        let sum = r1.add_scaled(&r2, 1.0).unwrap();
        let cfg = SolverConfig::default();
        let s1 = bvp_solve(&o, &BvpData { rhs: Some(&r1), boundary: (1.0, -2.0), ..Default::default() }, cfg).unwrap();
        let s2 = bvp_solve(&o, &BvpData { rhs: Some(&r2), boundary: (0.5, 3.0), ..Default::default() }, cfg).unwrap();
        let s = bvp_solve(&o, &BvpData { rhs: Some(&sum), boundary: (1.5, 1.0), ..Default::default() }, cfg).unwrap();
        for t in [0.9, 1.5, 2.2] {
            let lhs = s.profile.eval(t).unwrap();
            let rhs = s1.profile.eval(t).unwrap() + s2.profile.eval(t).unwrap();
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn half_constraint_is_a_precondition_error() {
        let o = op(6, 0.8, 2.3, 0.0);
        let p = Profile::from_fn(o.band, 32, |t| t).unwrap();
        let data = BvpData { orthogonality: Some(&p), ..Default::default() };
        assert!(matches!(bvp_solve_at(&o, &data, 32), Err(Error::Precondition(_))));
    }
}
