//! Second variation of `F = kappa0^2 lambda + m` at the cone.
//!
//! Boundary perturbations are expanded in `zeta^±_l = ∓psi` (sign per circle),
//! where `psi` is a harmonic of degree `l` on `S^{d-2}`, unit in `L^2`. Each
//! mode has a separated extension `u = f(theta) psi` with `f = 1` on both
//! circles (even) or `f(theta_lo) = -1`, `f(theta_hi) = 1` (odd), solving
//! `(L - (d-1)) f = 0` on the band. Both `l = 0` modes carry the orthogonality
//! constraint to the cone profile; the even one also a Fredholm multiplier.

use crate::cone::{lambda1_fast, ConeModel};
use crate::error::{Error, Result};
use crate::geometry::band_measure;
use crate::harmonics::{self, Zonal};
use crate::profile::Profile;
use crate::sturm::{self, BvpData, BvpSolution, RadialOperator, SolverConfig};
use serde::{Deserialize, Serialize};
use std::fmt;

pub const KERNEL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn symbol(self) -> char {
        match self {
            Parity::Even => '+',
            Parity::Odd => '-',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeId {
    pub ell: u32,
    pub parity: Parity,
}

impl ModeId {
    pub fn new(ell: u32, parity: Parity) -> ModeId {
        ModeId { ell, parity }
    }

    pub fn even(ell: u32) -> ModeId {
        ModeId::new(ell, Parity::Even)
    }

    pub fn odd(ell: u32) -> ModeId {
        ModeId::new(ell, Parity::Odd)
    }

    /// `l (l + d - 3)`.
    pub fn azimuthal_eigenvalue(&self, cone: &ConeModel) -> f64 {
        harmonics::eigenvalue(cone.d.get() - 2, self.ell)
    }

    pub fn multiplicity(&self, cone: &ConeModel) -> u64 {
        harmonics::multiplicity(cone.d.get() - 2, self.ell)
    }

    /// Boundary values of the extension on `(theta_lo, theta_hi)`.
    pub fn extension_data(&self) -> (f64, f64) {
        match self.parity {
            Parity::Even => (1.0, 1.0),
            Parity::Odd => (-1.0, 1.0),
        }
    }

    /// Coefficient of `psi` in `zeta` on `(theta_lo, theta_hi)`.
    pub fn boundary_sign(&self) -> (f64, f64) {
        let (lo, hi) = self.extension_data();
        (-lo, -hi)
    }
}

impl fmt::Display for ModeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "l={}{}", self.ell, self.parity.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Negative,
    Kernel,
    Positive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedForm {
    pub tag: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondVarEntry {
    pub mode: ModeId,
    pub multiplicity: u64,
    /// Eigenvalue of the second variation from the boundary flux.
    pub value: f64,
    /// Same eigenvalue from the interior energy `2 J(f) - 4 (d-2) cos^{d-2} tan`.
    pub value_energy: f64,
    /// Scalar by which the Dirichlet-to-Neumann map acts on the mode.
    pub dtn: f64,
    pub classification: Classification,
    pub closed_form: Option<ClosedForm>,
    pub residual: f64,
    /// Fredholm multiplier of the constrained problems (`l = 0`).
    pub multiplier: Option<f64>,
    /// `int_{dOmega} zeta`.
    pub boundary_integral: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationReport {
    pub delta_m: f64,
    pub delta_lambda: f64,
    pub delta_f: f64,
}

/// `int_{S^{d-2}} psi` for the zonal representative of the mode.
fn harmonic_mean(cone: &ConeModel, ell: u32) -> Result<f64> {
    let n = cone.d.get() - 2;
    let z = Zonal::new(n, ell)?;
    harmonics::zonal_integral(n, |x| z.eval(x))
}

/// `int_{dOmega} zeta` for the mode, with the circle measures included.
pub fn boundary_integral(cone: &ConeModel, mode: ModeId) -> Result<f64> {
    let band = cone.band();
    let (lo, hi) = mode.boundary_sign();
    let mean = harmonic_mean(cone, mode.ell)?;
    Ok((lo * band.weight(band.theta_lo) + hi * band.weight(band.theta_hi)) * mean)
}

/// First variations of measure, eigenvalue and `F` in the direction of the mode.
///
/// `delta_lambda` uses the Hadamard formula `-int (d_nu phi0)^2 zeta` with the
/// computed boundary slopes of the profile.
pub fn first_variations(cone: &ConeModel, mode: ModeId) -> Result<VariationReport> {
    let band = cone.band();
    let (sign_lo, sign_hi) = mode.boundary_sign();
    let mean = harmonic_mean(cone, mode.ell)?;
    let (slope_lo, slope_hi) = cone.boundary_slopes();
    let delta_m = boundary_integral(cone, mode)?;
    let delta_lambda = -mean
        * (sign_lo * slope_lo * slope_lo * band.weight(band.theta_lo)
            + sign_hi * slope_hi * slope_hi * band.weight(band.theta_hi));
    Ok(VariationReport { delta_m, delta_lambda, delta_f: cone.kappa0_sq() * delta_lambda + delta_m })
}

/// Radial profile of the cone's trace `b = kappa0 phi0`.
pub fn trace_profile(cone: &ConeModel) -> Profile {
    cone.profile0.scaled(cone.kappa0)
}

/// Separated extension of the mode.
pub fn solve_extension(cone: &ConeModel, mode: ModeId) -> Result<BvpSolution> {
    let op = RadialOperator::new(cone.band(), mode.azimuthal_eigenvalue(cone))?.with_shift(cone.d.f() - 1.0);
    let b = trace_profile(cone);
    let constrained = mode.ell == 0;
    let data = BvpData {
        rhs: None,
        boundary: mode.extension_data(),
        orthogonality: constrained.then_some(&cone.profile0),
        fredholm_direction: constrained.then_some(&b),
    };
    sturm::bvp_solve(&op, &data, SolverConfig::default())
}

/// `int (f'^2 + m f^2 / sin^2 - (d-1) f^2) sin^{d-2}` over the band.
pub fn radial_energy(f: &Profile, azimuthal: f64) -> f64 {
    let g = f.band.d.f() - 1.0;
    let df = f.derivative_values();
    f.weighted_quadrature()
        .iter()
        .zip(f.nodes.iter().zip(df.iter().zip(&f.values)))
        .map(|(w, (t, (dv, v)))| w * (dv * dv + azimuthal * v * v / t.sin().powi(2) - g * v * v))
        .sum()
}

/// Mixed radial energy of two profiles on the same grid.
pub fn radial_cross_energy(f: &Profile, g: &Profile, azimuthal: f64) -> Result<f64> {
    let g = g.resample(f.order())?;
    let shift = f.band.d.f() - 1.0;
    let (df, dg) = (f.derivative_values(), g.derivative_values());
    Ok(f.weighted_quadrature()
        .iter()
        .enumerate()
        .map(|(k, w)| {
            let (a, b) = (f.values[k], g.values[k]);
            w * (df[k] * dg[k] + azimuthal * a * b / f.nodes[k].sin().powi(2) - shift * a * b)
        })
        .sum())
}

/// `sin^{d-2} f f'` at `theta_hi` minus the same at `theta_lo`.
pub fn boundary_flux(f: &Profile) -> f64 {
    let band = f.band;
    let df = f.derivative_values();
    let n = f.order();
    band.weight(band.theta_hi) * f.values[n] * df[n] - band.weight(band.theta_lo) * f.values[0] * df[0]
}

/// Scale `4 cos^{d-2}(theta0) tan(theta0)` used to normalize eigenvalues.
pub fn eigen_scale(cone: &ConeModel) -> f64 {
    4.0 * cone.boundary_weight() * cone.theta0.tan()
}

/// Closed form of the eigenvalue, where one is known.
pub fn closed_form(cone: &ConeModel, mode: ModeId) -> Option<ClosedForm> {
    let (d, t) = (cone.d.f(), cone.theta0);
    let w4 = 4.0 * cone.boundary_weight();
    let (tag, value) = match (mode.ell, mode.parity) {
        (0, Parity::Odd) => ("4cos^(d-2)(cot - (d-2)tan)", w4 * (1.0 / t.tan() - (d - 2.0) * t.tan())),
        (1, Parity::Even) => ("-4(d-1)cos^(d-2)tan", -(d - 1.0) * w4 * t.tan()),
        (1, Parity::Odd) => ("0 (rotations)", 0.0),
        (2, Parity::Even) => ("4cos^(d-2)tan", w4 * t.tan()),
        _ => return None,
    };
    Some(ClosedForm { tag: tag.into(), value })
}

pub fn classify_value(cone: &ConeModel, value: f64, kernel_tol: f64) -> Classification {
    let normalized = value / eigen_scale(cone);
    if normalized.abs() < kernel_tol {
        Classification::Kernel
    } else if normalized < 0.0 {
        Classification::Negative
    } else {
        Classification::Positive
    }
}

/// Scalar action of the Dirichlet-to-Neumann map on the mode.
pub fn dtn_mode(cone: &ConeModel, mode: ModeId) -> Result<f64> {
    let sol = solve_extension(cone, mode)?;
    Ok(boundary_flux(&sol.profile) / (2.0 * cone.boundary_weight()))
}

pub fn second_var_eigenvalue(cone: &ConeModel, mode: ModeId) -> Result<SecondVarEntry> {
    second_var_eigenvalue_with(cone, mode, KERNEL_TOL)
}

pub fn second_var_eigenvalue_with(cone: &ConeModel, mode: ModeId, kernel_tol: f64) -> Result<SecondVarEntry> {
    let sol = solve_extension(cone, mode)?;
    let azimuthal = mode.azimuthal_eigenvalue(cone);
    let weight = cone.boundary_weight();
    let curvature_term = 4.0 * (cone.d.f() - 2.0) * weight * cone.theta0.tan();
    let flux = boundary_flux(&sol.profile);
    let value = 2.0 * flux - curvature_term;
    let value_energy = 2.0 * radial_energy(&sol.profile, azimuthal) - curvature_term;
    Ok(SecondVarEntry {
        mode,
        multiplicity: mode.multiplicity(cone),
        value,
        value_energy,
        dtn: flux / (2.0 * weight),
        classification: classify_value(cone, value, kernel_tol),
        closed_form: closed_form(cone, mode),
        residual: sol.residual,
        multiplier: sol.multiplier,
        boundary_integral: boundary_integral(cone, mode)?,
    })
}

/// Entries for every `(l <= ell_max, ±)`, sorted by value.
pub fn spectrum(cone: &ConeModel, ell_max: u32) -> Result<Vec<SecondVarEntry>> {
    if ell_max < 2 {
        return Err(Error::Domain(format!("ell_max must be at least 2, got {ell_max}")));
    }
    let mut out = Vec::with_capacity(2 * ell_max as usize + 2);
    for ell in 0..=ell_max {
        for parity in [Parity::Even, Parity::Odd] {
            out.push(second_var_eigenvalue(cone, ModeId::new(ell, parity))?);
        }
    }
    out.sort_by(|a, b| a.value.total_cmp(&b.value));
    Ok(out)
}

/// Count of entries in a class, with multiplicity.
pub fn count(entries: &[SecondVarEntry], class: Classification) -> u64 {
    entries.iter().filter(|e| e.classification == class).map(|e| e.multiplicity).sum()
}

/// Mixed second variation between two modes (zonal representatives).
pub fn mixed_form(cone: &ConeModel, a: ModeId, b: ModeId) -> Result<f64> {
    let n = cone.d.get() - 2;
    let (za, zb) = (Zonal::new(n, a.ell)?, Zonal::new(n, b.ell)?);
    let angular = harmonics::zonal_integral(n, |x| za.eval(x) * zb.eval(x))?;
    let fa = solve_extension(cone, a)?.profile;
    let fb = solve_extension(cone, b)?.profile;
    let radial = radial_cross_energy(&fa, &fb, b.azimuthal_eigenvalue(cone))?;
    let band = cone.band();
    let (sa, sb) = (a.boundary_sign(), b.boundary_sign());
    let zeta_product = (sa.0 * sb.0 * band.weight(band.theta_lo) + sa.1 * sb.1 * band.weight(band.theta_hi)) * angular;
    Ok(2.0 * angular * radial - 2.0 * (cone.d.f() - 2.0) * cone.theta0.tan() * zeta_product)
}

/// `eta = perim / (kappa0^2 sqrt(H^{d-2}(S^{d-2})))`.
pub fn eta(cone: &ConeModel) -> f64 {
    cone.perim / (cone.kappa0_sq() * cone.area_dm2().sqrt())
}

/// Lower bound `(1/A)((4d-1)c^2 - (2d+1)m0) - 4(d-2) tan cos^{d-2}` for the
/// dilation eigenvalue, from the test function `1 + c phi0`.
pub fn dilation_lower_bound(cone: &ConeModel) -> f64 {
    let d = cone.d.f();
    let c = cone.c_int;
    ((4.0 * d - 1.0) * c * c - (2.0 * d + 1.0) * cone.m0) / cone.area_dm2()
        - 4.0 * (d - 2.0) * cone.theta0.tan() * cone.boundary_weight()
}

/// Hessian of `G(p, s) = (kappa0^2 + s^3)(lambda - (d-1)) + m - m0` along the
/// band deformation `p zeta_1^+`, by Richardson-extrapolated differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DilationHessian {
    pub pp: f64,
    pub ps: f64,
    pub ss: f64,
}

pub fn dilation_hessian(cone: &ConeModel) -> Result<DilationHessian> {
    let zeta = -1.0 / cone.area_dm2().sqrt();
    let target = cone.d.f() - 1.0;
    let g = |p: f64, s: f64| -> Result<f64> {
        let band = cone.band().shifted(p * zeta, p * zeta)?;
        let lambda = lambda1_fast(&band)?;
        Ok((cone.kappa0_sq() + s * s * s) * (lambda - target) + band_measure(&band)? - cone.m0)
    };
    let second =
        |h: f64, f: &dyn Fn(f64) -> Result<f64>| -> Result<f64> { Ok((f(h)? - 2.0 * f(0.0)? + f(-h)?) / (h * h)) };
    let pp_at = |h: f64| second(h, &|x| g(x, 0.0));
    let ss_at = |h: f64| second(h, &|x| g(0.0, x));
    let ps_at = |h: f64| -> Result<f64> { Ok((g(h, h)? - g(h, -h)? - g(-h, h)? + g(-h, -h)?) / (4.0 * h * h)) };
    let rich = |f: &dyn Fn(f64) -> Result<f64>, h: f64| -> Result<f64> {
        let (coarse, fine) = (f(2.0 * h)?, f(h)?);
        Ok((4.0 * fine - coarse) / 3.0)
    };
    let h = 2e-3;
    Ok(DilationHessian { pp: rich(&pp_at, h)?, ps: rich(&ps_at, h)?, ss: rich(&ss_at, h)? })
}

/// Growth of the first eigenfunction under band deformations: the ratio
/// `||phi(p) - phi0|| / |p|` for shrinking `p`, which settles to a constant.
pub fn eigenfunction_sensitivity(cone: &ConeModel, mode: ModeId, steps: &[f64]) -> Result<Vec<(f64, f64)>> {
    let (lo, hi) = mode.boundary_sign();
    let base = cone.band();
    let area = cone.area_dm2();
    steps
        .iter()
        .map(|&p| {
            let band = base.shifted(p * lo, p * hi)?;
            let op = RadialOperator::new(band, 0.0)?;
            let moved = sturm::first_eigenpair(&op, cone.profile0.order())?.profile;
            let (a, b) = (band.theta_lo.min(base.theta_lo), band.theta_hi.max(base.theta_hi));
            let gap = |t: f64| moved.eval_or_zero(t) / area.sqrt() - cone.profile0.eval_or_zero(t);
            let sq = crate::quadrature::integrate(|t| gap(t).powi(2) * base.weight(t), a, b, 1e-10)?;
            Ok((p, (area * sq.value).sqrt() / p.abs()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::build_cone;
    use crate::geometry::Dim;
    use std::sync::OnceLock;

    fn cone7() -> &'static ConeModel {
        static CONE: OnceLock<ConeModel> = OnceLock::new();
        CONE.get_or_init(|| build_cone(Dim::new(7).unwrap()).unwrap())
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1.0)
    }

    #[test]
    fn closed_forms_reproduced() {
        let cone = cone7();
        for mode in [ModeId::odd(0), ModeId::even(1), ModeId::odd(1), ModeId::even(2)] {
            let e = second_var_eigenvalue(cone, mode).unwrap();
            let cf = e.closed_form.clone().unwrap();
            assert!(rel(e.value, cf.value) < 1e-8, "{mode}: {} vs {}", e.value, cf.value);
            assert!(rel(e.value_energy, e.value) < 1e-8, "{mode}");
        }
    }

    #[test]
    fn dtn_scalars() {
        let cone = cone7();
        let t = cone.theta0.tan();
        assert!(rel(dtn_mode(cone, ModeId::even(1)).unwrap(), -t) < 1e-9);
        assert!(rel(dtn_mode(cone, ModeId::odd(1)).unwrap(), 5.0 * t) < 1e-9);
        assert!(rel(dtn_mode(cone, ModeId::odd(0)).unwrap(), 1.0 / t) < 1e-8);
    }

    #[test]
    fn rotation_extension_is_the_commutator() {
        let cone = cone7();
        let f = solve_extension(cone, ModeId::odd(1)).unwrap().profile;
        let dphi = cone.profile0.derivative();
        for k in 1..12 {
            let theta = cone.band().theta_lo + cone.band().width() * k as f64 / 12.0;
            let expected = -cone.kappa0 * dphi.eval(theta).unwrap();
            assert!((f.eval(theta).unwrap() - expected).abs() < 1e-8);
        }
    }

    #[test]
    fn dilation_multiplier_is_eta() {
        let cone = cone7();
        let sol = solve_extension(cone, ModeId::even(0)).unwrap();
        let t = sol.multiplier.unwrap() / cone.area_dm2().sqrt();
        assert!(rel(t, eta(cone)) < 1e-8, "{t} vs {}", eta(cone));
        assert!(sol.orthogonality_defect.unwrap().abs() < 1e-10);
        let dense = sturm::bvp_solve_at(
            &RadialOperator::new(cone.band(), 0.0).unwrap().with_shift(6.0),
            &BvpData {
                rhs: None,
                boundary: (1.0, 1.0),
                orthogonality: Some(&cone.profile0),
                fredholm_direction: Some(&trace_profile(cone)),
            },
            4 * sol.profile.order(),
        )
        .unwrap();
        assert!(rel(dense.multiplier.unwrap(), sol.multiplier.unwrap()) < 1e-7);
    }

    #[test]
    fn dilation_needs_the_constraint() {
        let cone = cone7();
        let op = RadialOperator::new(cone.band(), 0.0).unwrap().with_shift(6.0);
        let err =
            sturm::bvp_solve(&op, &BvpData { boundary: (1.0, 1.0), ..Default::default() }, SolverConfig::default())
                .unwrap_err();
        assert!(matches!(err, Error::Solvability { .. }));
    }

    #[test]
    fn first_variations_balance() {
        let cone = cone7();
        let v = first_variations(cone, ModeId::even(0)).unwrap();
        assert!(rel(v.delta_m, -cone.perim / cone.area_dm2().sqrt()) < 1e-12);
        assert!(v.delta_f.abs() < 1e-9);
        for mode in [ModeId::odd(0), ModeId::even(1), ModeId::odd(3)] {
            let v = first_variations(cone, mode).unwrap();
            assert!(v.delta_m.abs() < 1e-12 && v.delta_f.abs() < 1e-12);
        }
    }

    #[test]
    fn hadamard_matches_finite_differences() {
        let cone = cone7();
        let v = first_variations(cone, ModeId::even(0)).unwrap();
        let zeta = -1.0 / cone.area_dm2().sqrt();
        let lam = |p: f64| lambda1_fast(&cone.band().shifted(p * zeta, p * zeta).unwrap()).unwrap();
        let h = 1e-3;
        let fd = (8.0 * (lam(h) - lam(-h)) - (lam(2.0 * h) - lam(-2.0 * h))) / (12.0 * h);
        assert!(rel(fd, v.delta_lambda) < 1e-7, "{fd} vs {}", v.delta_lambda);
    }

    #[test]
    fn index_and_kernel_d7() {
        let cone = cone7();
        let spec = spectrum(cone, 4).unwrap();
        assert_eq!(count(&spec, Classification::Negative), 7);
        assert_eq!(count(&spec, Classification::Kernel), 6);
        let kernel: Vec<_> = spec.iter().filter(|e| e.classification == Classification::Kernel).collect();
        assert_eq!(kernel.len(), 1);
        assert_eq!(kernel[0].mode, ModeId::odd(1));
        let dilation = spec.iter().find(|e| e.mode == ModeId::even(0)).unwrap();
        assert_eq!(dilation.classification, Classification::Positive);
        assert!(dilation_lower_bound(cone) <= dilation.value + 1e-6);
        for parity in [Parity::Even, Parity::Odd] {
            let mut by_ell: Vec<_> = spec.iter().filter(|e| e.mode.parity == parity && e.mode.ell >= 1).collect();
            by_ell.sort_by_key(|e| e.mode.ell);
            assert!(by_ell.windows(2).all(|w| w[1].value > w[0].value));
        }
    }

    #[test]
    fn modes_are_orthogonal() {
        let cone = cone7();
        let pairs = [
            (ModeId::even(1), ModeId::odd(1)),
            (ModeId::even(0), ModeId::odd(0)),
            (ModeId::even(1), ModeId::even(2)),
            (ModeId::odd(0), ModeId::odd(2)),
        ];
        for (a, b) in pairs {
            assert!(mixed_form(cone, a, b).unwrap().abs() < 1e-8, "{a} {b}");
        }
        let diag = mixed_form(cone, ModeId::even(2), ModeId::even(2)).unwrap();
        let e = second_var_eigenvalue(cone, ModeId::even(2)).unwrap();
        assert!(rel(diag, e.value) < 1e-8);
    }

    #[test]
    fn dilation_hessian_matches_the_boundary_problem() {
        let cone = cone7();
        let h = dilation_hessian(cone).unwrap();
        let e = second_var_eigenvalue(cone, ModeId::even(0)).unwrap();
        assert!(rel(h.pp, e.value) < 1e-5, "{} vs {}", h.pp, e.value);
        assert!(h.ps.abs() < 1e-8 && h.ss.abs() < 1e-8, "{h:?}");
    }

    #[test]
    fn eigenfunction_moves_lipschitz() {
        let cone = cone7();
        let ratios = eigenfunction_sensitivity(cone, ModeId::even(0), &[4e-3, 2e-3, 1e-3]).unwrap();
        let (first, last) = (ratios[0].1, ratios[2].1);
        assert!(last.is_finite() && last > 0.0);
        assert!(rel(first, last) < 0.05, "{ratios:?}");
    }

    #[test]
    fn small_ell_max_rejected() {
        assert!(spectrum(cone7(), 1).is_err());
    }
}
