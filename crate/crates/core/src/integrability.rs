//! Index, kernel and integrability certificates for the cones.
//!
//! [`verify_d7`] replays the printed seven-dimensional inequality chain with
//! outward rounding at the fourth decimal: upper bounds are rounded up and
//! must not exceed the printed constant, lower bounds are rounded down and
//! must not fall below it.

use crate::cone::{build_cone, ConeModel};
use crate::error::{Error, Result};
use crate::geometry::{sphere_area, Dim};
use crate::legendre;
use crate::quadrature::composite_gl;
use crate::secondvar::{self, count, dilation_lower_bound, spectrum, Classification, ModeId, Parity, SecondVarEntry};
use crate::sturm::{self, RadialOperator, SolverConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparison {
    Less,
    Greater,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rounding {
    Up,
    Down,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStep {
    pub name: String,
    pub comparison: Comparison,
    pub paper_value: f64,
    pub computed_value: f64,
    pub rounded_value: f64,
    pub rounding: Rounding,
    pub pass: bool,
}

impl ChainStep {
    fn new(name: &str, computed: f64, comparison: Comparison, bound: f64, rounding: Rounding) -> ChainStep {
        let rounded = match rounding {
            Rounding::Up => (computed * 1e4).ceil() / 1e4,
            Rounding::Down => (computed * 1e4).floor() / 1e4,
            Rounding::Exact => computed,
        };
        let strict = match comparison {
            Comparison::Less => computed < bound,
            Comparison::Greater => computed > bound,
        };
        let outward = match rounding {
            Rounding::Up => rounded <= bound,
            Rounding::Down => rounded >= bound,
            Rounding::Exact => true,
        };
        ChainStep {
            name: name.into(),
            comparison,
            paper_value: bound,
            computed_value: computed,
            rounded_value: rounded,
            rounding,
            pass: strict && outward,
        }
    }
}

/// The printed final product and its recomputation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductNote {
    pub literal: String,
    pub literal_product: f64,
    pub literal_pass: bool,
    pub recomputed_square: f64,
    pub recomputed_product: f64,
    pub quadrature_square: f64,
    pub quadrature_product: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundChain {
    pub steps: Vec<ChainStep>,
    pub product_note: ProductNote,
    /// `18.7170 - 18.5359`, the certified lower bound.
    pub chain_margin: f64,
    /// Dilation eigenvalue from the constrained boundary value problem.
    pub bvp_value: f64,
    pub passed: bool,
    pub first_failure: Option<String>,
}

impl BoundChain {
    pub fn step(&self, name: &str) -> Option<&ChainStep> {
        self.steps.iter().find(|s| s.name == name)
    }
}

fn gl_integral<F: Fn(f64) -> Result<f64>>(f: F, a: f64, b: f64, panels: usize) -> Result<f64> {
    let breaks: Vec<f64> = (1..panels).map(|k| a + (b - a) * k as f64 / panels as f64).collect();
    composite_gl(a, b, &breaks, 20).into_iter().map(|(x, w)| f(x).map(|v| w * v)).sum()
}

pub const D7_PANELS: usize = 8;

pub fn verify_d7() -> Result<BoundChain> {
    verify_d7_at(D7_PANELS)
}

/// The chain evaluated with `panels` Gauss-Legendre panels per integral.
pub fn verify_d7_at(panels: usize) -> Result<BoundChain> {
    let d = Dim::cone(7)?;
    let cone = build_cone(d)?;
    let area = cone.area_dm2();
    let theta0 = cone.theta0;
    let q = |t: f64| legendre::legendre_q(3.0, 2.0, t);
    let cos5 = |t: f64| -> Result<f64> { Ok(t.cos().powi(5)) };
    let curvature = |lo: f64, hi: f64| 20.0 * lo.cos().powi(5) * hi.tan();

    let cos5_literal = gl_integral(cos5, -0.5438, 0.5438, panels)?;
    let curv_true = curvature(theta0, theta0);
    let curv_literal = curvature(0.5437, 0.5438);
    let q_norm_true = gl_integral(|t| q(t).map(|v| v * v), -theta0.sin(), theta0.sin(), panels)?;
    let q_norm_literal = gl_integral(|t| q(t).map(|v| v * v), -0.5174, 0.5174, panels)?;
    let (c_theta, _) = cone.legendre_constant()?;
    let c_scaled = c_theta.abs() * area.sqrt();
    let phi0_literal =
        0.1699 * gl_integral(|t| q(t).map(|v| (1.0 - t * t).powi(2) * v), -0.5173, 0.5173, panels)?.abs();
    let phi0_scaled = cone.c_int / area.sqrt();
    let bvp_value = secondvar::second_var_eigenvalue(&cone, ModeId::even(0))?.value;

    use Comparison::{Greater, Less};
    use Rounding::{Down, Exact, Up};
    let recomputed_square = 0.8326f64 * 0.8326;
    let steps = vec![
        ChainStep::new("measure ratio below cos^5 integral at .5438", cone.m0 / area, Less, cos5_literal, Exact),
        ChainStep::new("int cos^5 over [-.5438,.5438] < .8650", cos5_literal, Less, 0.8650, Up),
        ChainStep::new("20 cos^5 tan at theta0 below the .5437/.5438 evaluation", curv_true, Less, curv_literal, Exact),
        ChainStep::new("20 cos^5(.5437) tan(.5438) < 5.5509", curv_literal, Less, 5.5509, Up),
        ChainStep::new("15 m0/A + 20 cos^5 tan < 18.5359", 15.0 * cone.m0 / area + curv_true, Less, 18.5359, Up),
        ChainStep::new("int Q^2 over the band below int over [-.5174,.5174]", q_norm_true, Less, q_norm_literal, Exact),
        ChainStep::new("int Q_3^2(t)^2 over [-.5174,.5174] < 34.6188", q_norm_literal, Less, 34.6188, Up),
        ChainStep::new("c_theta sqrt(A) > .1699", c_scaled, Greater, 0.1699, Down),
        ChainStep::new(".1699 int (1-t^2)^2 Q over [-.5173,.5173] > .8326", phi0_literal, Greater, 0.8326, Down),
        ChainStep::new("int phi0 / sqrt(A) > .8326", phi0_scaled, Greater, 0.8326, Down),
        ChainStep::new("27 (.8326)^2 > 18.7170", 27.0 * recomputed_square, Greater, 18.7170, Down),
        ChainStep::new("18.7170 - 18.5359 > 0", 18.7170 - 18.5359, Greater, 0.0, Exact),
        ChainStep::new("dilation eigenvalue (boundary value problem) > 0", bvp_value, Greater, 0.0, Exact),
        ChainStep::new(
            "dilation eigenvalue above the variational lower bound",
            bvp_value - dilation_lower_bound(&cone),
            Greater,
            -1e-6,
            Exact,
        ),
    ];
    let first_failure = steps.iter().find(|s| !s.pass).map(|s| s.name.clone());
    let product_note = ProductNote {
        literal: "27(.685) > 18.7170".into(),
        literal_product: 27.0 * 0.685,
        literal_pass: 27.0 * 0.685 > 18.7170,
        recomputed_square,
        recomputed_product: 27.0 * recomputed_square,
        quadrature_square: phi0_scaled * phi0_scaled,
        quadrature_product: 27.0 * phi0_scaled * phi0_scaled,
    };
    Ok(BoundChain {
        passed: first_failure.is_none(),
        first_failure,
        steps,
        product_note,
        chain_margin: 18.7170 - 18.5359,
        bvp_value,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrabilityVerdict {
    pub d: Dim,
    pub index_count: u64,
    pub kernel_dim: u64,
    pub kernel_is_rotations: bool,
    pub negative_modes_integrate_to_zero: bool,
    pub zeta1plus_positive: bool,
    pub integrable: bool,
    /// `tan^2(theta0) > 1/(d-2)`, which forces the odd dilation to be negative.
    pub odd_dilation_predicted_negative: bool,
    pub dilation_lower_bound: f64,
    pub dilation_value: f64,
    pub lower_bound_below_direct: bool,
    pub entries: Vec<SecondVarEntry>,
}

pub const MEAN_TOL: f64 = 1e-9;

pub fn classify(cone: &ConeModel, ell_max: u32) -> Result<IntegrabilityVerdict> {
    if ell_max < 3 {
        return Err(Error::Domain(format!("ell_max must be at least 3, got {ell_max}")));
    }
    let entries = spectrum(cone, ell_max)?;
    let kernel: Vec<&SecondVarEntry> = entries.iter().filter(|e| e.classification == Classification::Kernel).collect();
    let kernel_is_rotations = kernel.len() == 1 && kernel[0].mode == ModeId::odd(1);
    let negative_modes_integrate_to_zero = entries
        .iter()
        .filter(|e| e.classification == Classification::Negative)
        .all(|e| e.boundary_integral.abs() <= MEAN_TOL);
    let zeta1plus_positive =
        entries.iter().any(|e| e.mode == ModeId::even(0) && e.classification == Classification::Positive);
    let tan = cone.theta0.tan();
    let lower = dilation_lower_bound(cone);
    let dilation_value = entries
        .iter()
        .find(|e| e.mode == ModeId::even(0))
        .map(|e| e.value)
        .ok_or_else(|| Error::NoConvergence { what: "dilation mode".into(), last: vec![] })?;
    Ok(IntegrabilityVerdict {
        d: cone.d,
        index_count: count(&entries, Classification::Negative),
        kernel_dim: count(&entries, Classification::Kernel),
        kernel_is_rotations,
        negative_modes_integrate_to_zero,
        zeta1plus_positive,
        integrable: kernel_is_rotations && negative_modes_integrate_to_zero,
        odd_dilation_predicted_negative: tan * tan > 1.0 / (cone.d.f() - 2.0),
        dilation_lower_bound: lower,
        dilation_value,
        lower_bound_below_direct: lower <= dilation_value + 1e-6,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

impl NamedCheck {
    fn new(name: &str, lhs: f64, rhs: f64, pass: bool) -> NamedCheck {
        NamedCheck { name: name.into(), lhs, rhs, pass }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticReport {
    pub d: Dim,
    pub theta0: f64,
    pub checks: Vec<NamedCheck>,
    /// The dilation lower bound after substituting the asymptotic estimates.
    pub plugged_bound: f64,
    /// The same substitution at the extreme angle `theta0 = .65/sqrt(d)`.
    pub plugged_bound_at_stated_angle: f64,
    pub bvp_value: f64,
    pub all_pass: bool,
}

/// Asymptotic estimates of the high-dimensional argument, `d >= 21`.
pub fn asymptotic_check(d: Dim) -> Result<AsymptoticReport> {
    if d.get() < 21 {
        return Err(Error::Precondition(format!("asymptotic estimates are stated for d >= 21, got {d}")));
    }
    let cone = build_cone(d)?;
    asymptotic_check_for(&cone)
}

pub fn asymptotic_check_for(cone: &ConeModel) -> Result<AsymptoticReport> {
    let d = cone.d;
    if d.get() < 21 {
        return Err(Error::Precondition(format!("asymptotic estimates are stated for d >= 21, got {d}")));
    }
    let df = d.f();
    let root_d = df.sqrt();
    let area = cone.area_dm2();
    let theta0 = cone.theta0;
    let cos_2d4 = ((2.0 * df - 4.0) * theta0.cos().ln()).exp();
    let half_sphere = 0.5 * root_d * sphere_area(d.get() as i32 - 1)? / area;
    let measure = root_d * cone.m0 / area;
    let c_sq = root_d * cone.c_int * cone.c_int / area;
    let gauss = (2.0 * std::f64::consts::PI).sqrt() / 2.0;
    let checks = vec![
        NamedCheck::new(".62 < theta0 sqrt(d)", 0.62, theta0 * root_d, 0.62 < theta0 * root_d),
        NamedCheck::new("theta0 sqrt(d) <= .65", theta0 * root_d, 0.65, theta0 * root_d <= 0.65),
        NamedCheck::new("1.3 > 2 sqrt(d) theta0", 1.3, 2.0 * root_d * theta0, 1.3 > 2.0 * root_d * theta0),
        NamedCheck::new(
            "2 sqrt(d) theta0 > sqrt(d) m0/A",
            2.0 * root_d * theta0,
            measure,
            2.0 * root_d * theta0 > measure,
        ),
        NamedCheck::new("sqrt(d) m0/A > half-sphere ratio", measure, half_sphere, measure > half_sphere),
        NamedCheck::new("half-sphere ratio > sqrt(2 pi)/2", half_sphere, gauss, half_sphere > gauss),
        NamedCheck::new("sqrt(2 pi)/2 > 1.24", gauss, 1.24, gauss > 1.24),
        NamedCheck::new("sqrt(d) c^2/A >= 4 cos^(2d-4)/1.3", c_sq, 4.0 * cos_2d4 / 1.3, c_sq >= 4.0 * cos_2d4 / 1.3),
    ];
    let plug = |angle: f64| {
        let ln_cos = angle.cos().ln();
        (4.0 * df - 1.0) / root_d * 4.0 * ((2.0 * df - 4.0) * ln_cos).exp() / 1.3
            - (2.0 * df + 1.0) / root_d * 1.3
            - 4.0 * (df - 2.0) * angle.tan() * ((df - 2.0) * ln_cos).exp()
    };
    let plugged_bound = plug(theta0);
    let plugged_bound_at_stated_angle = plug(0.65 / root_d);
    let bvp_value = secondvar::second_var_eigenvalue(cone, ModeId::even(0))?.value;
    let mut checks = checks;
    checks.push(NamedCheck::new("plugged lower bound > 0", plugged_bound, 0.0, plugged_bound > 0.0));
    let all_pass = checks.iter().all(|c| c.pass);
    Ok(AsymptoticReport { d, theta0, checks, plugged_bound, plugged_bound_at_stated_angle, bvp_value, all_pass })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTermCheck {
    /// Rank (from 1) of the first eigenfunction entering the expansion.
    pub rank: usize,
    pub eigenvalue: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// First axisymmetric Dirichlet eigenfunction orthogonal to `phi0` with
/// nonzero mean has eigenvalue at least `(d-2)(d-1)`.
pub fn error_term_check(cone: &ConeModel) -> Result<ErrorTermCheck> {
    let op = RadialOperator::new(cone.band(), 0.0)?;
    let pairs = sturm::eigen_solve(&op, 5, SolverConfig::default())?;
    let threshold = (cone.d.f() - 2.0) * (cone.d.f() - 1.0);
    let (rank, pair) =
        pairs.iter().enumerate().skip(1).find(|(_, p)| p.profile.integral().abs() > 1e-8).ok_or_else(|| {
            Error::NoConvergence { what: "even eigenfunction with nonzero mean".into(), last: vec![] }
        })?;
    Ok(ErrorTermCheck { rank: rank + 1, eigenvalue: pair.eigenvalue, threshold, pass: pair.eigenvalue >= threshold })
}

/// Monotonicity in `l` of each parity's eigenvalues (strict where the
/// harmonic eigenvalue grows).
pub fn monotone_in_ell(entries: &[SecondVarEntry]) -> bool {
    [Parity::Even, Parity::Odd].iter().all(|&parity| {
        let start = if parity == Parity::Even { 1 } else { 0 };
        let mut vals: Vec<(u32, f64)> = entries
            .iter()
            .filter(|e| e.mode.parity == parity && e.mode.ell >= start)
            .map(|e| (e.mode.ell, e.value))
            .collect();
        vals.sort_by_key(|v| v.0);
        vals.windows(2).all(|w| w[1].1 > w[0].1)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_direction() {
        let s = ChainStep::new("up", 0.864_943, Comparison::Less, 0.8650, Rounding::Up);
        assert!(s.pass && s.rounded_value == 0.8650);
        let s = ChainStep::new("up", 5.550_930, Comparison::Less, 5.5509, Rounding::Up);
        assert!(!s.pass);
        let s = ChainStep::new("down", 0.169_959, Comparison::Greater, 0.1699, Rounding::Down);
        assert!(s.pass && s.rounded_value == 0.1699);
        let s = ChainStep::new("down", 0.1698_9, Comparison::Greater, 0.1699, Rounding::Down);
        assert!(!s.pass);
    }

    #[test]
    fn asymptotics_need_large_d() {
        assert!(matches!(asymptotic_check(Dim::new(7).unwrap()), Err(Error::Precondition(_))));
    }

    #[test]
    fn classify_needs_ell_max_three() {
        let cone = build_cone(Dim::new(7).unwrap()).unwrap();
        assert!(classify(&cone, 2).is_err());
    }
}
