use conelab::cone::{build_cone, ConeModel};
use conelab::epiflow::*;
use conelab::geometry::{homogeneity_exponent, Dim};
use conelab::sturm::{self, RadialOperator};
use conelab::{Error, Result};
use proptest::prelude::*;
use std::sync::OnceLock;

fn cone7() -> &'static ConeModel {
    static CONE: OnceLock<ConeModel> = OnceLock::new();
    CONE.get_or_init(|| build_cone(Dim::new(7).unwrap()).unwrap())
}

fn cone_slice(cone: &ConeModel, factor: f64) -> SliceField {
    SliceField::from_profile(cone.profile0.scaled(cone.kappa0 * factor))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn identity(r: f64) -> (f64, f64) {
    (r, 1.0)
}

#[test]
fn cone_field_has_density_m0_over_d() {
    let cone = cone7();
    let field = FnFlow::new(cone.d, |_| Ok(cone_slice(cone, 1.0)));
    let w = weiss_energy(&field).unwrap();
    let density = cone.m0 / 7.0;
    assert!(rel(w.value, density) < 1e-8, "{} vs {density}", w.value);
    assert!(w.residual() < 1e-10);
}

#[test]
fn homogeneous_extension_has_energy_e_over_d() {
    let cone = cone7();
    let trace = Trace { kappa: cone.kappa0 * 1.01, band_shift: (0.01, -0.004), high_modes: vec![(3, 0.005)] };
    let resolved = resolve_trace(&trace, cone).unwrap();
    let field = FnFlow::new(cone.d, |_| Ok(resolved.field.clone()));
    let w = weiss_energy(&field).unwrap();
    let e = resolved.field.energy().unwrap().e_total;
    assert!(rel(w.value, e / 7.0) < 1e-8);
    assert!(rel(homogeneous_weiss(&resolved.field).unwrap(), e / 7.0) < 1e-12);
}

#[test]
fn weiss_energy_of_homogeneous_field_is_scale_invariant() {
    let cone = cone7();
    let trace = Trace { kappa: cone.kappa0, band_shift: (0.015, 0.015), high_modes: vec![] };
    let resolved = resolve_trace(&trace, cone).unwrap();
    let field = FnFlow::new(cone.d, |_| Ok(resolved.field.clone()));
    let reference = weiss_energy(&field).unwrap().value;
    for radius in [0.2, 0.5, 0.8] {
        let w = weiss_energy_at(&field, radius).unwrap().value;
        assert!(rel(w, reference) < 1e-8, "radius {radius}");
    }
}

#[test]
fn constant_reparametrisation_balances_exactly() {
    let cone = cone7();
    let flow = FnFlow::new(cone.d, |t| Ok(cone_slice(cone, 1.0 + t)));
    let sides = slicing_weiss(&flow, |_| (0.4, 0.0), 0.1).unwrap();
    assert!(sides.residual() < 1e-8, "{sides:?}");
}

/// `W(r (2 - r) c) - (1 - eps) W(r c)` by hand for the cone profile `c`.
fn linear_flow_oracle(cone: &ConeModel, eps: f64) -> f64 {
    let d = 7.0;
    let l2 = cone.kappa0_sq();
    let grad = (d - 1.0) * l2;
    // int_0^1 r^{d-1} (2 - 2r)^2 and int_0^1 r^{d-1} (2 - r)^2
    let radial = 4.0 * (1.0 / d - 2.0 / (d + 1.0) + 1.0 / (d + 2.0));
    let angular = 4.0 / d - 4.0 / (d + 1.0) + 1.0 / (d + 2.0);
    let w = l2 * radial + grad * angular - l2 + cone.m0 / d;
    w - (1.0 - eps) * cone.m0 / d
}

#[test]
fn linear_flow_matches_hand_computation() {
    let cone = cone7();
    let flow = FnFlow::new(cone.d, |t| Ok(cone_slice(cone, 1.0 + t)));
    let eps = 0.05;
    let sides = slicing_weiss(&flow, |r| (1.0 - r, -1.0), eps).unwrap();
    let oracle = linear_flow_oracle(cone, eps);
    assert!(rel(sides.lhs, oracle) < 1e-7, "{} vs {oracle}", sides.lhs);
    assert!(rel(sides.rhs, oracle) < 1e-7, "{} vs {oracle}", sides.rhs);
}

fn band_flow(cone: &ConeModel, lo: f64, hi: f64, growth: f64) -> impl SliceFlow + '_ {
    FnFlow::new(cone.d, move |t| {
        let band = cone.band().shifted(lo * t, hi * t)?;
        let pair = sturm::first_eigenpair(&RadialOperator::new(band, 0.0)?, SLICE_ORDER)?;
        let scale = cone.kappa0 * (1.0 + growth * t) / cone.area_dm2().sqrt();
        Ok(SliceField::from_profile(pair.profile.scaled(scale)))
    })
}

#[test]
fn moving_band_flow_satisfies_slicing_identity() {
    let cone = cone7();
    let flow = band_flow(cone, 0.02, -0.01, 0.3);
    let sides = slicing_weiss(&flow, |r| (0.2 + 0.6 * r * r, 1.2 * r), 0.08).unwrap();
    assert!(sides.residual() < 1e-6, "{sides:?}");
}

#[test]
fn high_mode_ratio_tends_to_the_harmonic_value() {
    let d = Dim::new(7).unwrap();
    for lambda in [10.0, 25.0, 77.4] {
        let alpha = homogeneity_exponent(lambda, d).unwrap();
        let expected = 1.0 - (alpha - 1.0) / (7.0 + alpha - 1.0);
        let e = high_mode_competitor(&[(lambda, 0.3)], d, 1e-3).unwrap();
        assert!((e.w0_harmonic / e.w0_z - expected).abs() < 1e-12);
        assert!((e.w0_cut / e.w0_z - expected).abs() < 1e-8);
    }
}

#[test]
fn cutoff_penalty_scales_with_the_homogeneity() {
    let d = Dim::new(7).unwrap();
    let lambda = 18.0;
    let alpha = homogeneity_exponent(lambda, d).unwrap();
    let points: Vec<(f64, f64)> = (2..7)
        .map(|k| {
            let rho = 2f64.powi(-k);
            let e = high_mode_competitor(&[(lambda, 1.0)], d, rho).unwrap();
            (rho.ln(), e.penalty.ln())
        })
        .collect();
    let slope = (points[4].1 - points[0].1) / (points[4].0 - points[0].0);
    let expected = 2.0 * (alpha - 1.0) + 7.0;
    assert!((slope - expected).abs() < 0.05 * expected, "{slope} vs {expected}");
}

#[test]
fn cut_energy_matches_quadrature() {
    let d = Dim::new(7).unwrap();
    let (lambda, rho) = (30.0, 0.125);
    let alpha = homogeneity_exponent(lambda, d).unwrap();
    let h = |r: f64| cutoff(rho, d, r) * r.powf(alpha);
    let integrand = |r: f64| {
        let step = 1e-6;
        let dh = (h(r + step) - h(r - step)) / (2.0 * step);
        r.powi(6) * (dh * dh + lambda * (h(r) / r).powi(2))
    };
    let breaks = [rho, 2.0 * rho];
    let quad: f64 =
        conelab::quadrature::composite_gl(rho, 1.0, &breaks, 40).into_iter().map(|(r, w)| w * integrand(r)).sum();
    let e = high_mode_competitor(&[(lambda, 1.0)], d, rho).unwrap();
    assert!((e.w0_cut - (quad - 1.0)).abs() < 1e-8, "{} vs {}", e.w0_cut, quad - 1.0);
}

#[test]
fn high_mode_scan_reports_target() {
    let d = Dim::new(7).unwrap();
    let report = high_mode_scan(&[(20.0, 0.1), (40.0, 0.05)], d).unwrap();
    let alpha = homogeneity_exponent(20.0, d).unwrap();
    assert!((report.target_epsilon - (alpha - 1.0) / (6.0 + alpha)).abs() < 1e-14);
    assert!(report.verified);
    assert_eq!(report.best.rho, *RHO_CANDIDATES.last().unwrap());
}

#[test]
fn dilation_slope_matches_finite_difference() {
    let cone = cone7();
    let lambda = |s: f64| {
        let band = cone.band().shifted(s, s).unwrap();
        sturm::first_eigenpair(&RadialOperator::new(band, 0.0).unwrap(), 64).unwrap().eigenvalue
    };
    let h = 1e-4;
    let fd = (lambda(h) - lambda(-h)) / (2.0 * h);
    assert!(rel(fd, dilation_slope(cone)) < 1e-6, "{fd} vs {}", dilation_slope(cone));
}

#[test]
fn cone_trace_is_a_fixed_point() {
    let cone = cone7();
    let trace = Trace::of_cone(cone);
    let comp = build_competitor(&trace, cone, 0.1, &TraceGate::default()).unwrap();
    let w = weiss_energy(&comp).unwrap();
    assert!(rel(w.value, cone.m0 / 7.0) < 1e-9);
    let report = verify_epi(&trace, cone).unwrap();
    assert!(report.trivial);
    assert_eq!(report.epsilon_hat, None);
}

#[test]
fn boundary_slice_reproduces_the_trace() {
    let cone = cone7();
    let trace =
        Trace { kappa: cone.kappa0 * 0.99, band_shift: (-0.01, 0.012), high_modes: vec![(2, 0.004), (5, -0.003)] };
    let comp = build_competitor(&trace, cone, 0.05, &TraceGate::default()).unwrap();
    let resolved = resolve_trace(&trace, cone).unwrap();
    let boundary = comp.slice(1.0).unwrap();
    let thetas: Vec<f64> = (0..200).map(|k| 1.0 + 1.2 * k as f64 / 199.0).collect();
    let (a, b) = (boundary.values(&thetas), resolved.field.values(&thetas));
    let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-9, "{worst}");
    assert_eq!(comp.slices.last().unwrap().band_shift, trace.band_shift);
    for s in comp.slices.iter().filter(|s| s.r <= comp.cutoff_rho) {
        assert!(s.high_modes.iter().all(|(_, c)| *c == 0.0));
    }
    assert!(comp.eta_schedules.iter().all(|e| e.eta2 == 1.0 && e.eta1 <= 1.0));
}

#[test]
fn gate_violation_is_a_precondition_error() {
    let cone = cone7();
    let trace = Trace { kappa: cone.kappa0, band_shift: (0.1, 0.0), high_modes: vec![] };
    let err = build_competitor(&trace, cone, 0.05, &TraceGate::default()).unwrap_err();
    assert!(matches!(err, Error::Precondition(ref m) if m.contains("shift")), "{err}");
    let trace = Trace { kappa: cone.kappa0, band_shift: (0.0, 0.0), high_modes: vec![(1, 0.001)] };
    assert!(matches!(verify_epi(&trace, cone), Err(Error::Precondition(_))));
}

#[test]
fn positive_dilation_is_strictly_improved() {
    let cone = cone7();
    let trace = Trace { kappa: cone.kappa0, band_shift: (0.01, 0.01), high_modes: vec![] };
    let w_z = resolve_trace(&trace, cone).unwrap().field.energy().unwrap().e_total / 7.0;
    let comp = build_competitor(&trace, cone, 0.05, &TraceGate::default()).unwrap();
    assert!(weiss_energy(&comp).unwrap().value < w_z);
}

#[test]
fn pure_high_modes_reduce_to_the_closed_form() {
    let cone = cone7();
    let trace = Trace { kappa: cone.kappa0, band_shift: (0.0, 0.0), high_modes: vec![(3, 0.01), (4, -0.006)] };
    let comp = build_competitor(&trace, cone, 0.05, &TraceGate::default()).unwrap();
    let closed = high_mode_competitor(&comp.g_modes(), cone.d, comp.cutoff_rho).unwrap();
    let w_b = cone.m0 / 7.0;
    let w_h = weiss_energy(&comp).unwrap().value;
    assert!((w_h - w_b - closed.w0_cut).abs() < 1e-9 * w_b, "{} vs {}", w_h - w_b, closed.w0_cut);
    let report = verify_epi(&trace, cone).unwrap();
    assert!((report.w_z - w_b - closed.w0_z).abs() < 1e-9 * w_b);
    let expected = 1.0 - closed.w0_cut / closed.w0_z;
    assert!((report.epsilon_hat.unwrap() - expected).abs() < 1e-5, "{report:?}");
}

#[test]
fn high_modes_split_orthogonally() {
    let cone = cone7();
    let gate = TraceGate::default();
    let modes = vec![(2, 0.008), (5, 0.004)];
    let full = Trace { kappa: cone.kappa0 * 1.015, band_shift: (0.0, 0.0), high_modes: modes };
    let first = Trace { high_modes: vec![], ..full.clone() };
    let comp = build_competitor(&full, cone, 0.06, &gate).unwrap();
    let comp1 = build_competitor(&first, cone, 0.06, &gate).unwrap();
    let closed = high_mode_competitor(&comp.g_modes(), cone.d, comp.cutoff_rho).unwrap();
    let split = weiss_energy(&comp1).unwrap().value + closed.w0_cut;
    let whole = weiss_energy(&comp).unwrap().value;
    assert!(whole <= split + 1e-8 && (whole - split).abs() < 1e-8, "{whole} vs {split}");
}

#[test]
fn competitors_satisfy_the_slicing_identity() {
    let cone = cone7();
    let trace = Trace { kappa: cone.kappa0 * 1.01, band_shift: (0.012, -0.006), high_modes: vec![(3, 0.006)] };
    let comp = build_competitor(&trace, cone, 0.07, &TraceGate::default()).unwrap();
    let sides = slicing_weiss(&comp, identity, comp.eps).unwrap();
    assert!(sides.residual() < 1e-6, "{sides:?}");
    assert!(weiss_energy(&comp).unwrap().residual() < 1e-6);
}

#[test]
fn even_dilation_matches_quadratic_prediction() {
    let cone = cone7();
    let trace = Trace { kappa: cone.kappa0, band_shift: (0.008, 0.008), high_modes: vec![] };
    let report = verify_epi(&trace, cone).unwrap();
    let (hat, predicted) = (report.epsilon_hat.unwrap(), report.quadratic_prediction.unwrap());
    assert!(report.verified && hat >= 1e-4);
    assert!(hat <= 2.0 * predicted && predicted <= 2.0 * hat, "{hat} vs {predicted}");
}

#[test]
fn sampled_traces_verify() {
    let cone = cone7();
    let traces = sample_traces(cone, &TraceGate::default(), 6, 11).unwrap();
    assert_eq!(traces, sample_traces(cone, &TraceGate::default(), 6, 11).unwrap());
    for trace in &traces {
        let report = verify_epi(trace, cone).unwrap();
        assert!(!report.trivial && report.verified, "{trace:?}: {report:?}");
        assert!(report.w_h <= report.w_z);
        assert!(report.epsilon_hat.unwrap() >= 1e-4);
        assert!(report.slicing_residual < 1e-6);
    }
}

fn quadratic_potential(h: [[f64; 3]; 3]) -> impl Potential {
    AnalyticPotential::new(
        3,
        move |x: &[f64]| 0.5 * (0..3).map(|i| (0..3).map(|j| x[i] * h[i][j] * x[j]).sum::<f64>()).sum::<f64>(),
        move |x: &[f64]| (0..3).map(|i| (0..3).map(|j| h[i][j] * x[j]).sum()).collect(),
    )
}

fn toy() -> impl Potential {
    AnalyticPotential::new(
        2,
        |x: &[f64]| (x[1] - x[0] * x[0]).powi(2) + x[0].powi(4),
        |x: &[f64]| {
            let gap = x[1] - x[0] * x[0];
            vec![-4.0 * x[0] * gap + 4.0 * x[0].powi(3), 2.0 * gap]
        },
    )
}

#[test]
fn quadratic_reduction_is_the_schur_complement() {
    let h = [[2.0, 0.5, 0.3], [0.5, 3.0, -0.4], [0.3, -0.4, 1.5]];
    let red = ls_reduce(quadratic_potential(h), &[vec![1.0, 0.0, 0.0]]).unwrap();
    // H_kk - H_kc H_cc^{-1} H_ck with c = {1, 2}
    let det = h[1][1] * h[2][2] - h[1][2] * h[2][1];
    let inv = [[h[2][2] / det, -h[1][2] / det], [-h[2][1] / det, h[1][1] / det]];
    let b = [h[0][1], h[0][2]];
    let schur = h[0][0] - (0..2).map(|i| (0..2).map(|j| b[i] * inv[i][j] * b[j]).sum::<f64>()).sum::<f64>();
    for mu in [-0.7, 0.2, 1.3] {
        assert!((red.value(&[mu]).unwrap() - 0.5 * schur * mu * mu).abs() < 1e-12);
        let ups = red.upsilon(&[mu]).unwrap();
        let expected: Vec<f64> = (0..2).map(|i| -(0..2).map(|j| inv[i][j] * b[j]).sum::<f64>() * mu).collect();
        assert!(ups[0].abs() < 1e-14);
        assert!((ups[1] - expected[0]).abs() < 1e-10 && (ups[2] - expected[1]).abs() < 1e-10);
    }
}

#[test]
fn toy_reduction_eliminates_the_parabola() {
    let red = ls_reduce(toy(), &[vec![1.0, 0.0]]).unwrap();
    for x in [-0.5, -0.1, 0.0, 0.2, 0.6] {
        let ups = red.upsilon(&[x]).unwrap();
        assert!(ups[0].abs() < 1e-14 && (ups[1] - x * x).abs() < 1e-8, "{x}: {ups:?}");
        assert!((red.value(&[x]).unwrap() - x.powi(4)).abs() < 1e-8);
        assert!(red.complement_residual(&[x]).unwrap() <= 1e-10);
    }
    assert!(red.upsilon(&[0.0]).unwrap().iter().all(|v| v.abs() < 1e-15));
    assert!(red.upsilon_derivative_at_zero().unwrap() < 1e-8);
}

#[test]
fn reduced_gradient_is_the_projected_gradient() {
    let red = ls_reduce(toy(), &[vec![1.0, 0.0]]).unwrap();
    for x in [-0.4, 0.15, 0.3] {
        let h = 1e-5;
        let fd = (red.value(&[x + h]).unwrap() - red.value(&[x - h]).unwrap()) / (2.0 * h);
        let projected = red.gradient(&[x]).unwrap()[0];
        assert!((fd - projected).abs() < 1e-8, "{fd} vs {projected}");
    }
}

#[test]
fn reduction_rejects_non_critical_origin() {
    let tilted = AnalyticPotential::new(1, |x: &[f64]| x[0], |_: &[f64]| vec![1.0]);
    assert!(matches!(ls_reduce(tilted, &[vec![1.0]]), Err(Error::Precondition(_))));
}

fn power_well(p: i32) -> impl Potential {
    AnalyticPotential::new(1, move |x: &[f64]| x[0].powi(p), move |x: &[f64]| vec![p as f64 * x[0].powi(p - 1)])
}

#[test]
fn quadratic_descent_is_linear_in_time() {
    let trace = gradient_flow(&power_well(2), &[1.0], 1.5).unwrap();
    for s in &trace.states {
        let exact = (1.0 - s.time).max(0.0).powi(2);
        assert!((s.g_value - exact).abs() < 1e-6, "t = {}: {} vs {exact}", s.time, s.g_value);
    }
    assert!(trace.frozen_at.is_some());
    assert!(trace.max_increase() <= 1e-9);
    assert!(trace.dissipation_gap() < 1e-6);
    let fit = lojasiewicz_fit(&trace).unwrap();
    assert!((fit.gamma - 0.5).abs() < 0.02, "{fit:?}");
}

#[test]
fn quartic_descent_and_exponent() {
    let trace = gradient_flow(&power_well(4), &[0.3], 0.25).unwrap();
    for s in &trace.states {
        let exact = (0.3 - s.time).powi(4);
        assert!((s.g_value - exact).abs() < 1e-6);
    }
    let fit = lojasiewicz_fit(&trace).unwrap();
    assert!((fit.gamma - 0.25).abs() < 0.03, "{fit:?}");
}

#[test]
fn flat_energy_freezes_immediately() {
    let flat = AnalyticPotential::new(2, |_: &[f64]| 0.0, |_: &[f64]| vec![0.0, 0.0]);
    let trace = gradient_flow(&flat, &[0.3, -0.2], 2.0).unwrap();
    assert!(trace.states.iter().all(|s| s.state == vec![0.3, -0.2]));
    assert_eq!(trace.frozen_at, Some(0.0));
    assert!(matches!(lojasiewicz_fit(&trace), Err(Error::Fit(_))));
}

fn mixed() -> impl Potential {
    AnalyticPotential::new(2, |x: &[f64]| x[0] * x[0] + x[1].powi(4), |x: &[f64]| vec![2.0 * x[0], 4.0 * x[1].powi(3)])
}

/// Local exponent `1 - d log|grad G| / d log G` along rays, worst and best
/// over a grid of directions near the origin.
fn grid_exponent_range() -> (f64, f64) {
    let g = mixed();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..=40 {
        let angle = std::f64::consts::FRAC_PI_2 * k as f64 / 40.0;
        let at = |s: f64| {
            let x = [s * angle.cos(), s * angle.sin()];
            let grad = g.gradient(&x).unwrap();
            (g.value(&x).unwrap().ln(), grad.iter().map(|v| v * v).sum::<f64>().sqrt().ln())
        };
        let (a, b) = (at(1e-3), at(2e-3));
        let gamma = 1.0 - (b.1 - a.1) / (b.0 - a.0);
        lo = lo.min(gamma);
        hi = hi.max(gamma);
    }
    (lo, hi)
}

#[test]
fn mixed_well_exponent_lies_between_the_pure_ones() {
    let (lo, hi) = grid_exponent_range();
    assert!((lo - 0.25).abs() < 0.02 && (hi - 0.5).abs() < 0.02, "{lo} {hi}");
    let trace = gradient_flow(&mixed(), &[0.5, 0.5], 2.0).unwrap();
    let fit = lojasiewicz_fit(&trace).unwrap();
    assert!(fit.gamma >= lo && fit.gamma <= hi, "{fit:?}");
}

#[test]
fn reduced_toy_flows_like_a_quartic() -> Result<()> {
    let red = ls_reduce(toy(), &[vec![1.0, 0.0]])?;
    let trace = gradient_flow(&red, &[0.3], 0.25)?;
    for s in &trace.states {
        assert!((s.g_value - (0.3 - s.time).powi(4)).abs() < 1e-6);
    }
    let fit = lojasiewicz_fit(&trace)?;
    assert!((fit.gamma - 0.25).abs() < 0.03);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn descent_never_increases_the_energy(a in 0.1f64..3.0, b in 0.1f64..3.0, x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let g = AnalyticPotential::new(
            2,
            move |p: &[f64]| a * p[0] * p[0] + b * p[1].powi(4) + p[0] * p[1] * p[1],
            move |p: &[f64]| vec![2.0 * a * p[0] + p[1] * p[1], 4.0 * b * p[1].powi(3) + 2.0 * p[0] * p[1]],
        );
        let trace = gradient_flow(&g, &[x, y], 1.0).unwrap();
        prop_assert!(trace.max_increase() <= 1e-9);
        prop_assert!(trace.dissipation_gap() < 1e-6);
    }

    #[test]
    fn cut_energy_dominates_the_harmonic_one(lambda in 6.5f64..200.0, c in -1.0f64..1.0, k in 2i32..8) {
        let e = high_mode_competitor(&[(lambda, c)], Dim::new(7).unwrap(), 2f64.powi(-k)).unwrap();
        prop_assert!(e.w0_cut >= e.w0_harmonic - 1e-15);
        prop_assert!(e.w0_harmonic <= e.w0_z + 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn synthetic_flows_satisfy_slicing(lo in -0.02f64..0.02, hi in -0.02f64..0.02, growth in -0.3f64..0.3,
                                       e0 in 0.0f64..0.5, e1 in 0.0f64..0.5, eps in 0.0f64..0.2) {
        let cone = cone7();
        let flow = band_flow(cone, lo, hi, growth);
        let sides = slicing_weiss(&flow, move |r| (e0 + e1 * r, e1), eps).unwrap();
        prop_assert!(sides.residual() < 1e-6, "{:?}", sides);
    }
}
