//! Epiperimetric competitors for axisymmetric traces of the cone.
//!
//! A field on the unit ball is handled through its slices `v_r`, functions
//! of colatitude on the sphere. The Weiss energy is assembled from the slices
//! by radial quadrature, once directly and once through the slicing identity.
//! The finite-dimensional half of the module reduces an energy onto a kernel
//! and runs the unit-speed descent used for Lojasiewicz fits.

use crate::cone::ConeModel;
use crate::decay::fit_line;
use crate::energy::SliceEnergy;
use crate::error::{Error, Result};
use crate::geometry::{band_measure, band_perimeter, homogeneity_exponent, Band, Dim, SphereGeom};
use crate::ode::{self, Tolerance};
use crate::profile::Profile;
use crate::quadrature::composite_gl;
use crate::roots::brent;
use crate::sturm::{self, RadialOperator, SolverConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::ops::ControlFlow;

/// Collocation order of the per-slice first eigenfunction.
pub const SLICE_ORDER: usize = 48;
/// Gauss-Legendre nodes per radial panel.
pub const RADIAL_NODES: usize = 20;
/// Cutoff radii tried for the high-mode part.
pub const RHO_CANDIDATES: [f64; 3] = [0.25, 0.125, 0.0625];
/// Gradient norm below which the descent flow stops.
pub const FREEZE_GRADIENT: f64 = 1e-9;

const ANGULAR_NODES: usize = 24;
const SIGN_SAMPLES: usize = 16;
const RADIAL_STEP: f64 = 1e-4;
const TRIVIAL_GAP: f64 = 1e-11;

// ---------------------------------------------------------------------------
// Slices

/// One slice of a field on the ball: a sum of profiles, each extended by zero
/// outside its band and normalised as a function on the sphere.
#[derive(Debug, Clone)]
pub struct SliceField {
    d: Dim,
    parts: Vec<(Profile, Profile)>,
}

impl SliceField {
    pub fn zero(d: Dim) -> SliceField {
        SliceField { d, parts: Vec::new() }
    }

    pub fn from_profile(profile: Profile) -> SliceField {
        SliceField::zero(profile.band.d).with_part(profile)
    }

    pub fn with_part(mut self, profile: Profile) -> SliceField {
        let slope = profile.derivative();
        self.parts.push((profile, slope));
        self
    }

    pub fn dim(&self) -> Dim {
        self.d
    }

    pub fn is_zero(&self) -> bool {
        self.parts.is_empty()
    }

    /// Band edges of all parts, sorted.
    pub fn edges(&self) -> Vec<f64> {
        let mut e: Vec<f64> = self.parts.iter().flat_map(|(p, _)| [p.band.theta_lo, p.band.theta_hi]).collect();
        e.sort_by(f64::total_cmp);
        e.dedup();
        e
    }

    pub fn values(&self, thetas: &[f64]) -> Vec<f64> {
        self.sum_over(thetas, |(p, _)| p)
    }

    pub fn slopes(&self, thetas: &[f64]) -> Vec<f64> {
        self.sum_over(thetas, |(_, dp)| dp)
    }

    fn sum_over(&self, thetas: &[f64], pick: impl Fn(&(Profile, Profile)) -> &Profile) -> Vec<f64> {
        let mut out = vec![0.0; thetas.len()];
        for part in &self.parts {
            for (o, v) in out.iter_mut().zip(pick(part).eval_many_or_zero(thetas)) {
                *o += v;
            }
        }
        out
    }

    pub fn value(&self, theta: f64) -> f64 {
        self.parts.iter().map(|(p, _)| p.eval_or_zero(theta)).sum()
    }

    /// `int v^2` over the sphere.
    pub fn l2_sq(&self) -> f64 {
        let rule = angular_rule(&[self]);
        let v = self.values(&rule.nodes);
        rule.weights.iter().zip(&v).map(|(w, x)| w * x * x).sum()
    }

    /// `E(v) = int |grad v|^2 - (d-1) v^2 + |{v > 0}|`.
    pub fn energy(&self) -> Result<SliceEnergy> {
        let rule = angular_rule(&[self]);
        let v = self.values(&rule.nodes);
        let s = self.slopes(&rule.nodes);
        let dm1 = self.d.f() - 1.0;
        let e_quadratic: f64 =
            rule.weights.iter().zip(v.iter().zip(&s)).map(|(w, (v, s))| w * (s * s - dm1 * v * v)).sum();
        Ok(SliceEnergy { e_total: e_quadratic + self.positivity_measure()?, e_quadratic })
    }

    /// `H^{d-1}` measure of `{v > 0}`.
    pub fn positivity_measure(&self) -> Result<f64> {
        let edges = self.edges();
        let mut cuts = Vec::new();
        let mut signs = Vec::new();
        for w in edges.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if hi <= lo {
                continue;
            }
            let ts: Vec<f64> =
                (0..SIGN_SAMPLES).map(|k| lo + (hi - lo) * (k as f64 + 0.5) / SIGN_SAMPLES as f64).collect();
            let vs = self.values(&ts);
            cuts.push(lo);
            signs.push(vs[0] > 0.0);
            for k in 1..ts.len() {
                if (vs[k - 1] > 0.0) != (vs[k] > 0.0) {
                    let root = brent(|t| Ok(self.value(t)), ts[k - 1], ts[k], 1e-14)?;
                    cuts.push(root);
                    signs.push(vs[k] > 0.0);
                }
            }
        }
        if let Some(&last) = edges.last() {
            cuts.push(last);
        }
        let mut total = 0.0;
        let mut run: Option<f64> = None;
        for (k, &positive) in signs.iter().enumerate() {
            match (positive, run) {
                (true, None) => run = Some(cuts[k]),
                (false, Some(start)) => {
                    total += band_measure(&Band::new(self.d, start, cuts[k])?)?;
                    run = None;
                }
                _ => {}
            }
        }
        if let Some(start) = run {
            total += band_measure(&Band::new(self.d, start, cuts[signs.len()])?)?;
        }
        Ok(total)
    }
}

struct AngularRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Composite rule for `int_{S^{d-1}}` of axisymmetric integrands, split at
/// every band edge of the given slices.
fn angular_rule(slices: &[&SliceField]) -> AngularRule {
    let mut edges: Vec<f64> = slices.iter().flat_map(|s| s.edges()).collect();
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    let (Some(&lo), Some(&hi)) = (edges.first(), edges.last()) else {
        return AngularRule { nodes: Vec::new(), weights: Vec::new() };
    };
    let d = slices[0].d;
    let area = SphereGeom::new(d).area_dm2;
    let (nodes, weights) = composite_gl(lo, hi, &edges, ANGULAR_NODES)
        .into_iter()
        .map(|(t, w)| (t, w * area * t.sin().powi(d.weight_power())))
        .unzip();
    AngularRule { nodes, weights }
}

// ---------------------------------------------------------------------------
// Weiss energy

/// A field `u(r, theta) = r v_r(theta)` given by its slices.
pub trait SliceFlow: Sync {
    fn dim(&self) -> Dim;
    fn slice(&self, t: f64) -> Result<SliceField>;
    /// Radii where the slices are only piecewise smooth in `r`.
    fn radial_breaks(&self) -> Vec<f64> {
        vec![0.25, 0.5]
    }
}

/// Slices given by a closure.
pub struct FnFlow<F> {
    pub d: Dim,
    pub slices: F,
    pub breaks: Vec<f64>,
}

impl<F> FnFlow<F>
where
    F: Fn(f64) -> Result<SliceField> + Sync,
{
    pub fn new(d: Dim, slices: F) -> FnFlow<F> {
        FnFlow { d, slices, breaks: vec![0.25, 0.5] }
    }
}

impl<F> SliceFlow for FnFlow<F>
where
    F: Fn(f64) -> Result<SliceField> + Sync,
{
    fn dim(&self) -> Dim {
        self.d
    }

    fn slice(&self, t: f64) -> Result<SliceField> {
        (self.slices)(t)
    }

    fn radial_breaks(&self) -> Vec<f64> {
        self.breaks.clone()
    }
}

/// The blow-down `u_R(x) = u(R x) / R` of a field.
pub struct Rescaled<'a, T: ?Sized> {
    inner: &'a T,
    radius: f64,
}

pub fn rescaled<T: SliceFlow + ?Sized>(inner: &T, radius: f64) -> Rescaled<'_, T> {
    Rescaled { inner, radius }
}

impl<T: SliceFlow + ?Sized> SliceFlow for Rescaled<'_, T> {
    fn dim(&self) -> Dim {
        self.inner.dim()
    }

    fn slice(&self, t: f64) -> Result<SliceField> {
        self.inner.slice(self.radius * t)
    }

    fn radial_breaks(&self) -> Vec<f64> {
        self.inner.radial_breaks().into_iter().map(|b| b / self.radius).collect()
    }
}

/// Weiss energy of a field, assembled two ways.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeissEnergy {
    /// `int |grad u|^2 - int_{dB} u^2 + |{u > 0}|` from the slices.
    pub value: f64,
    /// `int (E(v_r) + r^2 int |d_r v|^2) r^{d-1} dr`.
    pub slicing: f64,
    /// `int_{dB} u^2`.
    pub boundary_l2: f64,
}

impl WeissEnergy {
    pub fn residual(&self) -> f64 {
        (self.value - self.slicing).abs() / self.value.abs().max(self.slicing.abs()).max(1e-300)
    }
}

#[derive(Debug, Clone, Copy)]
struct RadialTerms {
    /// `int (v + r d_r v)^2 + |grad_theta v|^2`
    dirichlet: f64,
    /// `int |grad_theta v|^2 - (d-1) v^2`
    quadratic: f64,
    /// `int (d_r v)^2`
    radial: f64,
    positive: f64,
}

fn radial_step(r: f64) -> f64 {
    RADIAL_STEP.min(0.5 * r)
}

fn radial_terms<T: SliceFlow + ?Sized>(flow: &T, r: f64) -> Result<RadialTerms> {
    let h = radial_step(r);
    let at = flow.slice(r)?;
    let below = flow.slice(r - h)?;
    let above = flow.slice(r + h)?;
    let rule = angular_rule(&[&at, &below, &above]);
    let v = at.values(&rule.nodes);
    let s = at.slopes(&rule.nodes);
    let vm = below.values(&rule.nodes);
    let vp = above.values(&rule.nodes);
    let dm1 = flow.dim().f() - 1.0;
    let mut terms = RadialTerms { dirichlet: 0.0, quadratic: 0.0, radial: 0.0, positive: 0.0 };
    for k in 0..rule.nodes.len() {
        let w = rule.weights[k];
        let dr = (vp[k] - vm[k]) / (2.0 * h);
        terms.dirichlet += w * ((v[k] + r * dr).powi(2) + s[k] * s[k]);
        terms.quadratic += w * (s[k] * s[k] - dm1 * v[k] * v[k]);
        terms.radial += w * dr * dr;
    }
    terms.positive = at.positivity_measure()?;
    Ok(terms)
}

fn radial_rule(breaks: &[f64]) -> Vec<(f64, f64)> {
    composite_gl(0.0, 1.0, breaks, RADIAL_NODES)
}

/// Weiss energy on the unit ball of the field with the given slices.
pub fn weiss_energy<T: SliceFlow + ?Sized>(field: &T) -> Result<WeissEnergy> {
    let d = field.dim();
    let rule = radial_rule(&field.radial_breaks());
    let terms: Vec<RadialTerms> = rule.par_iter().map(|&(r, _)| radial_terms(field, r)).collect::<Result<_>>()?;
    let boundary_l2 = field.slice(1.0)?.l2_sq();
    let (mut bulk, mut slicing) = (0.0, 0.0);
    for (&(r, w), t) in rule.iter().zip(&terms) {
        let jac = w * r.powi(d.get() as i32 - 1);
        bulk += jac * (t.dirichlet + t.positive);
        slicing += jac * (t.quadratic + t.positive + r * r * t.radial);
    }
    let value = bulk - boundary_l2;
    if !value.is_finite() || !slicing.is_finite() {
        return Err(Error::Quadrature { achieved: f64::INFINITY, requested: 1e-8 });
    }
    Ok(WeissEnergy { value, slicing, boundary_l2 })
}

/// Weiss energy on `B_radius`, `W(u, R) = W(u_R, 1)`.
pub fn weiss_energy_at<T: SliceFlow + ?Sized>(field: &T, radius: f64) -> Result<WeissEnergy> {
    if !(radius > 0.0 && radius <= 1.0) {
        return Err(Error::Domain(format!("radius {radius} outside (0, 1]")));
    }
    weiss_energy(&rescaled(field, radius))
}

/// Weiss energy of the one-homogeneous extension `r v` of a slice.
pub fn homogeneous_weiss(slice: &SliceField) -> Result<f64> {
    let rule = angular_rule(&[slice]);
    let v = slice.values(&rule.nodes);
    let s = slice.slopes(&rule.nodes);
    let (mut gradient, mut trace) = (0.0, 0.0);
    for k in 0..rule.nodes.len() {
        gradient += rule.weights[k] * (v[k] * v[k] + s[k] * s[k]);
        trace += rule.weights[k] * v[k] * v[k];
    }
    Ok((gradient + slice.positivity_measure()?) / slice.d.f() - trace)
}

/// The two sides of the slicing identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlicingSides {
    /// `W(w) - (1 - eps) W(z_v)`.
    pub lhs: f64,
    /// `int (E(v_eta) - (1 - eps) E(v_eta(1))) r^{d-1} + int r^{d+1} eta'^2 int |d_t v|^2`.
    pub rhs: f64,
}

impl SlicingSides {
    pub fn residual(&self) -> f64 {
        (self.lhs - self.rhs).abs() / self.lhs.abs().max(self.rhs.abs()).max(1e-300)
    }
}

/// Both sides of the slicing identity for `w = r v_{eta(r)}`; `eta` returns
/// the reparametrisation and its derivative.
pub fn slicing_weiss<T, E>(flow: &T, eta: E, eps: f64) -> Result<SlicingSides>
where
    T: SliceFlow + ?Sized,
    E: Fn(f64) -> (f64, f64) + Sync,
{
    let d = flow.dim();
    let composed = FnFlow { d, slices: |r: f64| flow.slice(eta(r).0), breaks: flow.radial_breaks() };
    let end = flow.slice(eta(1.0).0)?;
    let lhs = weiss_energy(&composed)?.value - (1.0 - eps) * homogeneous_weiss(&end)?;

    let end_energy = end.energy()?.e_total;
    let rule = radial_rule(&flow.radial_breaks());
    let pieces: Vec<f64> = rule
        .par_iter()
        .map(|&(r, w)| {
            let (t, dt) = eta(r);
            let slice = flow.slice(t)?;
            let mut piece = (slice.energy()?.e_total - (1.0 - eps) * end_energy) * r.powi(d.get() as i32 - 1);
            if dt != 0.0 {
                let h = radial_step(t.max(r));
                let (below, above) = (flow.slice(t - h)?, flow.slice(t + h)?);
                let rule = angular_rule(&[&below, &above]);
                let (vm, vp) = (below.values(&rule.nodes), above.values(&rule.nodes));
                let speed: f64 = rule
                    .weights
                    .iter()
                    .zip(vm.iter().zip(&vp))
                    .map(|(w, (a, b))| w * ((b - a) / (2.0 * h)).powi(2))
                    .sum();
                piece += r.powi(d.get() as i32 + 1) * dt * dt * speed;
            }
            Ok(w * piece)
        })
        .collect::<Result<_>>()?;
    Ok(SlicingSides { lhs, rhs: pieces.iter().sum() })
}

// ---------------------------------------------------------------------------
// High modes

/// Cutoff `psi_rho`: zero below `rho`, one above `2 rho`, radial harmonic between.
pub fn cutoff(rho: f64, d: Dim, r: f64) -> f64 {
    if r <= rho {
        0.0
    } else if r >= 2.0 * rho {
        1.0
    } else {
        let p = 2.0 - d.f();
        (1.0 - (r / rho).powf(p)) / (1.0 - 2f64.powf(p))
    }
}

/// Energies of the high-mode part of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HighModeEnergies {
    pub rho: f64,
    /// `W_0(psi_rho h_g)`.
    pub w0_cut: f64,
    /// `W_0(h_g)`.
    pub w0_harmonic: f64,
    /// `W_0(z_g)`.
    pub w0_z: f64,
    /// `W_0(psi_rho h_g) - W_0(h_g)`, summed in closed form.
    pub penalty: f64,
}

fn power_integral(p: f64, lo: f64, hi: f64) -> f64 {
    if (p + 1.0).abs() < 1e-14 {
        (hi / lo).ln()
    } else {
        (hi.powf(p + 1.0) - lo.powf(p + 1.0)) / (p + 1.0)
    }
}

/// `W_0(psi_rho r^alpha phi) - W_0(r^alpha phi)` for a unit mode with eigenvalue `lambda`.
fn cut_mode_penalty(lambda: f64, alpha: f64, d: Dim, rho: f64) -> f64 {
    let df = d.f();
    let q = 2.0 * alpha + df - 2.0;
    let inner = (alpha * alpha + lambda) * 2f64.powf(q) / q;
    let den = (1.0 - 2f64.powf(2.0 - df)).powi(2);
    let b = df - 2.0 - alpha;
    let transition = [
        (alpha * alpha + lambda, 2.0 * alpha + df - 3.0),
        (2.0 * alpha * b - 2.0 * lambda, 2.0 * alpha - 1.0),
        (b * b + lambda, 2.0 * alpha + 1.0 - df),
    ]
    .iter()
    .map(|&(c, p)| c * power_integral(p, 1.0, 2.0))
    .sum::<f64>()
        / den;
    rho.powf(q) * (transition - inner)
}

fn check_modes(g_modes: &[(f64, f64)], d: Dim) -> Result<()> {
    if let Some(&(lambda, _)) = g_modes.iter().find(|(l, _)| !(*l > d.f() - 1.0)) {
        return Err(Error::Precondition(format!(
            "high mode eigenvalue {lambda} does not exceed d - 1 = {}",
            d.f() - 1.0
        )));
    }
    Ok(())
}

/// Energies of the cut harmonic extension of `sum c_j phi_j`, modes given as
/// `(lambda_j, c_j)` with unit-normalised `phi_j`.
pub fn high_mode_competitor(g_modes: &[(f64, f64)], d: Dim, rho: f64) -> Result<HighModeEnergies> {
    check_modes(g_modes, d)?;
    if !(rho > 0.0 && rho <= 0.5) {
        return Err(Error::Domain(format!("cutoff radius {rho} outside (0, 1/2]")));
    }
    let df = d.f();
    let mut out = HighModeEnergies { rho, w0_cut: 0.0, w0_harmonic: 0.0, w0_z: 0.0, penalty: 0.0 };
    for &(lambda, c) in g_modes {
        let alpha = homogeneity_exponent(lambda, d)?;
        let c2 = c * c;
        out.penalty += c2 * cut_mode_penalty(lambda, alpha, d, rho);
        out.w0_harmonic += c2 * ((alpha * alpha + lambda) / (2.0 * alpha + df - 2.0) - 1.0);
        out.w0_z += c2 * (lambda - (df - 1.0)) / df;
    }
    out.w0_cut = out.w0_harmonic + out.penalty;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HighModeReport {
    pub best: HighModeEnergies,
    /// `(alpha_k - 1) / (d + alpha_k - 1)` for the lowest active mode.
    pub target_epsilon: f64,
    /// `1 - W_0(psi_rho h_g) / W_0(z_g)`.
    pub achieved_epsilon: f64,
    /// `W_0(psi_rho h_g) <= (1 - target / 2) W_0(z_g)`.
    pub verified: bool,
}

/// Scans the cutoff radius over [`RHO_CANDIDATES`] and keeps the best.
pub fn high_mode_scan(g_modes: &[(f64, f64)], d: Dim) -> Result<HighModeReport> {
    check_modes(g_modes, d)?;
    let mut best: Option<HighModeEnergies> = None;
    for rho in RHO_CANDIDATES {
        let e = high_mode_competitor(g_modes, d, rho)?;
        if best.is_none_or(|b| e.w0_cut < b.w0_cut) {
            best = Some(e);
        }
    }
    let best = best.expect("nonempty candidates");
    let df = d.f();
    let target_epsilon = g_modes
        .iter()
        .filter(|(_, c)| *c != 0.0)
        .map(|&(l, _)| homogeneity_exponent(l, d).map(|a| (a - 1.0) / (df + a - 1.0)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let target_epsilon = if target_epsilon.is_finite() { target_epsilon } else { 0.0 };
    let achieved_epsilon = if best.w0_z > 0.0 { 1.0 - best.w0_cut / best.w0_z } else { 0.0 };
    let verified = best.w0_cut <= (1.0 - 0.5 * target_epsilon) * best.w0_z + 1e-15;
    Ok(HighModeReport { best, target_epsilon, achieved_epsilon, verified })
}

// ---------------------------------------------------------------------------
// Traces

/// Axisymmetric trace `kappa phi_S + sum c_j phi_j^S` on the shifted band `S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub kappa: f64,
    /// Outward offsets `(a_lo, a_hi)` of the two boundary circles.
    pub band_shift: (f64, f64),
    /// `(j, c_j)` with `j >= 2` the Dirichlet eigenindex on `S`.
    pub high_modes: Vec<(usize, f64)>,
}

impl Trace {
    pub fn of_cone(cone: &ConeModel) -> Trace {
        Trace { kappa: cone.kappa0, band_shift: (0.0, 0.0), high_modes: Vec::new() }
    }

    pub fn band(&self, cone: &ConeModel) -> Result<Band> {
        cone.band().shifted(self.band_shift.0, self.band_shift.1)
    }

    /// Symmetric part of the shift, the dilation direction.
    pub fn dilation(&self) -> f64 {
        0.5 * (self.band_shift.0 + self.band_shift.1)
    }

    /// Antisymmetric part of the shift.
    pub fn tilt(&self) -> f64 {
        0.5 * (self.band_shift.1 - self.band_shift.0)
    }

    /// `kappa^2 - kappa0^2`.
    pub fn s_cubed(&self, cone: &ConeModel) -> f64 {
        self.kappa * self.kappa - cone.kappa0_sq()
    }

    pub fn max_index(&self) -> usize {
        self.high_modes.iter().map(|(j, _)| *j).max().unwrap_or(1)
    }
}

/// Smallness gate on traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceGate {
    /// Bound on `|a_lo|`, `|a_hi|`.
    pub max_shift: f64,
    /// Bound on `|kappa / kappa0 - 1|`.
    pub max_kappa_dev: f64,
    /// Bound on `|c_j| / kappa0`.
    pub max_mode: f64,
    /// Largest admitted eigenindex.
    pub max_index: usize,
}

impl Default for TraceGate {
    fn default() -> Self {
        TraceGate { max_shift: 0.02, max_kappa_dev: 0.02, max_mode: 0.02, max_index: 6 }
    }
}

impl TraceGate {
    /// Norm part of the gate; positivity is checked by [`resolve_trace`].
    pub fn check(&self, trace: &Trace, cone: &ConeModel) -> Result<()> {
        let shift = trace.band_shift.0.abs().max(trace.band_shift.1.abs());
        let kappa_dev = (trace.kappa / cone.kappa0 - 1.0).abs();
        let mode = trace.high_modes.iter().map(|(_, c)| c.abs()).fold(0.0, f64::max) / cone.kappa0;
        let bad_index = trace.high_modes.iter().any(|(j, _)| *j < 2 || *j > self.max_index);
        if !(shift <= self.max_shift && kappa_dev <= self.max_kappa_dev && mode <= self.max_mode) || bad_index {
            return Err(Error::Precondition(format!(
                "trace outside gate: shift {shift:e} (max {:e}), kappa deviation {kappa_dev:e} (max {:e}), \
                 mode size {mode:e} (max {:e}), eigenindex max {} (admitted 2..={})",
                self.max_shift,
                self.max_kappa_dev,
                self.max_mode,
                trace.max_index(),
                self.max_index
            )));
        }
        Ok(())
    }
}

/// A Dirichlet eigenmode of the trace band, unit-normalised on the sphere.
#[derive(Debug, Clone)]
pub struct HighMode {
    pub index: usize,
    pub coeff: f64,
    pub eigenvalue: f64,
    pub alpha: f64,
    pub profile: Profile,
}

/// A trace resolved into profiles.
#[derive(Debug, Clone)]
pub struct ResolvedTrace {
    pub band: Band,
    pub first: Profile,
    pub modes: Vec<HighMode>,
    pub field: SliceField,
}

fn first_mode(band: Band) -> Result<Profile> {
    let pair = sturm::first_eigenpair(&RadialOperator::new(band, 0.0)?, SLICE_ORDER)?;
    Ok(pair.profile.scaled(1.0 / SphereGeom::new(band.d).area_dm2.sqrt()))
}

/// Solves the eigenmodes of the trace band and checks that the trace is
/// positive inside it.
pub fn resolve_trace(trace: &Trace, cone: &ConeModel) -> Result<ResolvedTrace> {
    let band = trace.band(cone)?;
    let first = first_mode(band)?;
    let root_area = cone.area_dm2().sqrt();
    let modes = if trace.high_modes.is_empty() {
        Vec::new()
    } else {
        let op = RadialOperator::new(band, 0.0)?;
        let pairs = sturm::eigen_solve(&op, trace.max_index(), SolverConfig::default())?;
        trace
            .high_modes
            .iter()
            .map(|&(j, c)| {
                let pair = &pairs[j - 1];
                Ok(HighMode {
                    index: j,
                    coeff: c,
                    eigenvalue: pair.eigenvalue,
                    alpha: homogeneity_exponent(pair.eigenvalue, cone.d)?,
                    profile: pair.profile.scaled(1.0 / root_area),
                })
            })
            .collect::<Result<Vec<_>>>()?
    };
    let order = modes.iter().map(|m| m.profile.order()).fold(first.order(), usize::max);
    let mut values = first.scaled(trace.kappa).resample(order)?.values;
    for m in &modes {
        for (v, p) in values.iter_mut().zip(&m.profile.values) {
            *v += m.coeff * p;
        }
    }
    let combined = Profile::from_values(band, values)?;
    let slopes = combined.derivative_values();
    let interior_positive =
        combined.values[1..combined.order()].iter().all(|v| *v > 0.0) && combined.sign_changes().is_empty();
    if !(interior_positive && slopes[0] > 0.0 && slopes[combined.order()] < 0.0) {
        return Err(Error::Precondition("trace changes sign inside its band".into()));
    }
    Ok(ResolvedTrace { band, first, modes, field: SliceField::from_profile(combined) })
}

/// `d lambda_1 / d sigma` at the cone for the symmetric outward shift `sigma`.
pub fn dilation_slope(cone: &ConeModel) -> f64 {
    -band_perimeter(&cone.band()) / cone.kappa0_sq()
}

// ---------------------------------------------------------------------------
// Competitor

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaSample {
    pub r: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompetitorSlice {
    pub r: f64,
    pub kappa: f64,
    pub band_shift: (f64, f64),
    /// `(j, c_j psi_rho(r) r^{alpha_j - 1})` on the trace band.
    pub high_modes: Vec<(usize, f64)>,
}

/// The competitor `h = r v_r` for a trace.
#[derive(Debug, Clone)]
pub struct Competitor {
    pub trace: Trace,
    pub eps: f64,
    pub cutoff_rho: f64,
    pub r_grid: Vec<f64>,
    pub slices: Vec<CompetitorSlice>,
    pub eta_schedules: Vec<EtaSample>,
    d: Dim,
    base: Band,
    kappa0_sq: f64,
    slope: f64,
    modes: Vec<HighMode>,
}

impl Competitor {
    pub fn eta1(&self, r: f64) -> f64 {
        1.0 - (self.d.f() + 1.0) * self.eps * (1.0 - r)
    }

    pub fn eta2(&self, _r: f64) -> f64 {
        1.0
    }

    pub fn eta3(&self, r: f64) -> f64 {
        1.0 - self.eps * self.slope * (1.0 - r)
    }

    /// `a = sign(s0) d lambda(0)[zeta_1]`.
    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn slice_at(&self, r: f64) -> CompetitorSlice {
        let (sigma, tau) = (self.trace.dilation(), self.trace.tilt());
        let (lo, hi) = self.trace.band_shift;
        let (d1, d2) = ((self.eta1(r) - 1.0) * sigma, (self.eta2(r) - 1.0) * tau);
        let gap = self.trace.kappa * self.trace.kappa - self.kappa0_sq;
        let psi = cutoff(self.cutoff_rho, self.d, r);
        CompetitorSlice {
            r,
            kappa: (self.kappa0_sq + self.eta3(r) * gap).sqrt(),
            band_shift: (lo + d1 - d2, hi + d1 + d2),
            high_modes: self
                .modes
                .iter()
                .map(|m| (m.index, if psi == 0.0 { 0.0 } else { m.coeff * psi * r.powf(m.alpha - 1.0) }))
                .collect(),
        }
    }

    /// High-mode part `(lambda_j, c_j)` of the trace.
    pub fn g_modes(&self) -> Vec<(f64, f64)> {
        self.modes.iter().map(|m| (m.eigenvalue, m.coeff)).collect()
    }
}

impl SliceFlow for Competitor {
    fn dim(&self) -> Dim {
        self.d
    }

    fn slice(&self, t: f64) -> Result<SliceField> {
        let s = self.slice_at(t);
        let band = self.base.shifted(s.band_shift.0, s.band_shift.1)?;
        let mut field = SliceField::from_profile(first_mode(band)?.scaled(s.kappa));
        if s.high_modes.iter().any(|(_, c)| *c != 0.0) {
            let mut values = vec![0.0; self.modes[0].profile.values.len()];
            for (m, (_, c)) in self.modes.iter().zip(&s.high_modes) {
                for (v, p) in values.iter_mut().zip(&m.profile.values) {
                    *v += c * p;
                }
            }
            field = field.with_part(Profile::from_values(self.modes[0].profile.band, values)?);
        }
        Ok(field)
    }

    fn radial_breaks(&self) -> Vec<f64> {
        vec![self.cutoff_rho, 2.0 * self.cutoff_rho, 0.5]
    }
}

/// Builds the competitor of the integrable case for flow parameter `eps`.
pub fn build_competitor(trace: &Trace, cone: &ConeModel, eps: f64, gate: &TraceGate) -> Result<Competitor> {
    gate.check(trace, cone)?;
    let resolved = resolve_trace(trace, cone)?;
    let d = cone.d;
    let s3 = trace.s_cubed(cone);
    let slope = if s3 == 0.0 { 0.0 } else { s3.signum() * trace.dilation() * dilation_slope(cone) };
    let eps_max = max_flow_parameter(d, slope);
    if !(eps >= 0.0 && eps <= eps_max) {
        return Err(Error::Domain(format!("flow parameter {eps} outside [0, {eps_max}]")));
    }
    let cutoff_rho = if resolved.modes.is_empty() {
        RHO_CANDIDATES[0]
    } else {
        let g: Vec<(f64, f64)> = resolved.modes.iter().map(|m| (m.eigenvalue, m.coeff)).collect();
        high_mode_scan(&g, d)?.best.rho
    };
    let mut comp = Competitor {
        trace: trace.clone(),
        eps,
        cutoff_rho,
        r_grid: Vec::new(),
        slices: Vec::new(),
        eta_schedules: Vec::new(),
        d,
        base: cone.band(),
        kappa0_sq: cone.kappa0_sq(),
        slope,
        modes: resolved.modes,
    };
    comp.r_grid = radial_rule(&comp.radial_breaks()).into_iter().map(|(r, _)| r).chain([1.0]).collect();
    comp.slices = comp.r_grid.iter().map(|&r| comp.slice_at(r)).collect();
    comp.eta_schedules = comp
        .r_grid
        .iter()
        .map(|&r| EtaSample { r, eta1: comp.eta1(r), eta2: comp.eta2(r), eta3: comp.eta3(r) })
        .collect();
    Ok(comp)
}

/// Largest flow parameter keeping `eta_1 >= 0` and `eta_3 >= 1/2` with margin.
pub fn max_flow_parameter(d: Dim, slope: f64) -> f64 {
    let mut eps = 0.9 / (d.f() + 1.0);
    if slope != 0.0 {
        eps = eps.min(0.5 / slope.abs());
    }
    eps
}

// ---------------------------------------------------------------------------
// End-to-end check

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpiConfig {
    pub gate: TraceGate,
    /// Smallest flow parameter tried while halving.
    pub min_eps: f64,
}

impl Default for EpiConfig {
    fn default() -> Self {
        EpiConfig { gate: TraceGate::default(), min_eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpiReport {
    pub w_z: f64,
    pub w_h: f64,
    pub w_b: f64,
    /// `1 - (W(h) - W(b)) / (W(z) - W(b))`, absent when `W(z) <= W(b)`.
    pub epsilon_hat: Option<f64>,
    pub gamma_fit: Option<f64>,
    /// `W(z) <= W(b)`: nothing to prove.
    pub trivial: bool,
    /// `W(h) - W(b) <= (1 - epsilon_hat)(W(z) - W(b))` with `epsilon_hat > 0`.
    pub verified: bool,
    /// Flow parameter of the best competitor.
    pub eps: f64,
    pub rho: f64,
    /// `epsilon_hat` predicted by the quadratic model in `eps`.
    pub quadratic_prediction: Option<f64>,
    /// Worst relative gap between the two Weiss assemblies.
    pub slicing_residual: f64,
    pub evaluations: usize,
}

pub fn verify_epi(trace: &Trace, cone: &ConeModel) -> Result<EpiReport> {
    verify_epi_with(trace, cone, &EpiConfig::default())
}

pub fn verify_epi_with(trace: &Trace, cone: &ConeModel, cfg: &EpiConfig) -> Result<EpiReport> {
    cfg.gate.check(trace, cone)?;
    let d = cone.d;
    let w_b = cone.m0 / d.f();
    let resolved = resolve_trace(trace, cone)?;
    let w_z = resolved.field.energy()?.e_total / d.f();
    let gap = w_z - w_b;
    let base = build_competitor(trace, cone, 0.0, &cfg.gate)?;
    let mut report = EpiReport {
        w_z,
        w_h: w_z,
        w_b,
        epsilon_hat: None,
        gamma_fit: None,
        trivial: gap <= TRIVIAL_GAP * w_b,
        verified: false,
        eps: 0.0,
        rho: base.cutoff_rho,
        quadratic_prediction: None,
        slicing_residual: 0.0,
        evaluations: 0,
    };
    if report.trivial {
        return Ok(report);
    }
    let eps_max = max_flow_parameter(d, base.slope());
    let mut tried: Vec<(f64, f64)> = Vec::new();
    let mut evaluate = |eps: f64, report: &mut EpiReport| -> Result<f64> {
        let comp = build_competitor(trace, cone, eps, &cfg.gate)?;
        let w = weiss_energy(&comp)?;
        report.slicing_residual = report.slicing_residual.max(w.residual());
        report.evaluations += 1;
        tried.push((eps, w.value));
        Ok(w.value)
    };
    let f0 = evaluate(0.0, &mut report)?;
    let e1 = 0.25 * eps_max;
    let f1 = evaluate(e1, &mut report)?;
    let f2 = evaluate(2.0 * e1, &mut report)?;
    let curvature = (f2 - 2.0 * f1 + f0) / (2.0 * e1 * e1);
    let rate = -((f1 - f0) / e1 - curvature * e1);
    let mut eps = if rate > 0.0 && curvature > 0.0 {
        (rate / (2.0 * curvature)).clamp(cfg.min_eps, eps_max)
    } else if rate > 0.0 {
        eps_max
    } else {
        e1
    };
    let model = f0 - rate * eps + curvature * eps * eps;
    report.quadratic_prediction = Some(1.0 - (model - w_b) / gap);
    loop {
        let f = evaluate(eps, &mut report)?;
        if f < w_z || eps < 2.0 * cfg.min_eps {
            break;
        }
        eps *= 0.5;
    }
    let (best_eps, best_w) = tried.iter().copied().fold((0.0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    report.eps = best_eps;
    report.w_h = best_w;
    let eps_hat = 1.0 - (best_w - w_b) / gap;
    report.epsilon_hat = Some(eps_hat);
    report.verified = eps_hat > 0.0;
    Ok(report)
}

/// Random gated traces with `W(z) > W(b)`, reproducible from `seed`.
pub fn sample_traces(cone: &ConeModel, gate: &TraceGate, count: usize, seed: u64) -> Result<Vec<Trace>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w_b = cone.m0 / cone.d.f();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > 100 * count.max(1) {
            return Err(Error::NoConvergence { what: "trace sampler acceptance".into(), last: vec![out.len() as f64] });
        }
        let mut trace = Trace {
            kappa: cone.kappa0 * (1.0 + rng.gen_range(-gate.max_kappa_dev..=gate.max_kappa_dev)),
            band_shift: (
                rng.gen_range(-gate.max_shift..=gate.max_shift),
                rng.gen_range(-gate.max_shift..=gate.max_shift),
            ),
            high_modes: Vec::new(),
        };
        let n_modes = rng.gen_range(0..=2usize).min(gate.max_index.saturating_sub(1));
        while trace.high_modes.len() < n_modes {
            let j = rng.gen_range(2..=gate.max_index);
            if trace.high_modes.iter().all(|(k, _)| *k != j) {
                let c = cone.kappa0 * rng.gen_range(-gate.max_mode..=gate.max_mode);
                trace.high_modes.push((j, c));
            }
        }
        trace.high_modes.sort_by_key(|(j, _)| *j);
        if gate.check(&trace, cone).is_err() {
            continue;
        }
        let Ok(resolved) = resolve_trace(&trace, cone) else {
            continue;
        };
        if resolved.field.energy()?.e_total / cone.d.f() - w_b > TRIVIAL_GAP * w_b {
            out.push(trace);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Finite-dimensional reduction and descent

/// A smooth energy on `R^n`.
pub trait Potential: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;
}

/// An energy given by closures for its value and gradient.
pub struct AnalyticPotential<V, G> {
    dim: usize,
    value: V,
    gradient: G,
}

impl<V, G> AnalyticPotential<V, G>
where
    V: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Sync,
{
    pub fn new(dim: usize, value: V, gradient: G) -> Self {
        AnalyticPotential { dim, value, gradient }
    }
}

impl<V, G> Potential for AnalyticPotential<V, G>
where
    V: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        check_len(x, self.dim)?;
        Ok((self.value)(x))
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(x, self.dim)?;
        Ok((self.gradient)(x))
    }
}

fn check_len(x: &[f64], n: usize) -> Result<()> {
    if x.len() != n {
        return Err(Error::Domain(format!("point of dimension {} for an energy on R^{n}", x.len())));
    }
    Ok(())
}

const NEWTON_TOL: f64 = 1e-10;
const NEWTON_ITERS: usize = 60;

/// Energy restricted to a kernel, the complement solved by Newton iteration.
pub struct Reduction<P> {
    full: P,
    kernel: DMatrix<f64>,
    complement: DMatrix<f64>,
}

fn orthonormalize(vectors: &[DVector<f64>], extra: impl Iterator<Item = DVector<f64>>) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for v in vectors.iter().cloned().chain(extra) {
        let mut w = v.clone();
        for b in &basis {
            w -= b * b.dot(&w);
        }
        for b in &basis {
            w -= b * b.dot(&w);
        }
        let norm = w.norm();
        if norm > 1e-8 * v.norm().max(1e-300) {
            basis.push(w / norm);
        }
    }
    basis
}

/// Lyapunov-Schmidt reduction of `full` onto the span of `kernel_basis`.
pub fn ls_reduce<P: Potential>(full: P, kernel_basis: &[Vec<f64>]) -> Result<Reduction<P>> {
    let n = full.dim();
    if kernel_basis.is_empty() || kernel_basis.len() > n || kernel_basis.iter().any(|v| v.len() != n) {
        return Err(Error::Domain(format!("kernel basis of {} vectors in R^{n}", kernel_basis.len())));
    }
    let origin_grad = DVector::from_vec(full.gradient(&vec![0.0; n])?).norm();
    if origin_grad > 1e-8 {
        return Err(Error::Precondition(format!("gradient {origin_grad:e} at the origin does not vanish")));
    }
    let given: Vec<DVector<f64>> = kernel_basis.iter().map(|v| DVector::from_column_slice(v)).collect();
    let kernel = orthonormalize(&given, std::iter::empty());
    if kernel.len() != given.len() {
        return Err(Error::Domain("kernel basis is linearly dependent".into()));
    }
    let all = orthonormalize(&kernel, (0..n).map(|i| DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 })));
    let complement = &all[kernel.len()..];
    Ok(Reduction {
        full,
        kernel: DMatrix::from_columns(&kernel),
        complement: if complement.is_empty() { DMatrix::zeros(n, 0) } else { DMatrix::from_columns(complement) },
    })
}

impl<P: Potential> Reduction<P> {
    pub fn kernel_dim(&self) -> usize {
        self.kernel.ncols()
    }

    fn check_mu(&self, mu: &[f64]) -> Result<()> {
        check_len(mu, self.kernel_dim())
    }

    fn complement_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let g = DVector::from_vec(self.full.gradient(x.as_slice())?);
        Ok(self.complement.transpose() * g)
    }

    /// `Upsilon(mu)` in complement coordinates together with the final residual.
    fn solve_complement(&self, mu: &[f64]) -> Result<(DVector<f64>, f64)> {
        self.check_mu(mu)?;
        let m = self.complement.ncols();
        let anchor = &self.kernel * DVector::from_column_slice(mu);
        let mut y = DVector::zeros(m);
        if m == 0 {
            return Ok((y, 0.0));
        }
        for _ in 0..NEWTON_ITERS {
            let x = &anchor + &self.complement * &y;
            let g = self.complement_gradient(&x)?;
            let residual = g.norm();
            if residual <= 1e-14 {
                return Ok((y, residual));
            }
            let h = 1e-6 * (1.0 + x.norm());
            let mut jac = DMatrix::zeros(m, m);
            for i in 0..m {
                let dir = self.complement.column(i) * h;
                let gp = self.complement_gradient(&(&x + &dir))?;
                let gm = self.complement_gradient(&(&x - &dir))?;
                jac.set_column(i, &((gp - gm) / (2.0 * h)));
            }
            let step = jac.lu().solve(&g).ok_or_else(|| Error::NoConvergence {
                what: "Lyapunov-Schmidt Newton iteration (singular complement Hessian)".into(),
                last: vec![residual],
            })?;
            y -= &step;
            if step.norm() <= 1e-15 * (1.0 + y.norm()) {
                break;
            }
        }
        let x = &anchor + &self.complement * &y;
        let residual = self.complement_gradient(&x)?.norm();
        if residual > NEWTON_TOL {
            return Err(Error::NoConvergence {
                what: "Lyapunov-Schmidt Newton iteration".into(),
                last: vec![residual],
            });
        }
        Ok((y, residual))
    }

    /// `Upsilon(mu)` as a vector of the full space.
    pub fn upsilon(&self, mu: &[f64]) -> Result<Vec<f64>> {
        let (y, _) = self.solve_complement(mu)?;
        Ok((&self.complement * y).as_slice().to_vec())
    }

    /// `mu + Upsilon(mu)` in the full space.
    pub fn lift(&self, mu: &[f64]) -> Result<Vec<f64>> {
        let (y, _) = self.solve_complement(mu)?;
        Ok((&self.kernel * DVector::from_column_slice(mu) + &self.complement * y).as_slice().to_vec())
    }

    /// Norm of the complement gradient at the lifted point.
    pub fn complement_residual(&self, mu: &[f64]) -> Result<f64> {
        Ok(self.solve_complement(mu)?.1)
    }

    /// Largest entry of `D Upsilon(0)`, by central differences.
    pub fn upsilon_derivative_at_zero(&self) -> Result<f64> {
        let k = self.kernel_dim();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..k {
            let mut e = vec![0.0; k];
            e[i] = h;
            let plus = self.upsilon(&e)?;
            e[i] = -h;
            let minus = self.upsilon(&e)?;
            for (p, m) in plus.iter().zip(&minus) {
                worst = worst.max(((p - m) / (2.0 * h)).abs());
            }
        }
        Ok(worst)
    }

    /// Gradient of the full energy projected on the kernel at the lifted point.
    pub fn projected_gradient(&self, mu: &[f64]) -> Result<Vec<f64>> {
        let x = self.lift(mu)?;
        let g = DVector::from_vec(self.full.gradient(&x)?);
        Ok((self.kernel.transpose() * g).as_slice().to_vec())
    }
}

impl<P: Potential> Potential for Reduction<P> {
    fn dim(&self) -> usize {
        self.kernel_dim()
    }

    fn value(&self, mu: &[f64]) -> Result<f64> {
        self.full.value(&self.lift(mu)?)
    }

    fn gradient(&self, mu: &[f64]) -> Result<Vec<f64>> {
        self.projected_gradient(mu)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub state: Vec<f64>,
    pub g_value: f64,
    pub grad_norm: f64,
    pub time: f64,
    /// `int_0^t |grad G|`.
    pub dissipated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTrace {
    pub states: Vec<FlowState>,
    /// Time at which the gradient fell below [`FREEZE_GRADIENT`].
    pub frozen_at: Option<f64>,
}

impl FlowTrace {
    /// Largest increase of `G` between consecutive states.
    pub fn max_increase(&self) -> f64 {
        self.states.windows(2).map(|w| w[1].g_value - w[0].g_value).fold(0.0, f64::max)
    }

    /// Largest violation of `G(t) + int_0^t |grad G| = G(0)`.
    pub fn dissipation_gap(&self) -> f64 {
        let g0 = self.states[0].g_value;
        self.states.iter().map(|s| (s.g_value + s.dissipated - g0).abs()).fold(0.0, f64::max)
    }

    pub fn last(&self) -> &FlowState {
        self.states.last().expect("trace has a start state")
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Unit-speed descent `x' = -grad G / |grad G|`, frozen once the gradient vanishes.
pub fn gradient_flow<P: Potential + ?Sized>(g: &P, start: &[f64], t_end: f64) -> Result<FlowTrace> {
    check_len(start, g.dim())?;
    if !(t_end > 0.0) {
        return Err(Error::Domain(format!("flow end time {t_end} must be positive")));
    }
    let n = start.len();
    let snapshot = |t: f64, y: &[f64]| -> Result<FlowState> {
        let x = &y[..n];
        Ok(FlowState {
            state: x.to_vec(),
            g_value: g.value(x)?,
            grad_norm: norm(&g.gradient(x)?),
            time: t,
            dissipated: y[n],
        })
    };
    let mut y0 = start.to_vec();
    y0.push(0.0);
    let first = snapshot(0.0, &y0)?;
    if first.grad_norm <= FREEZE_GRADIENT {
        let mut last = first.clone();
        last.time = t_end;
        return Ok(FlowTrace { states: vec![first, last], frozen_at: Some(0.0) });
    }
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let rhs = |_t: f64, y: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; n + 1];
        match g.gradient(&y[..n]) {
            Ok(grad) => {
                let size = norm(&grad);
                if size > FREEZE_GRADIENT {
                    for (o, gi) in out.iter_mut().zip(&grad) {
                        *o = -gi / size;
                    }
                    out[n] = size;
                }
            }
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
            }
        }
        out
    };
    let mut states = vec![first];
    let mut frozen_at = None;
    let tol = Tolerance { rtol: 1e-11, atol: 1e-13 };
    let (t_stop, y_stop) = ode::integrate(rhs, 0.0, &y0, t_end, tol, |t, y| match snapshot(t, y) {
        Ok(s) => {
            let frozen = s.grad_norm <= FREEZE_GRADIENT;
            states.push(s);
            if frozen {
                frozen_at = Some(t);
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        }
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            ControlFlow::Break(())
        }
    })?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    if t_stop < t_end {
        let mut last = snapshot(t_stop, &y_stop)?;
        last.time = t_end;
        states.push(last);
    }
    Ok(FlowTrace { states, frozen_at })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LojasiewiczFit {
    pub gamma: f64,
    /// Smallest `C` with `|G|^{1-gamma} <= C |grad G|` on the samples.
    pub constant: f64,
    pub residual_rms: f64,
    pub samples: usize,
}

/// Width in `log |G|` below which consecutive samples are merged.
const FIT_BIN: f64 = 0.05;

/// Largest fitted exponent accepted.
pub const GAMMA_CEILING: f64 = 0.55;

/// Least-squares fit of `log |grad G| = (1 - gamma) log |G| + const` along a trace.
pub fn lojasiewicz_fit(trace: &FlowTrace) -> Result<LojasiewiczFit> {
    let mut points: Vec<(f64, f64)> = trace
        .states
        .iter()
        .filter(|s| s.g_value.abs() > 0.0 && s.grad_norm > FREEZE_GRADIENT)
        .map(|s| (s.g_value.abs().ln(), s.grad_norm.ln()))
        .collect();
    points.dedup_by(|a, b| (a.0 - b.0).abs() < FIT_BIN);
    let spread = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max)
        - points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    if points.len() < 3 || !(spread > 1e-6) {
        return Err(Error::Fit(format!("degenerate trace: {} usable samples", points.len())));
    }
    let (slope, intercept) = fit_line(&points);
    let gamma = 1.0 - slope;
    let residual_rms =
        (points.iter().map(|(x, y)| (y - slope * x - intercept).powi(2)).sum::<f64>() / points.len() as f64).sqrt();
    let constant = points.iter().map(|(x, y)| (slope * x - y).exp()).fold(0.0, f64::max);
    if !(gamma > 0.0 && gamma <= GAMMA_CEILING) {
        return Err(Error::Fit(format!("fitted exponent {gamma} outside (0, {GAMMA_CEILING}]")));
    }
    Ok(LojasiewiczFit { gamma, constant, residual_rms, samples: points.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cutoff_is_continuous() {
        let d = Dim::new(7).unwrap();
        assert_eq!(cutoff(0.1, d, 0.1), 0.0);
        assert!((cutoff(0.1, d, 0.2 - 1e-12) - 1.0).abs() < 1e-9);
        assert_eq!(cutoff(0.1, d, 0.5), 1.0);
    }

    #[test]
    fn zero_modes_have_zero_energy() {
        let e = high_mode_competitor(&[], Dim::new(7).unwrap(), 0.25).unwrap();
        assert_eq!((e.w0_cut, e.w0_harmonic, e.w0_z), (0.0, 0.0, 0.0));
    }

    #[test]
    fn low_modes_are_rejected() {
        let err = high_mode_competitor(&[(6.0, 1.0)], Dim::new(7).unwrap(), 0.25).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }
}
