//! One function per subcommand, each returning an [`Outcome`].

use crate::config::RunConfig;
use crate::report::{Status, Table};
use crate::{CliError, Command};
use conelab::cone::{build_cone, ConeModel};
use conelab::decay::{self, DecayInput};
use conelab::epiflow::{
    self, gradient_flow, lojasiewicz_fit, ls_reduce, AnalyticPotential, EpiConfig, EpiReport, FlowTrace, Trace,
    TraceGate,
};
use conelab::geometry::Dim;
use conelab::integrability::{self, IntegrabilityVerdict};
use conelab::secondvar::{self, Classification};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// Result of a command before it is wrapped in the report envelope.
#[derive(Debug)]
pub struct Outcome {
    pub status: Status,
    pub result: Value,
    pub tolerances: BTreeMap<String, f64>,
    pub csv: Option<Table>,
    /// Text for stderr.
    pub human: Option<String>,
}

impl Outcome {
    fn new(pass: bool, result: Value) -> Outcome {
        Outcome {
            status: if pass { Status::Pass } else { Status::Fail },
            result,
            tolerances: BTreeMap::new(),
            csv: None,
            human: None,
        }
    }

    fn tolerance(mut self, name: &str, value: f64) -> Outcome {
        self.tolerances.insert(name.to_string(), value);
        self
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report values serialize")
}

fn num(x: f64) -> String {
    x.to_string()
}

fn dim_of(cfg: &RunConfig, key: &str, default: Option<u32>) -> Result<Dim, CliError> {
    let d = match default {
        Some(d) => cfg.get_or(key, d)?,
        None => cfg.require(key)?,
    };
    Ok(Dim::new(d)?)
}

fn reject_csv(cfg: &RunConfig, command: &str) -> Result<(), CliError> {
    match cfg.raw("csv") {
        Some(_) => Err(CliError::Usage(format!("`{command}` has no CSV output"))),
        None => Ok(()),
    }
}

pub fn dispatch(command: &Command, cfg: &RunConfig) -> Result<Outcome, CliError> {
    match command {
        Command::Cone { .. } => cone(cfg),
        Command::Spectrum { .. } => spectrum(cfg),
        Command::Integrability { .. } => integrability(cfg),
        Command::Epi { .. } => epi(cfg),
        Command::Flow { .. } => flow(cfg),
        Command::Decay { .. } => decay(cfg),
    }
}

#[derive(Serialize)]
struct ConeSummary<'a> {
    sin_theta0: f64,
    #[serde(flatten)]
    model: &'a ConeModel,
}

pub fn cone(cfg: &RunConfig) -> Result<Outcome, CliError> {
    reject_csv(cfg, "cone")?;
    let d = dim_of(cfg, "dim", None)?;
    let check = cfg.flag("check")?;
    let model = build_cone(d)?;
    let summary = ConeSummary { sin_theta0: model.theta0.sin(), model: &model };
    if !check {
        return Ok(Outcome::new(true, json!({ "cone": to_value(&summary) })));
    }
    let checks = model.check();
    let pass = checks.iter().all(|c| c.pass);
    let mut human = String::new();
    for c in &checks {
        let _ = writeln!(human, "{:4}  {:<42} {:>12.4e}", if c.pass { "ok" } else { "FAIL" }, c.name, c.value);
    }
    let mut out = Outcome::new(pass, json!({ "cone": to_value(&summary), "checks": to_value(&checks) }));
    for c in &checks {
        out = out.tolerance(&c.name, c.tolerance);
    }
    out.human = Some(human);
    Ok(out)
}

pub fn spectrum(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let d = dim_of(cfg, "dim", None)?;
    let ell_max: u32 = cfg.get_or("ell_max", 4)?;
    let model = build_cone(d)?;
    let entries = secondvar::spectrum(&model, ell_max)?;
    let index = secondvar::count(&entries, Classification::Negative);
    let kernel = secondvar::count(&entries, Classification::Kernel);
    let positive = secondvar::count(&entries, Classification::Positive);
    let expected_index = u64::from(d.get());
    let pass = index == expected_index && kernel == expected_index - 1;

    let mut table =
        Table::new(vec!["ell", "parity", "multiplicity", "eigenvalue", "classification", "closed_form", "residual"]);
    for e in &entries {
        table.push(vec![
            e.mode.ell.to_string(),
            e.mode.parity.symbol().to_string(),
            e.multiplicity.to_string(),
            num(e.value),
            to_value(&e.classification).as_str().unwrap_or_default().to_string(),
            e.closed_form.as_ref().map(|c| num(c.value)).unwrap_or_default(),
            num(e.residual),
        ]);
    }
    let result = json!({
        "d": d,
        "ell_max": ell_max,
        "index": index,
        "kernel_dim": kernel,
        "positive": positive,
        "expected_index": expected_index,
        "expected_kernel_dim": expected_index - 1,
        "entries": to_value(&entries),
    });
    let mut out = Outcome::new(pass, result).tolerance("kernel", secondvar::KERNEL_TOL);
    out.csv = Some(table);
    Ok(out)
}

#[derive(Serialize)]
struct DimensionReport {
    verdict: IntegrabilityVerdict,
    error_term: integrability::ErrorTermCheck,
    #[serde(skip_serializing_if = "Option::is_none")]
    asymptotic: Option<integrability::AsymptoticReport>,
}

impl DimensionReport {
    fn pass(&self) -> bool {
        self.verdict.integrable && self.asymptotic.as_ref().is_none_or(|a| a.all_pass)
    }
}

fn chain_table(chain: &integrability::BoundChain) -> String {
    let mut text = String::from("d = 7 bound chain\n");
    for s in &chain.steps {
        let _ = writeln!(text, "{:4}  {:<58} {:.10}", if s.pass { "ok" } else { "FAIL" }, s.name, s.computed_value);
    }
    let _ = writeln!(
        text,
        "chain margin {:.6}, boundary value problem {:.6}, {}",
        chain.chain_margin,
        chain.bvp_value,
        if chain.passed { "certified" } else { "not certified" }
    );
    text
}

pub fn integrability(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let lo = dim_of(cfg, "dim", Some(7))?;
    let hi = dim_of(cfg, "dim_max", Some(lo.get()))?;
    if hi < lo {
        return Err(CliError::Usage(format!("dim_max {hi} is below dim {lo}")));
    }
    let ell_max: u32 = cfg.get_or("ell_max", 3)?;
    let asymptotic = cfg.flag("asymptotic")?;
    let certify = cfg.flag("certify_d7")?;

    let dims: Vec<u32> = (lo.get()..=hi.get()).collect();
    let reports = dims
        .par_iter()
        .map(|&d| -> Result<DimensionReport, CliError> {
            let model = build_cone(Dim::new(d)?)?;
            Ok(DimensionReport {
                verdict: integrability::classify(&model, ell_max)?,
                error_term: integrability::error_term_check(&model)?,
                asymptotic: if asymptotic && d >= 21 {
                    Some(integrability::asymptotic_check_for(&model)?)
                } else {
                    None
                },
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let chain = if certify { Some(integrability::verify_d7()?) } else { None };
    let pass = reports.iter().all(DimensionReport::pass) && chain.as_ref().is_none_or(|c| c.passed);

    let mut table = Table::new(vec![
        "d",
        "index",
        "kernel_dim",
        "kernel_is_rotations",
        "negative_modes_integrate_to_zero",
        "zeta1plus_positive",
        "integrable",
        "dilation_value",
        "dilation_lower_bound",
        "asymptotic_pass",
    ]);
    for r in &reports {
        let v = &r.verdict;
        table.push(vec![
            v.d.to_string(),
            v.index_count.to_string(),
            v.kernel_dim.to_string(),
            v.kernel_is_rotations.to_string(),
            v.negative_modes_integrate_to_zero.to_string(),
            v.zeta1plus_positive.to_string(),
            v.integrable.to_string(),
            num(v.dilation_value),
            num(v.dilation_lower_bound),
            r.asymptotic.as_ref().map(|a| a.all_pass.to_string()).unwrap_or_default(),
        ]);
    }
    let mut out = Outcome::new(pass, json!({ "dimensions": to_value(&reports), "certificate": to_value(&chain) }))
        .tolerance("kernel", secondvar::KERNEL_TOL)
        .tolerance("boundary_mean", integrability::MEAN_TOL);
    out.csv = Some(table);
    out.human = chain.as_ref().map(chain_table);
    Ok(out)
}

/// Scenario file for `epi --scenario`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub dim: u32,
    pub traces: Vec<Trace>,
    #[serde(default)]
    pub gate: Option<TraceGate>,
    #[serde(default)]
    pub min_eps: Option<f64>,
}

fn read_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read scenario {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid scenario {}: {e}", path.display())))
}

#[derive(Serialize)]
struct TraceResult {
    trace: Trace,
    report: EpiReport,
}

pub fn epi(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let scenario = cfg.raw("scenario").map(|p| read_scenario(Path::new(p))).transpose()?;
    let d = match &scenario {
        Some(s) if cfg.raw("dim").is_none() => Dim::new(s.dim)?,
        _ => dim_of(cfg, "dim", Some(7))?,
    };
    let base = scenario.as_ref().and_then(|s| s.gate).unwrap_or_default();
    let gate = TraceGate {
        max_shift: cfg.get_or("max_shift", base.max_shift)?,
        max_kappa_dev: cfg.get_or("max_kappa_dev", base.max_kappa_dev)?,
        max_mode: cfg.get_or("max_mode", base.max_mode)?,
        max_index: cfg.get_or("max_index", base.max_index)?,
    };
    let epi_cfg = EpiConfig {
        gate,
        min_eps: cfg
            .get_or("min_eps", scenario.as_ref().and_then(|s| s.min_eps).unwrap_or(EpiConfig::default().min_eps))?,
    };
    let min_epsilon: f64 = cfg.get_or("min_epsilon", 1e-4)?;
    let model = build_cone(d)?;
    let (traces, seed) = match scenario {
        Some(s) => (s.traces, None),
        None => {
            let samples: usize = cfg.get_or("samples", 50)?;
            let seed: u64 = cfg.get_or("seed", 1)?;
            (epiflow::sample_traces(&model, &gate, samples, seed)?, Some(seed))
        }
    };
    let results = traces
        .into_par_iter()
        .map(|trace| {
            let report = epiflow::verify_epi_with(&trace, &model, &epi_cfg)?;
            Ok(TraceResult { trace, report })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let accepted = |r: &EpiReport| r.trivial || (r.verified && r.epsilon_hat.is_some_and(|e| e >= min_epsilon));
    let failures = results.iter().filter(|r| !accepted(&r.report)).count();
    let worst =
        results.iter().filter(|r| !r.report.trivial).filter_map(|r| r.report.epsilon_hat).fold(f64::INFINITY, f64::min);

    let mut table = Table::new(vec![
        "trace",
        "kappa",
        "shift_lo",
        "shift_hi",
        "modes",
        "w_z",
        "w_h",
        "w_b",
        "epsilon_hat",
        "eps",
        "rho",
    ]);
    for (k, r) in results.iter().enumerate() {
        let modes: Vec<String> = r.trace.high_modes.iter().map(|(j, c)| format!("{j}:{c}")).collect();
        table.push(vec![
            k.to_string(),
            num(r.trace.kappa),
            num(r.trace.band_shift.0),
            num(r.trace.band_shift.1),
            modes.join(" "),
            num(r.report.w_z),
            num(r.report.w_h),
            num(r.report.w_b),
            r.report.epsilon_hat.map(num).unwrap_or_default(),
            num(r.report.eps),
            num(r.report.rho),
        ]);
    }
    let result = json!({
        "d": d,
        "seed": seed,
        "gate": to_value(&gate),
        "count": results.len(),
        "failures": failures,
        "worst_epsilon_hat": worst.is_finite().then_some(worst),
        "traces": to_value(&results),
    });
    let mut out = Outcome::new(failures == 0, result)
        .tolerance("min_epsilon_hat", min_epsilon)
        .tolerance("min_eps", epi_cfg.min_eps);
    out.csv = Some(table);
    Ok(out)
}

/// Model energies for `flow --energy`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelEnergy {
    Quadratic,
    Quartic,
    Mixed,
    Toy,
    Flat,
}

impl std::str::FromStr for ModelEnergy {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "quadratic" => Ok(ModelEnergy::Quadratic),
            "quartic" => Ok(ModelEnergy::Quartic),
            "mixed" => Ok(ModelEnergy::Mixed),
            "toy" => Ok(ModelEnergy::Toy),
            "flat" => Ok(ModelEnergy::Flat),
            other => Err(CliError::Usage(format!("unknown energy `{other}` (quadratic, quartic, mixed, toy, flat)"))),
        }
    }
}

impl ModelEnergy {
    fn default_start(self) -> Vec<f64> {
        match self {
            ModelEnergy::Quadratic | ModelEnergy::Quartic => vec![0.5],
            ModelEnergy::Toy => vec![0.3],
            ModelEnergy::Mixed | ModelEnergy::Flat => vec![0.5, 0.5],
        }
    }

    /// Exponent `p` of `G(t) = (|x0| - t)^p` along unit-speed descent.
    fn power(self) -> Option<i32> {
        match self {
            ModelEnergy::Quadratic => Some(2),
            ModelEnergy::Quartic | ModelEnergy::Toy => Some(4),
            ModelEnergy::Mixed | ModelEnergy::Flat => None,
        }
    }

    fn run(self, start: &[f64], t_end: f64) -> Result<FlowTrace, CliError> {
        let power = |p: i32| {
            AnalyticPotential::new(
                1,
                move |x: &[f64]| x[0].powi(p),
                move |x: &[f64]| vec![f64::from(p) * x[0].powi(p - 1)],
            )
        };
        let trace = match self {
            ModelEnergy::Quadratic => gradient_flow(&power(2), start, t_end)?,
            ModelEnergy::Quartic => gradient_flow(&power(4), start, t_end)?,
            ModelEnergy::Mixed => {
                let g = AnalyticPotential::new(
                    2,
                    |x: &[f64]| x[0] * x[0] + x[1].powi(4),
                    |x: &[f64]| vec![2.0 * x[0], 4.0 * x[1].powi(3)],
                );
                gradient_flow(&g, start, t_end)?
            }
            ModelEnergy::Toy => {
                let full = AnalyticPotential::new(
                    2,
                    |x: &[f64]| (x[1] - x[0] * x[0]).powi(2) + x[0].powi(4),
                    |x: &[f64]| {
                        let gap = x[1] - x[0] * x[0];
                        vec![-4.0 * x[0] * gap + 4.0 * x[0].powi(3), 2.0 * gap]
                    },
                );
                let reduced = ls_reduce(full, &[vec![1.0, 0.0]])?;
                gradient_flow(&reduced, start, t_end)?
            }
            ModelEnergy::Flat => {
                let g = AnalyticPotential::new(2, |_: &[f64]| 0.0, |x: &[f64]| vec![0.0; x.len()]);
                gradient_flow(&g, start, t_end)?
            }
        };
        Ok(trace)
    }
}

/// Largest `|G(t) - (|x0| - t)^p|` before the flow reaches the origin.
fn analytic_gap(trace: &FlowTrace, start: &[f64], p: i32) -> f64 {
    let x0 = start[0].abs();
    trace.states.iter().filter(|s| s.time < x0).map(|s| (s.g_value - (x0 - s.time).powi(p)).abs()).fold(0.0, f64::max)
}

const ANALYTIC_TOL: f64 = 1e-6;
const MONOTONE_TOL: f64 = 1e-9;

pub fn flow(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let energy: ModelEnergy = cfg.require("energy")?;
    let start = cfg.list("start")?.unwrap_or_else(|| energy.default_start());
    let t_end: f64 = cfg.get_or("t_end", 1.0)?;
    let trace = energy.run(&start, t_end)?;
    let gap = energy.power().map(|p| analytic_gap(&trace, &start, p));
    let (fit, fit_error) = match lojasiewicz_fit(&trace) {
        Ok(fit) => (Some(fit), None),
        Err(e) if e.is_numeric() => (None, Some(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let increase = trace.max_increase();
    let pass = increase <= MONOTONE_TOL && gap.is_none_or(|g| g <= ANALYTIC_TOL);

    let mut table = Table::new(vec!["time", "g_value", "grad_norm", "dissipated"]);
    for s in &trace.states {
        table.push(vec![num(s.time), num(s.g_value), num(s.grad_norm), num(s.dissipated)]);
    }
    let result = json!({
        "energy": format!("{energy:?}").to_lowercase(),
        "start": start,
        "t_end": t_end,
        "samples": trace.states.len(),
        "frozen_at": trace.frozen_at,
        "final": to_value(&trace.last()),
        "max_increase": increase,
        "dissipation_gap": trace.dissipation_gap(),
        "analytic_gap": gap,
        "lojasiewicz": to_value(&fit),
        "lojasiewicz_error": fit_error,
    });
    let mut out = Outcome::new(pass, result)
        .tolerance("analytic", ANALYTIC_TOL)
        .tolerance("monotone", MONOTONE_TOL)
        .tolerance("freeze_gradient", epiflow::FREEZE_GRADIENT);
    out.csv = Some(table);
    Ok(out)
}

const DECAY_EXCESS_TOL: f64 = 1e-9;
const HOLDER_TOL: f64 = 1e-6;
const MODULUS_TOL: f64 = 0.1;

pub fn decay(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let input = DecayInput::new(
        cfg.require("eps")?,
        cfg.require("gamma")?,
        dim_of(cfg, "dim", Some(7))?,
        cfg.get_or("w_start", 1.0)?,
        cfg.get_or("r0", 1.0)?,
    )?;
    let curve = decay::integrate_decay(&input)?;
    let modulus = decay::dyadic_l2_modulus(&curve, input.gamma)?;
    let excess = curve.excess_over_closed_form();
    let modulus_gap = (modulus.fitted_exponent - modulus.predicted_exponent).abs();
    let modulus_ok = modulus_gap <= MODULUS_TOL * modulus.predicted_exponent.abs();
    let holder = (input.gamma == 0.0).then(|| {
        let fitted = curve.fitted_power();
        let predicted = input.holder_exponent();
        json!({ "predicted": predicted, "fitted": fitted, "relative_error": ((fitted - predicted) / predicted).abs() })
    });
    let holder_ok = holder.as_ref().is_none_or(|h| h["relative_error"].as_f64().is_some_and(|e| e <= HOLDER_TOL));
    let pass = excess <= DECAY_EXCESS_TOL && modulus_ok && holder_ok;

    let mut table = Table::new(vec!["radius", "log_ratio", "w", "closed_form", "l2_drift"]);
    for k in 0..curve.log_ratios.len() {
        table.push(vec![
            num(curve.radii[k]),
            num(curve.log_ratios[k]),
            num(curve.w_values[k]),
            num(curve.closed_form[k]),
            num(curve.l2_drift[k]),
        ]);
    }
    let result = json!({
        "input": to_value(&input),
        "holder": holder,
        "excess_over_closed_form": excess,
        "modulus": to_value(&modulus),
        "grid_points": curve.log_ratios.len(),
    });
    let mut out = Outcome::new(pass, result)
        .tolerance("closed_form_excess", DECAY_EXCESS_TOL)
        .tolerance("holder_exponent_relative", HOLDER_TOL)
        .tolerance("modulus_exponent_relative", MODULUS_TOL);
    out.csv = Some(table);
    Ok(out)
}
