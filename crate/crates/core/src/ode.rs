//! Dormand-Prince 5(4) integrator with step-size control.

use crate::error::{Error, Result};
use std::ops::ControlFlow;

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { rtol: 1e-12, atol: 1e-14 }
    }
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] =
    [71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0];

/// Integrates `y' = f(t, y)` from `t0` to `t1` (either direction).
///
/// `observer` sees every accepted step and may stop the integration early;
/// the state at the stopping point is returned with its time.
pub fn integrate<F, O>(f: F, t0: f64, y0: &[f64], t1: f64, tol: Tolerance, mut observer: O) -> Result<(f64, Vec<f64>)>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
    O: FnMut(f64, &[f64]) -> ControlFlow<()>,
{
    let n = y0.len();
    let span = t1 - t0;
    if span == 0.0 {
        return Ok((t0, y0.to_vec()));
    }
    let dir = span.signum();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut h = dir * span.abs() * 1e-3;
    let min_step = span.abs() * 1e-14;
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    k[0] = f(t, &y);
    let mut tmp = vec![0.0; n];
    loop {
        if (t1 - t) * dir <= 0.0 {
            return Ok((t, y));
        }
        if (t + h - t1) * dir > 0.0 {
            h = t1 - t;
        }
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += h * A[s][j] * kj[i];
                }
                tmp[i] = acc;
            }
            k[s] = f(t + C[s] * h, &tmp);
        }
        // stage 6 is the 5th-order solution (FSAL)
        let mut err = 0.0f64;
        for i in 0..n {
            let e: f64 = (0..7).map(|s| E[s] * k[s][i]).sum::<f64>() * h;
            let scale = tol.atol + tol.rtol * y[i].abs().max(tmp[i].abs());
            err = err.max((e / scale).abs());
        }
        if err <= 1.0 {
            t += h;
            y.copy_from_slice(&tmp);
            k[0] = k[6].clone();
            if observer(t, &y).is_break() {
                return Ok((t, y));
            }
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= fac;
        } else {
            let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
            h *= fac;
            if h.abs() < min_step {
                return Err(Error::StepUnderflow(t));
            }
        }
    }
}

/// Convenience wrapper without an observer.
pub fn solve<F>(f: F, t0: f64, y0: &[f64], t1: f64, tol: Tolerance) -> Result<Vec<f64>>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    integrate(f, t0, y0, t1, tol, |_, _| ControlFlow::Continue(())).map(|r| r.1)
}
