//! Adaptive Gauss-Kronrod (7/15) quadrature and fixed Gauss-Legendre rules.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Estimate {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        let pair = f(c - x) + f(c + x);
        kronrod += WGK[i] * pair;
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    Estimate { value: kronrod * h, error: ((kronrod - gauss) * h).abs() }
}

/// Integrates `f` over `[a, b]` until the estimated error is below
/// `tol * max(1, |value|)`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<Estimate> {
    if a == b {
        return Ok(Estimate { value: 0.0, error: 0.0 });
    }
    if b < a {
        let r = integrate(f, b, a, tol)?;
        return Ok(Estimate { value: -r.value, error: r.error });
    }
    let mut pieces = vec![(a, b, gk15(&f, a, b))];
    for _ in 0..2000 {
        let value: f64 = pieces.iter().map(|p| p.2.value).sum();
        let error: f64 = pieces.iter().map(|p| p.2.error).sum();
        if error <= tol * value.abs().max(1.0) {
            return Ok(Estimate { value, error });
        }
        let (idx, _) =
            pieces.iter().enumerate().max_by(|x, y| x.1 .2.error.total_cmp(&y.1 .2.error)).expect("non-empty");
        let (lo, hi, _) = pieces.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        pieces.push((lo, mid, gk15(&f, lo, mid)));
        pieces.push((mid, hi, gk15(&f, mid, hi)));
    }
    let value: f64 = pieces.iter().map(|p| p.2.value).sum();
    let error: f64 = pieces.iter().map(|p| p.2.error).sum();
    if error <= tol * value.abs().max(1.0) {
        Ok(Estimate { value, error })
    } else {
        Err(Error::Quadrature { achieved: error, requested: tol })
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            dp = 1.0;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Composite Gauss-Legendre rule on `[a, b]` split at `breaks`.
pub fn composite_gl(a: f64, b: f64, breaks: &[f64], per_panel: usize) -> Vec<(f64, f64)> {
    let mut cuts: Vec<f64> = std::iter::once(a)
        .chain(breaks.iter().copied().filter(|&x| x > a && x < b))
        .chain(std::iter::once(b))
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let (xs, ws) = gauss_legendre(per_panel);
    cuts.windows(2)
        .flat_map(|w| {
            let (lo, hi) = (w[0], w[1]);
            let h = 0.5 * (hi - lo);
            let c = 0.5 * (hi + lo);
            xs.iter().zip(&ws).map(move |(x, wt)| (c + h * x, h * wt)).collect::<Vec<_>>()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_and_transcendental() {
        let r = integrate(|x| x.powi(7), 0.0, 1.0, 1e-12).unwrap();
        assert!((r.value - 0.125).abs() < 1e-14);
        let r = integrate(|x| x.sin(), 0.0, std::f64::consts::PI, 1e-12).unwrap();
        assert!((r.value - 2.0).abs() < 1e-13);
        let r = integrate(|x| x.sqrt(), 0.0, 1.0, 1e-10).unwrap();
        assert!((r.value - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn reversed_and_empty() {
        assert_eq!(integrate(|x| x, 1.0, 1.0, 1e-10).unwrap().value, 0.0);
        let r = integrate(|x| x, 1.0, 0.0, 1e-12).unwrap();
        assert!((r.value + 0.5).abs() < 1e-14);
    }

    #[test]
    fn gauss_legendre_exactness() {
        for n in [1, 2, 5, 16, 33] {
            let (x, w) = gauss_legendre(n);
            let s: f64 = w.iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "n={n}");
            let deg = 2 * n - 1;
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32 - 1)).sum();
            let exact = if (deg - 1) % 2 == 0 { 2.0 / deg as f64 } else { 0.0 };
            assert!((q - exact).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn composite_rule_respects_breaks() {
        let rule = composite_gl(0.0, 1.0, &[0.5], 8);
        let q: f64 = rule.iter().map(|(x, w)| w * (x - 0.5).abs()).sum();
        assert!((q - 0.25).abs() < 1e-14);
    }
}
