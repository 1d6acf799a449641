//! Chebyshev-Gauss-Lobatto grids on `[-1, 1]` (ascending order).

use nalgebra::DMatrix;
use std::f64::consts::PI;

/// `n + 1` Lobatto points `-cos(pi j / n)`.
pub fn lobatto_nodes(n: usize) -> Vec<f64> {
    assert!(n >= 1);
    (0..=n)
        .map(|j| {
            // symmetric evaluation keeps x_j = -x_{n-j} exactly
            let k = 2 * j as i64 - n as i64;
            (PI * k as f64 / (2 * n) as f64).sin()
        })
        .collect()
}

/// First-derivative matrix on the Lobatto grid.
pub fn diff_matrix(n: usize) -> DMatrix<f64> {
    let x = lobatto_nodes(n);
    let c: Vec<f64> = (0..=n)
        .map(|j| {
            let s = if j % 2 == 0 { 1.0 } else { -1.0 };
            if j == 0 || j == n {
                2.0 * s
            } else {
                s
            }
        })
        .collect();
    let mut d = DMatrix::zeros(n + 1, n + 1);
    for i in 0..=n {
        let mut row = 0.0;
        for j in 0..=n {
            if i != j {
                let v = (c[i] / c[j]) / (x[i] - x[j]);
                d[(i, j)] = v;
                row += v;
            }
        }
        d[(i, i)] = -row;
    }
    d
}

/// Clenshaw-Curtis weights for the Lobatto grid.
pub fn clenshaw_curtis_weights(n: usize) -> Vec<f64> {
    let mut w = vec![0.0; n + 1];
    let theta: Vec<f64> = (0..=n).map(|j| PI * j as f64 / n as f64).collect();
    if n.is_multiple_of(2) {
        w[0] = 1.0 / ((n * n - 1) as f64);
        w[n] = w[0];
    } else {
        w[0] = 1.0 / ((n * n) as f64);
        w[n] = w[0];
    }
    for j in 1..n {
        let mut v = 1.0;
        if n.is_multiple_of(2) {
            for k in 1..n / 2 {
                v -= 2.0 * (2.0 * k as f64 * theta[j]).cos() / ((4 * k * k - 1) as f64);
            }
            v -= (n as f64 * theta[j]).cos() / ((n * n - 1) as f64);
        } else {
            for k in 1..=(n - 1) / 2 {
                v -= 2.0 * (2.0 * k as f64 * theta[j]).cos() / ((4 * k * k - 1) as f64);
            }
        }
        w[j] = 2.0 * v / n as f64;
    }
    w
}

/// Barycentric weights for the Lobatto grid.
pub fn barycentric_weights(n: usize) -> Vec<f64> {
    (0..=n)
        .map(|j| {
            let s = if j % 2 == 0 { 1.0 } else { -1.0 };
            if j == 0 || j == n {
                0.5 * s
            } else {
                s
            }
        })
        .collect()
}

/// Barycentric interpolation through `(nodes, values)`.
pub fn interpolate(nodes: &[f64], weights: &[f64], values: &[f64], x: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&xj, &wj), &fj) in nodes.iter().zip(weights).zip(values) {
        let dx = x - xj;
        if dx == 0.0 {
            return fj;
        }
        let t = wj / dx;
        num += t * fj;
        den += t;
    }
    num / den
}
