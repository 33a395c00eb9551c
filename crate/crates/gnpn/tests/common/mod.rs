#![allow(dead_code)]

use gnpn::SymmetricMatrix;

/// Unit-diagonal precision matrix of the d-node cycle with coupling
/// `alpha` on every adjacent pair. The off-diagonal part is alpha times
/// the cycle adjacency matrix, whose spectral norm is exactly 2.
pub fn circle_gamma(alpha: f64, dim: usize) -> SymmetricMatrix {
    SymmetricMatrix::from_fn(dim, |i, j| {
        if i == j {
            1.0
        } else if i == j + 1 || (i == dim - 1 && j == 0) {
            alpha
        } else {
            0.0
        }
    })
}

/// Least-squares slope of y against x.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (xi, yi) in x.iter().zip(y.iter()) {
        num += (xi - mx) * (yi - my);
        den += (xi - mx) * (xi - mx);
    }
    num / den
}

/// Relative difference |a - b| / max(|a|, |b|).
pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs())
}

pub fn assert_close(actual: f64, expected: f64, tol: f64, what: &str) {
    assert!(
        (actual - expected).abs() <= tol,
        "{what}: got {actual}, expected {expected} (tol {tol})"
    );
}
