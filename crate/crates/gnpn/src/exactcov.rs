//! Exact covariance of transformed Gaussians.
//!
//! For Z_i = f_i(X_i) with X multivariate normal, every covariance entry
//! Cov(Z_i, Z_j) has a closed series in the derivatives of f_i and f_j at
//! zero and the entries of the Gaussian covariance. This module evaluates
//! that series (`exact_tau`), the per-coordinate constants kappa and
//! lambda it induces, and the first-order predictions of the transformed
//! covariance and precision matrices built from them. A two-dimensional
//! quadrature oracle computes the same covariances by direct integration,
//! giving an independent check and a fallback for transforms whose series
//! does not converge.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::PrecisionModel;
use crate::linalg::{KahanSum, SymmetricMatrix};
use crate::transforms::{gauss_hermite_expectation, hermite_rule, TransformSpec};

/// Truncation controls for the series evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesConfig {
    /// Absolute tolerance ending the outer covariance series.
    pub term_tol: f64,
    /// Maximum number of terms in either series before divergence is
    /// declared.
    pub max_k: usize,
    /// Absolute tolerance ending the inner derivative series.
    pub taylor_tol: f64,
}

impl Default for SeriesConfig {
    fn default() -> Self {
        SeriesConfig {
            term_tol: 1e-14,
            max_k: 120,
            taylor_tol: 1e-15,
        }
    }
}

fn check_config(cfg: &SeriesConfig) -> Result<()> {
    if !(cfg.term_tol > 0.0) || !(cfg.taylor_tol > 0.0) || cfg.max_k < 2 {
        return Err(Error::InvalidInput(format!(
            "bad series config: term_tol {}, taylor_tol {}, max_k {}",
            cfg.term_tol, cfg.taylor_tol, cfg.max_k
        )));
    }
    Ok(())
}

/// F_k(x) = sum over u >= 0 of f^(2u+k)(0) * x^u / u!.
///
/// These are the building blocks of the covariance series: F_k evaluated
/// at half the marginal variance plays the role of a k-th order
/// "transformed moment" of f. Truncates once three consecutive terms drop
/// below `taylor_tol` relative to the largest term seen, which for an
/// alternating series is the accuracy floor the summation can reach
/// anyway. Terms that fail to settle within the scan (or overflow)
/// signal a transform whose derivatives grow too fast for the series to
/// converge at this x.
pub fn f_series(spec: &TransformSpec, k: usize, x: f64, cfg: &SeriesConfig) -> Result<f64> {
    check_config(cfg)?;
    if !spec.has_derivatives() {
        return Err(Error::NoDerivativeSequence(spec.id().to_string()));
    }
    let mut acc = KahanSum::new();
    // x^u / u!, updated incrementally.
    let mut weight = 1.0;
    let mut small_run = 0;
    let mut nonzero_seen = false;
    let mut peak = 1.0f64;
    // The covariance series over k rarely needs many orders, but this
    // inner sum has a geometric tail whose ratio can sit close to 1, so
    // it gets a longer leash than max_k.
    let cap = 3 * cfg.max_k;
    for u in 0..=cap {
        let term = spec.deriv_at_zero(2 * u + k)? * weight;
        if !term.is_finite() {
            return Err(Error::SeriesDivergence {
                max_terms: u,
                last_term: term,
            });
        }
        acc.add(term);
        if term != 0.0 {
            nonzero_seen = true;
            peak = peak.max(term.abs());
        }
        if term.abs() < cfg.taylor_tol * peak {
            // Sparse derivative tables put exact zeros between live
            // orders, so convergence is only declared once a nonzero
            // term has anchored the sum.
            small_run += 1;
            if small_run >= 3 && nonzero_seen {
                return Ok(acc.value());
            }
        } else {
            small_run = 0;
        }
        weight *= x / (u + 1) as f64;
    }
    if !nonzero_seen {
        // Every sampled derivative vanished; the series is identically zero.
        return Ok(0.0);
    }
    Err(Error::SeriesDivergence {
        max_terms: cap,
        last_term: acc.value(),
    })
}

/// Exact covariance entry for a transformed bivariate normal:
///
/// tau_ij = sum over k >= 1 of F_ki(s_ii/2) * F_kj(s_jj/2) * s_ij^k / k!.
///
/// For a variance entry (i = j) call with `s_ij = s_ii`. When both specs
/// declare growth constants, truncation additionally waits until a
/// geometric tail bound computed from those constants falls below
/// `term_tol`, guarding against alternating series that dip early.
pub fn exact_tau(
    spec_i: &TransformSpec,
    spec_j: &TransformSpec,
    s_ii: f64,
    s_jj: f64,
    s_ij: f64,
    cfg: &SeriesConfig,
) -> Result<f64> {
    check_config(cfg)?;
    if !(s_ii > 0.0) || !(s_jj > 0.0) || s_ij.abs() > (s_ii * s_jj).sqrt() * (1.0 + 1e-12) {
        return Err(Error::InvalidCovariance { s_ii, s_jj, s_ij });
    }
    if s_ij == 0.0 {
        return Ok(0.0);
    }

    // Tail control from the growth constants, when both sides have them:
    // |F_ki(x)| <= C_i K_i^k exp(K_i^2 x), so the tail past k is at most
    // C^2 exp(K^2 (s_ii + s_jj)/2) * sum_{k' > k} (K^2 |s_ij|)^k' / k'!,
    // and that sum is bounded by its first term times exp(K^2 |s_ij|).
    let tail_scale = match (
        spec_i.bound_c(),
        spec_i.bound_k(),
        spec_j.bound_c(),
        spec_j.bound_k(),
    ) {
        (Some(ci), Some(ki), Some(cj), Some(kj)) => {
            let c = ci.max(cj);
            let k2 = ki.max(kj).powi(2);
            Some((
                c * c * (k2 * (s_ii + s_jj) / 2.0).exp() * (k2 * s_ij.abs()).exp(),
                k2 * s_ij.abs(),
            ))
        }
        _ => None,
    };

    let xi = s_ii / 2.0;
    let xj = s_jj / 2.0;
    let mut acc = KahanSum::new();
    // s_ij^k / k!, updated incrementally, starting at k = 1.
    let mut weight = s_ij;
    // (K^2 |s_ij|)^(k+1) / (k+1)!, the leading tail factor.
    let mut tail_weight = tail_scale.map(|(_, y)| y);
    let mut small_run = 0;
    for k in 1..=cfg.max_k {
        let term = f_series(spec_i, k, xi, cfg)? * f_series(spec_j, k, xj, cfg)? * weight;
        if !term.is_finite() {
            return Err(Error::SeriesDivergence {
                max_terms: k,
                last_term: term,
            });
        }
        acc.add(term);

        if let Some(w) = tail_weight.as_mut() {
            *w *= tail_scale.unwrap().1 / (k + 1) as f64;
        }
        let tail_ok = match (tail_scale, tail_weight) {
            (Some((scale, _)), Some(w)) => scale * w < cfg.term_tol,
            _ => true,
        };
        if term.abs() < cfg.term_tol {
            small_run += 1;
            if small_run >= 3 && tail_ok {
                return Ok(acc.value());
            }
        } else {
            small_run = 0;
        }
        weight *= s_ij / (k + 1) as f64;
    }
    Err(Error::SeriesDivergence {
        max_terms: cfg.max_k,
        last_term: acc.value(),
    })
}

/// Transformed marginal variance constant: kappa = sum F_k(1/2)^2 / k!,
/// the variance of f(X) for X standard normal.
pub fn kappa_of(spec: &TransformSpec, cfg: &SeriesConfig) -> Result<f64> {
    exact_tau(spec, spec, 1.0, 1.0, 1.0, cfg)
}

/// First-order covariance multiplier: lambda = F_1(1/2). Products
/// lambda_i * lambda_j scale the Gaussian covariance entries at first
/// order.
pub fn lambda_of(spec: &TransformSpec, cfg: &SeriesConfig) -> Result<f64> {
    f_series(spec, 1, 0.5, cfg)
}

/// Per-coordinate constants and first-order matrix predictions for a
/// transformed Gaussian model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnpnPrediction {
    /// Transformed marginal variances kappa_i.
    pub kappa: Vec<f64>,
    /// First-order multipliers lambda_i.
    pub lambda_vec: Vec<f64>,
    /// First-order transformed covariance: diag(kappa) - Lambda B Lambda.
    pub sigma_pi_first_order: SymmetricMatrix,
    /// First-order transformed precision:
    /// diag(kappa)^-1 + diag(kappa)^-1 Lambda B Lambda diag(kappa)^-1.
    pub gamma_pi_first_order: SymmetricMatrix,
}

/// Assembles the first-order predictions from a unit-diagonal precision
/// model and one transform per coordinate.
pub fn predict(
    model: &PrecisionModel,
    specs: &[TransformSpec],
    cfg: &SeriesConfig,
) -> Result<GnpnPrediction> {
    let dim = model.dim();
    if specs.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: specs.len(),
        });
    }
    let mut kappa = Vec::with_capacity(dim);
    let mut lambda_vec = Vec::with_capacity(dim);
    for spec in specs {
        let k = kappa_of(spec, cfg)?;
        let l = lambda_of(spec, cfg)?;
        // Cauchy-Schwarz guarantees kappa >= lambda^2; a violation beyond
        // rounding means the series truncation went wrong.
        if k < l * l - 1e-10 * l.abs().max(1.0) {
            return Err(Error::InvalidInput(format!(
                "series inconsistency for `{}`: kappa {k} < lambda^2 {}",
                spec.id(),
                l * l
            )));
        }
        kappa.push(k);
        lambda_vec.push(l);
    }
    let gamma = model.gamma_rho();
    let sigma_pi_first_order = SymmetricMatrix::from_fn(dim, |i, j| {
        if i == j {
            kappa[i]
        } else {
            -lambda_vec[i] * lambda_vec[j] * gamma.get(i, j)
        }
    });
    let gamma_pi_first_order = SymmetricMatrix::from_fn(dim, |i, j| {
        if i == j {
            1.0 / kappa[i]
        } else {
            lambda_vec[i] * lambda_vec[j] * gamma.get(i, j) / (kappa[i] * kappa[j])
        }
    });
    Ok(GnpnPrediction {
        kappa,
        lambda_vec,
        sigma_pi_first_order,
        gamma_pi_first_order,
    })
}

/// Exact transformed covariance matrix, with a record of which entries had
/// to fall back to the quadrature oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactSigma {
    pub matrix: SymmetricMatrix,
    /// Pairs (i, j) with i <= j whose series diverged (or had no
    /// derivative sequence) and were integrated numerically instead.
    pub oracle_entries: Vec<(usize, usize)>,
}

/// Exact covariance of the transformed model: inverts the precision to get
/// the Gaussian covariance, then evaluates every entry of the transformed
/// covariance by the series, falling back to direct quadrature for
/// entries whose series cannot converge.
pub fn exact_sigma_pi(
    model: &PrecisionModel,
    specs: &[TransformSpec],
    cfg: &SeriesConfig,
) -> Result<ExactSigma> {
    let dim = model.dim();
    if specs.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: specs.len(),
        });
    }
    let sigma_rho = model.sigma_rho()?;
    let mut matrix = SymmetricMatrix::zeros(dim);
    let mut oracle_entries = Vec::new();
    for j in 0..dim {
        for i in j..dim {
            let s_ii = sigma_rho.get(i, i);
            let s_jj = sigma_rho.get(j, j);
            let s_ij = if i == j { s_ii } else { sigma_rho.get(i, j) };
            let tau = match exact_tau(&specs[i], &specs[j], s_ii, s_jj, s_ij, cfg) {
                Ok(v) => v,
                Err(Error::SeriesDivergence { .. }) | Err(Error::NoDerivativeSequence(_)) => {
                    oracle_entries.push((j, i));
                    quadrature_oracle(&specs[i], &specs[j], s_ii, s_jj, s_ij)?
                }
                Err(e) => return Err(e),
            };
            matrix.set(i, j, tau);
        }
    }
    Ok(ExactSigma {
        matrix,
        oracle_entries,
    })
}

/// Relative agreement demanded between node doublings of the oracle.
pub const ORACLE_TOL: f64 = 1e-10;
const ORACLE_MAX_NODES: usize = 512;

fn expect_bivariate(g: impl Fn(f64, f64) -> f64) -> Result<f64> {
    fn once(g: &impl Fn(f64, f64) -> f64, n: usize) -> Result<f64> {
        let rule = hermite_rule(n)?;
        let (nodes, weights) = rule.as_ref();
        let inv_pi = 1.0 / std::f64::consts::PI;
        let root2 = std::f64::consts::SQRT_2;
        let mut acc = KahanSum::new();
        for (xp, wp) in nodes.iter().zip(weights.iter()) {
            for (xq, wq) in nodes.iter().zip(weights.iter()) {
                acc.add(wp * wq * inv_pi * g(root2 * xp, root2 * xq));
            }
        }
        Ok(acc.value())
    }
    let mut n = 32;
    let mut prev = once(&g, n)?;
    while n < ORACLE_MAX_NODES {
        n *= 2;
        let cur = once(&g, n)?;
        let scale = prev.abs().max(cur.abs()).max(1.0);
        if (cur - prev).abs() <= ORACLE_TOL * scale {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(Error::QuadratureFailure {
        tol: ORACLE_TOL,
        max_nodes: ORACLE_MAX_NODES,
    })
}

/// Cov(f_i(X), f_j(Y)) for (X, Y) centered bivariate normal with
/// covariance [[s_ii, s_ij], [s_jj]], by direct Gauss-Hermite integration
/// over the whitened pair X = a u, Y = c u + e v. Independent of the
/// series machinery, which is the point: the two paths agreeing is the
/// main correctness evidence for both.
pub fn quadrature_oracle(
    spec_i: &TransformSpec,
    spec_j: &TransformSpec,
    s_ii: f64,
    s_jj: f64,
    s_ij: f64,
) -> Result<f64> {
    if !(s_ii > 0.0) || !(s_jj > 0.0) {
        return Err(Error::InvalidCovariance { s_ii, s_jj, s_ij });
    }
    let a = s_ii.sqrt();
    let c = s_ij / a;
    let e2 = s_jj - c * c;
    if e2 < -1e-9 * s_jj {
        return Err(Error::InvalidCovariance { s_ii, s_jj, s_ij });
    }
    let e = e2.max(0.0).sqrt();

    let mean_i = gauss_hermite_expectation(|x| spec_i.eval(x), 0.0, a, 32)?;
    let mean_j = gauss_hermite_expectation(|y| spec_j.eval(y), 0.0, s_jj.sqrt(), 32)?;
    let cross = if e == 0.0 {
        // Perfectly correlated pair: a one-dimensional integral suffices.
        gauss_hermite_expectation(|u| spec_i.eval(a * u) * spec_j.eval(c * u), 0.0, 1.0, 32)?
    } else {
        expect_bivariate(|u, v| spec_i.eval(a * u) * spec_j.eval(c * u + e * v))?
    };
    Ok(cross - mean_i * mean_j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::builtin;

    #[test]
    fn cube_f_series_is_linear_in_x() {
        let cube = builtin("cube").unwrap();
        let cfg = SeriesConfig::default();
        // Only the third derivative is nonzero, so F_1(x) = 6x and F_3 = 6.
        assert_eq!(f_series(&cube, 1, 0.5, &cfg).unwrap(), 3.0);
        assert_eq!(f_series(&cube, 3, 0.25, &cfg).unwrap(), 6.0);
        assert_eq!(f_series(&cube, 2, 0.7, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn zero_covariance_short_circuits() {
        let sin = builtin("sin").unwrap();
        let cfg = SeriesConfig::default();
        assert_eq!(exact_tau(&sin, &sin, 1.0, 1.0, 0.0, &cfg).unwrap(), 0.0);
    }
}
