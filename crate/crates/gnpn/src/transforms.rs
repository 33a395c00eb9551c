//! The catalog of diagonal (per-coordinate) transformations.
//!
//! Each transformation carries three faces that must stay consistent:
//! pointwise evaluation for mapping samples, an exact derivative sequence
//! at zero feeding the covariance series, and optional growth constants
//! (C, K) with |f^(a)(0)| <= C * K^a that bound series tails. Derivatives
//! are closed-form per transform; numerical differentiation would drown in
//! noise long before the series machinery stops asking for higher orders.
//!
//! The power and Gaussian-CDF families need normalizing integrals against
//! a normal density; those run through the Gauss-Hermite quadrature at the
//! bottom of this module, which is also reused as an independent oracle
//! elsewhere.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::linalg::{tridiag_eigen_first_row, KahanSum, SampleBatch};

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Symmetry class of a transformation around zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    Odd,
    Even,
    Neither,
}

/// Mean and standard deviation of a target marginal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalParams {
    pub mu: f64,
    pub sigma: f64,
}

impl MarginalParams {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidInput(format!(
                "marginal standard deviation must be positive, got {sigma}"
            )));
        }
        Ok(MarginalParams { mu, sigma })
    }

    /// Mean 0, standard deviation 1.
    pub fn standard() -> Self {
        MarginalParams { mu: 0.0, sigma: 1.0 }
    }
}

#[derive(Debug, Clone)]
enum Kernel {
    Sin,
    Cos,
    Square,
    Cube,
    Pow7,
    CubeMinusSquare,
    Sin2x,
    Identity,
    Power {
        alpha: f64,
        mu: f64,
        sigma: f64,
        /// 1 / sqrt of the variance-normalizing integral.
        inv_sqrt_norm: f64,
        /// Set when alpha is an odd positive integer, enabling the exact
        /// derivative sequence.
        odd_exponent: Option<u32>,
    },
    Cdf {
        mu_f0: f64,
        sigma_f0: f64,
        mu: f64,
        sigma: f64,
        /// Mean of the inner CDF under the target marginal.
        center: f64,
        /// 1 / sqrt of its variance under the target marginal.
        inv_sqrt_var: f64,
    },
}

/// A single diagonal transformation: evaluation, exact derivatives at 0,
/// and optional growth constants.
#[derive(Debug, Clone)]
pub struct TransformSpec {
    id: String,
    parity: Parity,
    bound_c: Option<f64>,
    bound_k: Option<f64>,
    kernel: Kernel,
}

impl TransformSpec {
    fn new(id: &str, parity: Parity, bounds: Option<(f64, f64)>, kernel: Kernel) -> Self {
        TransformSpec {
            id: id.to_string(),
            parity,
            bound_c: bounds.map(|b| b.0),
            bound_k: bounds.map(|b| b.1),
            kernel,
        }
    }

    /// Name, e.g. `"cube"` or `"power"`.
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    /// Growth constant C with |f^(a)(0)| <= C * K^a, when known.
    pub fn bound_c(&self) -> Option<f64> {
        self.bound_c
    }

    /// Growth constant K, when known.
    pub fn bound_k(&self) -> Option<f64> {
        self.bound_k
    }

    /// Whether an exact derivative sequence is available (false only for
    /// power transformations with non-odd-integer exponent, which exist
    /// for sampling but not for the series machinery).
    pub fn has_derivatives(&self) -> bool {
        !matches!(
            self.kernel,
            Kernel::Power {
                odd_exponent: None,
                ..
            }
        )
    }

    /// Pointwise evaluation f(x).
    pub fn eval(&self, x: f64) -> f64 {
        match &self.kernel {
            Kernel::Sin => x.sin(),
            Kernel::Cos => x.cos(),
            Kernel::Square => x * x,
            Kernel::Cube => x * x * x,
            Kernel::Pow7 => x.powi(7),
            Kernel::CubeMinusSquare => x * x * x - x * x,
            Kernel::Sin2x => (2.0 * x).sin(),
            Kernel::Identity => x,
            Kernel::Power {
                alpha,
                mu,
                sigma,
                inv_sqrt_norm,
                odd_exponent,
            } => {
                let t = x - mu;
                let f0 = match odd_exponent {
                    Some(k) => t.powi(*k as i32),
                    None => t.signum() * t.abs().powf(*alpha),
                };
                sigma * f0 * inv_sqrt_norm + mu
            }
            Kernel::Cdf {
                mu_f0,
                sigma_f0,
                mu,
                sigma,
                center,
                inv_sqrt_var,
            } => {
                let f0 = std_normal_cdf((x - mu_f0) / sigma_f0);
                sigma * (f0 - center) * inv_sqrt_var + mu
            }
        }
    }

    /// Exact a-th derivative at zero, f^(a)(0). Order 0 is f(0) itself.
    pub fn deriv_at_zero(&self, a: usize) -> Result<f64> {
        let v = match &self.kernel {
            Kernel::Sin => match a % 4 {
                1 => 1.0,
                3 => -1.0,
                _ => 0.0,
            },
            Kernel::Cos => match a % 4 {
                0 => 1.0,
                2 => -1.0,
                _ => 0.0,
            },
            Kernel::Square => {
                if a == 2 {
                    2.0
                } else {
                    0.0
                }
            }
            Kernel::Cube => {
                if a == 3 {
                    6.0
                } else {
                    0.0
                }
            }
            Kernel::Pow7 => {
                if a == 7 {
                    5040.0
                } else {
                    0.0
                }
            }
            Kernel::CubeMinusSquare => match a {
                2 => -2.0,
                3 => 6.0,
                _ => 0.0,
            },
            Kernel::Sin2x => {
                let scale = 2f64.powi(a as i32);
                match a % 4 {
                    1 => scale,
                    3 => -scale,
                    _ => 0.0,
                }
            }
            Kernel::Identity => {
                if a == 1 {
                    1.0
                } else {
                    0.0
                }
            }
            Kernel::Power {
                mu,
                sigma,
                inv_sqrt_norm,
                odd_exponent,
                ..
            } => {
                let Some(k) = odd_exponent else {
                    return Err(Error::NoDerivativeSequence(self.id.clone()));
                };
                let k = *k as usize;
                if a == 0 {
                    self.eval(0.0)
                } else if a > k {
                    0.0
                } else {
                    // d^a/dz^a (z - mu)^k at 0 is k!/(k-a)! * (-mu)^(k-a).
                    let mut falling = 1.0;
                    for step in 0..a {
                        falling *= (k - step) as f64;
                    }
                    sigma * inv_sqrt_norm * falling * (-mu).powi((k - a) as i32)
                }
            }
            Kernel::Cdf {
                mu_f0,
                sigma_f0,
                sigma,
                inv_sqrt_var,
                ..
            } => {
                if a == 0 {
                    self.eval(0.0)
                } else {
                    // d^a/dz^a Phi((z - mu)/s) = (-1)^(a-1) He_{a-1}(u) phi(u) / s^a
                    // with u = (z - mu)/s, by the probabilists'-Hermite
                    // form of the Gaussian density derivatives.
                    let u0 = -mu_f0 / sigma_f0;
                    let he = hermite_prob(a - 1, u0);
                    let sign = if (a - 1) % 2 == 0 { 1.0 } else { -1.0 };
                    sigma * inv_sqrt_var * sign * he * std_normal_pdf(u0)
                        / sigma_f0.powi(a as i32)
                }
            }
        };
        Ok(v)
    }
}

/// Probabilists' Hermite polynomial He_n(x) by the three-term recurrence.
fn hermite_prob(n: usize, x: f64) -> f64 {
    if x == 0.0 {
        // He_n(0) vanishes at odd n and equals (-1)^(n/2) (n-1)!! at even
        // n. The recurrence below would turn those exact zeros into
        // 0 * inf = NaN once the even values overflow, so they are
        // computed directly.
        if n % 2 == 1 {
            return 0.0;
        }
        let mut v = 1.0;
        for m in (2..=n).step_by(2) {
            v *= -((m - 1) as f64);
        }
        return v;
    }
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = x;
    for m in 1..n {
        let next = x * cur - (m as f64) * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Looks up a transformation by name.
///
/// `power` and `cdf` come back with their customary parameters (exponent 3
/// with a standard marginal; inner CDF mean 0.05 and scale 0.4); use
/// [`power_transform`] and [`cdf_transform`] directly for other choices.
pub fn builtin(name: &str) -> Result<TransformSpec> {
    let spec = match name {
        "sin" => TransformSpec::new("sin", Parity::Odd, Some((1.0, 1.0)), Kernel::Sin),
        "cos" => TransformSpec::new("cos", Parity::Even, Some((1.0, 1.0)), Kernel::Cos),
        "square" => TransformSpec::new("square", Parity::Even, Some((2.0, 1.0)), Kernel::Square),
        "cube" => TransformSpec::new("cube", Parity::Odd, Some((6.0, 1.0)), Kernel::Cube),
        "pow7" => TransformSpec::new("pow7", Parity::Odd, Some((5040.0, 1.0)), Kernel::Pow7),
        "cube_minus_square" => TransformSpec::new(
            "cube_minus_square",
            Parity::Neither,
            Some((6.0, 1.0)),
            Kernel::CubeMinusSquare,
        ),
        "sin2x" => TransformSpec::new("sin2x", Parity::Odd, Some((1.0, 2.0)), Kernel::Sin2x),
        "identity" => TransformSpec::new("identity", Parity::Odd, Some((1.0, 1.0)), Kernel::Identity),
        "power" => power_transform(3.0, MarginalParams::standard())?,
        "cdf" => cdf_transform(0.05, 0.4, MarginalParams::standard())?,
        other => return Err(Error::UnknownTransform(other.to_string())),
    };
    Ok(spec)
}

/// Signed power map f0(t) = sign(t)|t|^alpha, rescaled so the transformed
/// variable keeps the marginal's mean and standard deviation.
///
/// For odd positive integer alpha the exact derivative sequence is
/// available; other exponents yield an evaluation-only spec.
pub fn power_transform(alpha: f64, mp: MarginalParams) -> Result<TransformSpec> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidInput(format!(
            "power exponent must be positive, got {alpha}"
        )));
    }
    let odd_exponent = if alpha.fract() == 0.0 && alpha <= 31.0 && (alpha as u64) % 2 == 1 {
        Some(alpha as u32)
    } else {
        None
    };
    // Normalizer: E[f0(X - mu)^2] with X drawn from the marginal, i.e. the
    // 2*alpha absolute moment of a centered normal with scale sigma, which
    // has the exact form sigma^(2a) 2^a Gamma(a + 1/2) / sqrt(pi). The
    // quadrature would struggle here for fractional exponents (the
    // integrand has a kink at the mean), so the closed form is used.
    let norm = mp.sigma.powf(2.0 * alpha) * 2f64.powf(alpha)
        * statrs::function::gamma::gamma(alpha + 0.5)
        / std::f64::consts::PI.sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::InvalidInput(format!(
            "power normalizer came out as {norm}"
        )));
    }
    let kernel = Kernel::Power {
        alpha,
        mu: mp.mu,
        sigma: mp.sigma,
        inv_sqrt_norm: 1.0 / norm.sqrt(),
        odd_exponent,
    };
    let parity = if mp.mu == 0.0 { Parity::Odd } else { Parity::Neither };
    let mut spec = TransformSpec::new("power", parity, None, kernel);
    if let Some(k) = odd_exponent {
        // Finitely many nonzero derivatives, so K = 1 with C their max.
        let mut c: f64 = 0.0;
        for a in 0..=(k as usize) {
            c = c.max(spec.deriv_at_zero(a)?.abs());
        }
        spec.bound_c = Some(c);
        spec.bound_k = Some(1.0);
    }
    Ok(spec)
}

/// Gaussian-CDF map f0(t) = Phi((t - mu_f0)/sigma_f0), centered and
/// rescaled under the target marginal so the output keeps its mean and
/// standard deviation.
///
/// The derivative sequence exists at every order, but grows like the
/// square root of a factorial, so no geometric growth bound (C, K) is
/// declared; the covariance series converges only while the squared inner
/// scale stays large enough relative to the marginal variances.
pub fn cdf_transform(mu_f0: f64, sigma_f0: f64, mp: MarginalParams) -> Result<TransformSpec> {
    if !(sigma_f0 > 0.0) {
        return Err(Error::InvalidInput(format!(
            "inner CDF scale must be positive, got {sigma_f0}"
        )));
    }
    let f0 = move |t: f64| std_normal_cdf((t - mu_f0) / sigma_f0);
    let center = gauss_hermite_expectation(f0, mp.mu, mp.sigma, QUAD_START_NODES)?;
    let var = gauss_hermite_expectation(
        move |t| {
            let d = f0(t) - center;
            d * d
        },
        mp.mu,
        mp.sigma,
        QUAD_START_NODES,
    )?;
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::InvalidInput(format!(
            "CDF variance normalizer came out as {var}"
        )));
    }
    let parity = if mu_f0 == 0.0 && mp.mu == 0.0 {
        Parity::Odd
    } else {
        Parity::Neither
    };
    let kernel = Kernel::Cdf {
        mu_f0,
        sigma_f0,
        mu: mp.mu,
        sigma: mp.sigma,
        center,
        inv_sqrt_var: 1.0 / var.sqrt(),
    };
    Ok(TransformSpec::new("cdf", parity, None, kernel))
}

/// Maps column j of the batch elementwise through `specs[j]`.
pub fn apply_transforms(batch: &SampleBatch, specs: &[TransformSpec]) -> Result<SampleBatch> {
    if specs.len() != batch.n_cols() {
        return Err(Error::DimensionMismatch {
            expected: batch.n_cols(),
            actual: specs.len(),
        });
    }
    let mut out = batch.clone();
    for (j, spec) in specs.iter().enumerate() {
        out.map_column(j, |v| spec.eval(v));
    }
    Ok(out)
}

/// Transform selection as it appears in experiment configs: either one
/// named transformation applied to every variable, or a pool from which
/// each variable draws uniformly at random.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TransformSelector {
    /// `{"name": "mixed", "pool": ["sin", "cos"]}`
    Mixed { name: MixedTag, pool: Vec<String> },
    /// `{"name": "power", "alpha": 3}` and friends.
    Named {
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu_f0: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma_f0: Option<f64>,
    },
}

/// Marker for the literal `"mixed"` selector name, so the untagged decode
/// cannot confuse the two shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MixedTag;

impl Serialize for MixedTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        "mixed".serialize(s)
    }
}

impl<'de> Deserialize<'de> for MixedTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        if name == "mixed" {
            Ok(MixedTag)
        } else {
            Err(serde::de::Error::custom("selector name is not `mixed`"))
        }
    }
}

impl TransformSelector {
    /// Selector applying one named builtin to every variable.
    pub fn named(name: &str) -> Self {
        TransformSelector::Named {
            name: name.to_string(),
            alpha: None,
            mu_f0: None,
            sigma_f0: None,
        }
    }

    /// Selector drawing uniformly per variable from named builtins.
    pub fn mixed(pool: &[&str]) -> Self {
        TransformSelector::Mixed {
            name: MixedTag,
            pool: pool.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Short human-readable label for report rows.
    pub fn label(&self) -> String {
        match self {
            TransformSelector::Named { name, .. } => name.clone(),
            TransformSelector::Mixed { pool, .. } => format!("mixed[{}]", pool.join(",")),
        }
    }

    /// Resolves to one spec per variable. Mixed pools consume one uniform
    /// draw per variable from `rng`; named selectors consume none.
    pub fn resolve(&self, dim: usize, rng: &mut ChaCha8Rng) -> Result<Vec<TransformSpec>> {
        match self {
            TransformSelector::Named {
                name,
                alpha,
                mu_f0,
                sigma_f0,
            } => {
                let spec = match name.as_str() {
                    "power" => {
                        power_transform(alpha.unwrap_or(3.0), MarginalParams::standard())?
                    }
                    "cdf" => cdf_transform(
                        mu_f0.unwrap_or(0.05),
                        sigma_f0.unwrap_or(0.4),
                        MarginalParams::standard(),
                    )?,
                    other => builtin(other)?,
                };
                Ok(vec![spec; dim])
            }
            TransformSelector::Mixed { pool, .. } => {
                if pool.is_empty() {
                    return Err(Error::InvalidInput("empty transform pool".into()));
                }
                let specs: Result<Vec<TransformSpec>> = (0..dim)
                    .map(|_| {
                        let pick = rng.random_range(0..pool.len());
                        builtin(&pool[pick])
                    })
                    .collect();
                specs
            }
        }
    }
}

/// Starting node count for the adaptive quadrature.
pub const QUAD_START_NODES: usize = 32;
/// Node cap; exceeding it without stabilizing is an error.
pub const QUAD_MAX_NODES: usize = 512;
/// Relative agreement demanded between successive node doublings. The
/// eigenvalue construction leaves ~1e-13 node noise at the largest rules,
/// so demanding much tighter than this makes smooth integrands fail
/// spuriously.
pub const QUAD_TOL: f64 = 1e-11;

static HERMITE_CACHE: OnceLock<Mutex<HashMap<usize, Arc<(Vec<f64>, Vec<f64>)>>>> =
    OnceLock::new();

/// Nodes and weights of the n-point (physicists') Gauss-Hermite rule, via
/// the Golub-Welsch eigenvalue construction, cached per n.
pub(crate) fn hermite_rule(n: usize) -> Result<Arc<(Vec<f64>, Vec<f64>)>> {
    assert!(n >= 1, "quadrature rule needs at least one node");
    let cache = HERMITE_CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    {
        let guard = cache.lock().expect("quadrature cache poisoned");
        if let Some(rule) = guard.get(&n) {
            return Ok(Arc::clone(rule));
        }
    }

    // Jacobi matrix of the Hermite weight: zero diagonal, off-diagonal
    // sqrt(k/2). Eigenvalues are the nodes; the squared first eigenvector
    // components, scaled by the total weight sqrt(pi), are the weights.
    let diag = vec![0.0; n];
    let offdiag: Vec<f64> = (1..n).map(|k| (k as f64 / 2.0).sqrt()).collect();
    let (nodes, first_row) = tridiag_eigen_first_row(&diag, &offdiag)?;
    let weights: Vec<f64> = first_row
        .iter()
        .map(|q| q * q * std::f64::consts::PI.sqrt())
        .collect();
    let rule = Arc::new((nodes, weights));

    let mut guard = cache.lock().expect("quadrature cache poisoned");
    Ok(Arc::clone(guard.entry(n).or_insert(rule)))
}

fn gauss_hermite_once(g: &impl Fn(f64) -> f64, mu: f64, sigma: f64, n: usize) -> Result<f64> {
    let rule = hermite_rule(n)?;
    let (nodes, weights) = rule.as_ref();
    let scale = std::f64::consts::SQRT_2 * sigma;
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    let mut acc = KahanSum::new();
    for (x, w) in nodes.iter().zip(weights.iter()) {
        acc.add(w * inv_sqrt_pi * g(mu + scale * x));
    }
    Ok(acc.value())
}

/// E[g(X)] for X ~ Normal(mu, sigma^2), by Gauss-Hermite quadrature with
/// node doubling until two successive estimates agree to [`QUAD_TOL`]
/// relative (or absolute near zero).
pub fn gauss_hermite_expectation(
    g: impl Fn(f64) -> f64,
    mu: f64,
    sigma: f64,
    start_nodes: usize,
) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidInput(format!(
            "quadrature scale must be positive, got {sigma}"
        )));
    }
    let mut n = start_nodes.clamp(2, QUAD_MAX_NODES);
    let mut prev = gauss_hermite_once(&g, mu, sigma, n)?;
    while n < QUAD_MAX_NODES {
        n = (n * 2).min(QUAD_MAX_NODES);
        let cur = gauss_hermite_once(&g, mu, sigma, n)?;
        let scale = prev.abs().max(cur.abs()).max(1.0);
        if (cur - prev).abs() <= QUAD_TOL * scale {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(Error::QuadratureFailure {
        tol: QUAD_TOL,
        max_nodes: QUAD_MAX_NODES,
    })
}
