//! Structure recovery from samples.
//!
//! The estimator is deliberately plain: empirical correlation, a
//! Neumann-series applicability gate on ‖R − I‖, matrix inversion, then a
//! threshold on the sorted magnitudes of the precision off-diagonals. The
//! threshold is picked automatically by a knee detector over that sorted
//! curve, following the Kneedle construction of Satopää et al. (difference
//! between the normalized curve and the diagonal, knees at confirmed local
//! maxima). No smoothing pass is applied: the input here is already a
//! sorted monotone vector, so the spline stage of generic Kneedle
//! implementations would only blur the very gap being detected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::GraphStructure;
use crate::linalg::{
    correlation_from_covariance, invert_spd, norm_minus_identity, KahanSum, SampleBatch,
    SymmetricMatrix,
};

/// Sorted magnitudes of the strictly-lower-triangular entries of a
/// symmetric matrix, descending, with the index pair each value came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaTriangle {
    /// Magnitudes, non-increasing.
    pub values: Vec<f64>,
    /// `(i, j)` with `i > j`, aligned with `values`.
    pub pair_index: Vec<(usize, usize)>,
}

/// Outcome of knee detection over a sorted curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KneeResult {
    /// Index of the knee in the input vector (meaningful when `found`).
    pub index: usize,
    /// Raw input value at the knee, used as the cut threshold.
    pub threshold: f64,
    /// False when the threshold was supplied externally instead of
    /// detected.
    pub found: bool,
}

/// Everything the estimator produced on one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnResult {
    /// Empirical correlation matrix.
    pub r_hat: SymmetricMatrix,
    /// Its inverse, the estimated precision matrix.
    pub gamma_hat: SymmetricMatrix,
    /// ‖R̂ − I‖.
    pub applicability_norm: f64,
    /// Whether the applicability gate passed (norm < 1).
    pub applicable: bool,
    /// Sorted off-diagonal magnitudes of `gamma_hat`.
    pub gamma_triangle: GammaTriangle,
    pub knee: KneeResult,
    /// `gamma_hat` with off-diagonals at or below the threshold zeroed.
    pub gamma_thresholded: SymmetricMatrix,
    /// Graph read off the surviving off-diagonals.
    pub graph: GraphStructure,
}

/// Sample covariance with the n−1 denominator.
pub fn empirical_covariance(batch: &SampleBatch) -> Result<SymmetricMatrix> {
    let n = batch.n_rows();
    let d = batch.n_cols();
    if n < d + 1 {
        return Err(Error::TooFewSamples { needed: d + 1, got: n });
    }

    let mut means = vec![KahanSum::new(); d];
    for r in 0..n {
        let row = batch.row(r);
        for (m, v) in means.iter_mut().zip(row.iter()) {
            m.add(*v);
        }
    }
    let means: Vec<f64> = means.iter().map(|m| m.value() / n as f64).collect();

    // One pass over the rows, accumulating all packed lower-triangle
    // products of the centered entries.
    let mut acc = vec![KahanSum::new(); d * (d + 1) / 2];
    let mut centered = vec![0.0; d];
    for r in 0..n {
        let row = batch.row(r);
        for ((c, v), m) in centered.iter_mut().zip(row.iter()).zip(means.iter()) {
            *c = v - m;
        }
        for i in 0..d {
            let base = i * (i + 1) / 2;
            for j in 0..=i {
                acc[base + j].add(centered[i] * centered[j]);
            }
        }
    }
    let denom = (n - 1) as f64;
    Ok(SymmetricMatrix::from_fn(d, |i, j| {
        acc[i * (i + 1) / 2 + j].value() / denom
    }))
}

/// Pearson correlation matrix with exact unit diagonal.
pub fn empirical_correlation(batch: &SampleBatch) -> Result<SymmetricMatrix> {
    let cov = empirical_covariance(batch)?;
    for i in 0..cov.dim() {
        if cov.get(i, i) <= 0.0 {
            return Err(Error::DegenerateColumn(i));
        }
    }
    correlation_from_covariance(&cov)
}

/// The Neumann-series gate: returns (‖r − I‖ < 1, the norm).
pub fn applicability_check(r: &SymmetricMatrix) -> Result<(bool, f64)> {
    let norm = norm_minus_identity(r)?;
    Ok((norm < 1.0, norm))
}

/// Collects and sorts the off-diagonal magnitudes of a symmetric matrix,
/// descending, ties broken by index pair so the order is reproducible.
pub fn gamma_triangle_of(gamma: &SymmetricMatrix) -> GammaTriangle {
    let d = gamma.dim();
    let mut entries: Vec<(f64, (usize, usize))> = Vec::with_capacity(d * (d - 1) / 2);
    for i in 1..d {
        for j in 0..i {
            entries.push((gamma.get(i, j).abs(), (i, j)));
        }
    }
    entries.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    GammaTriangle {
        values: entries.iter().map(|e| e.0).collect(),
        pair_index: entries.iter().map(|e| e.1).collect(),
    }
}

/// Knee detection on a non-increasing vector (convex decreasing curve).
///
/// Normalizes to the unit square, flips to y' = 1 − y, and forms the
/// difference curve D = y' − x. Local maxima of D are knee candidates
/// (endpoints included, compared only against their one neighbor); a
/// candidate is confirmed when D later drops below its value minus
/// `sensitivity` times the mean x-spacing, before the next local maximum
/// resets the bar (and any local minimum drops the bar to zero). With
/// `online` set, scanning continues after a confirmation and the last
/// confirmed knee wins; otherwise the first is returned.
///
/// The returned threshold is the raw input value at the knee index.
pub fn kneedle(values: &[f64], sensitivity: f64, online: bool) -> Result<KneeResult> {
    let n = values.len();
    if n < 3 {
        return Err(Error::NoKnee);
    }
    for w in values.windows(2) {
        if w[1] > w[0] {
            return Err(Error::InvalidInput(
                "knee detection input must be non-increasing".into(),
            ));
        }
    }
    let vmax = values[0];
    let vmin = values[n - 1];
    if vmax == vmin {
        return Err(Error::NoKnee);
    }

    let step = 1.0 / (n - 1) as f64;
    let d: Vec<f64> = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let x = i as f64 * step;
            let y = (v - vmin) / (vmax - vmin);
            (1.0 - y) - x
        })
        .collect();

    let mut is_max = vec![false; n];
    let mut is_min = vec![false; n];
    for i in 0..n {
        let left_ge = i == 0 || d[i] >= d[i - 1];
        let right_ge = i == n - 1 || d[i] >= d[i + 1];
        is_max[i] = left_ge && right_ge;
        let left_le = i == 0 || d[i] <= d[i - 1];
        let right_le = i == n - 1 || d[i] <= d[i + 1];
        is_min[i] = left_le && right_le;
    }
    let first_max = match is_max.iter().position(|&m| m) {
        Some(i) => i,
        None => return Err(Error::NoKnee),
    };

    let mut knee: Option<usize> = None;
    let mut threshold = 0.0;
    let mut threshold_index = 0usize;
    for i in first_max..(n - 1) {
        if is_max[i] {
            threshold = d[i] - sensitivity * step;
            threshold_index = i;
        }
        if is_min[i] {
            threshold = 0.0;
        }
        if d[i + 1] < threshold {
            knee = Some(threshold_index);
            if !online {
                break;
            }
        }
    }
    match knee {
        Some(index) => Ok(KneeResult {
            index,
            threshold: values[index],
            found: true,
        }),
        None => Err(Error::NoKnee),
    }
}

/// Zeroes every off-diagonal entry with magnitude at or below `t`
/// (diagonal untouched) and reads the graph off the survivors.
pub fn threshold_precision(
    gamma: &SymmetricMatrix,
    t: f64,
) -> (SymmetricMatrix, GraphStructure) {
    debug_assert!(t >= 0.0, "threshold must be non-negative");
    let d = gamma.dim();
    let mut edges = Vec::new();
    let thresholded = SymmetricMatrix::from_fn(d, |i, j| {
        if i == j {
            return gamma.get(i, i);
        }
        let v = gamma.get(i, j);
        if v.abs() <= t {
            0.0
        } else {
            edges.push((j, i));
            v
        }
    });
    let graph = GraphStructure::new(d, edges)
        .expect("thresholding produces valid in-range edges");
    (thresholded, graph)
}

/// Options for [`learn`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnOpts {
    /// Stop with an error when the applicability gate fails; permissive
    /// mode carries on and only records the failure.
    pub strict: bool,
    /// Skip knee detection and cut at this threshold instead.
    pub threshold_override: Option<f64>,
}

impl Default for LearnOpts {
    fn default() -> Self {
        LearnOpts {
            strict: true,
            threshold_override: None,
        }
    }
}

/// The full estimator: correlation, applicability gate, inversion, sorted
/// off-diagonal magnitudes, knee threshold, cut.
pub fn learn(batch: &SampleBatch, opts: &LearnOpts) -> Result<LearnResult> {
    let r_hat = empirical_correlation(batch)?;
    let (applicable, applicability_norm) = applicability_check(&r_hat)?;
    if !applicable && opts.strict {
        return Err(Error::ApplicabilityFailed {
            norm: applicability_norm,
        });
    }
    let gamma_hat = invert_spd(&r_hat).map_err(|e| match e {
        Error::NotPositiveDefinite { .. } => Error::SingularCorrelation,
        other => other,
    })?;
    let gamma_triangle = gamma_triangle_of(&gamma_hat);
    let knee = match opts.threshold_override {
        Some(t) => {
            if !(t >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "threshold must be non-negative, got {t}"
                )));
            }
            KneeResult {
                index: 0,
                threshold: t,
                found: false,
            }
        }
        None => kneedle(&gamma_triangle.values, 1.0, true)?,
    };
    let (gamma_thresholded, graph) = threshold_precision(&gamma_hat, knee.threshold);
    Ok(LearnResult {
        r_hat,
        gamma_hat,
        applicability_norm,
        applicable,
        gamma_triangle,
        knee,
        gamma_thresholded,
        graph,
    })
}
