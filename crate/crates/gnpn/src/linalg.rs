//! Dense symmetric linear algebra.
//!
//! Everything in this crate runs on small dense matrices (dimensions in the
//! tens), so the tools here favor determinism and clarity over scalability:
//! factorizations are straightforward textbook loops, all reductions run in
//! a fixed order, and the eigensolver is a port of the classic symmetric
//! Householder-plus-QL routine (Numerical Recipes / EISPACK lineage) rather
//! than an iterative method with a random start.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when validating that externally supplied rows form a
/// symmetric matrix.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// A dense real symmetric matrix.
///
/// Only the lower triangle is stored, so `m.get(i, j) == m.get(j, i)` holds
/// exactly by construction, not merely up to rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    dim: usize,
    /// Packed lower triangle, row by row: entry (i, j) with i >= j lives at
    /// `i * (i + 1) / 2 + j`.
    tri: Vec<f64>,
}

impl SymmetricMatrix {
    /// The all-zero matrix of the given dimension.
    ///
    /// # Panics
    /// Panics if `dim == 0`; a zero-dimensional matrix is never meaningful
    /// here.
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "matrix dimension must be at least 1");
        SymmetricMatrix {
            dim,
            tri: vec![0.0; dim * (dim + 1) / 2],
        }
    }

    /// The identity matrix of the given dimension.
    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds a matrix by calling `f(i, j)` for every pair with `i >= j`.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..=i {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Builds a matrix from full rows, checking symmetry to [`SYMMETRY_TOL`]
    /// and then averaging the two triangles so the result is exactly
    /// symmetric.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::InvalidInput("matrix has no rows".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            for j in 0..i {
                let diff = (rows[i][j] - rows[j][i]).abs();
                if !(diff <= SYMMETRY_TOL) {
                    return Err(Error::AsymmetricInput {
                        i,
                        j,
                        upper: rows[j][i],
                        lower: rows[i][j],
                    });
                }
            }
        }
        Ok(Self::from_fn(dim, |i, j| {
            if i == j {
                rows[i][i]
            } else {
                0.5 * (rows[i][j] + rows[j][i])
            }
        }))
    }

    /// Matrix dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn idx(i: usize, j: usize) -> usize {
        debug_assert!(i >= j);
        i * (i + 1) / 2 + j
    }

    /// Entry (i, j). Symmetric access: the order of the indices does not
    /// matter.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i >= j {
            self.tri[Self::idx(i, j)]
        } else {
            self.tri[Self::idx(j, i)]
        }
    }

    /// Sets entry (i, j) and, implicitly, (j, i).
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        if i >= j {
            self.tri[Self::idx(i, j)] = value;
        } else {
            self.tri[Self::idx(j, i)] = value;
        }
    }

    /// Expands to full rows.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j)).collect())
            .collect()
    }

    /// Expands to a flat row-major buffer of length `dim * dim`.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        for i in 0..self.dim {
            for j in 0..self.dim {
                out[i * self.dim + j] = self.get(i, j);
            }
        }
        out
    }

    /// Maximum absolute entry-wise difference to another matrix.
    ///
    /// # Panics
    /// Panics if the dimensions differ; compare like with like.
    pub fn max_abs_diff(&self, other: &SymmetricMatrix) -> f64 {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        self.tri
            .iter()
            .zip(other.tri.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Serialized form shared by the JSON interfaces: full rows under a `dim`
/// field, e.g. `{"dim": 2, "rows": [[1.0, 0.5], [0.5, 1.0]]}`.
#[derive(Serialize, Deserialize)]
struct MatrixJson {
    dim: usize,
    rows: Vec<Vec<f64>>,
}

impl Serialize for SymmetricMatrix {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixJson {
            dim: self.dim,
            rows: self.to_rows(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SymmetricMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = MatrixJson::deserialize(deserializer)?;
        if raw.rows.len() != raw.dim {
            return Err(serde::de::Error::custom(format!(
                "dim field says {} but {} rows were given",
                raw.dim,
                raw.rows.len()
            )));
        }
        SymmetricMatrix::from_rows(&raw.rows).map_err(serde::de::Error::custom)
    }
}

/// Compensated (Kahan) accumulator, used wherever a long sum must come out
/// the same no matter how the caller is threaded, and with less rounding
/// drift than naive accumulation.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let y = value - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Lower-triangular Cholesky factor L with A = L * L^T.
///
/// Returns the factor as a flat row-major `dim * dim` buffer whose strict
/// upper triangle is zero. Fails with [`Error::NotPositiveDefinite`] when a
/// pivot is not strictly positive.
pub fn cholesky_factor(m: &SymmetricMatrix) -> Result<Vec<f64>> {
    let n = m.dim();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut acc = KahanSum::new();
            for k in 0..j {
                acc.add(l[i * n + k] * l[j * n + k]);
            }
            let s = m.get(i, j) - acc.value();
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::NotPositiveDefinite { index: i, pivot: s });
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Inverse of a symmetric positive definite matrix, via its Cholesky factor.
///
/// The result is exactly symmetric. For the well-conditioned inputs this
/// crate works with, `m * invert_spd(m)` deviates from the identity by less
/// than 1e-10 per entry.
pub fn invert_spd(m: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    let n = m.dim();
    let l = cholesky_factor(m)?;

    // Invert L in place by forward substitution: solves L * X = I where X
    // is again lower triangular.
    let mut linv = vec![0.0; n * n];
    for j in 0..n {
        linv[j * n + j] = 1.0 / l[j * n + j];
        for i in (j + 1)..n {
            let mut acc = KahanSum::new();
            for k in j..i {
                acc.add(l[i * n + k] * linv[k * n + j]);
            }
            linv[i * n + j] = -acc.value() / l[i * n + i];
        }
    }

    // A^-1 = L^-T * L^-1; only the lower triangle is assembled.
    Ok(SymmetricMatrix::from_fn(n, |i, j| {
        let mut acc = KahanSum::new();
        for k in i.max(j)..n {
            acc.add(linv[k * n + i] * linv[k * n + j]);
        }
        acc.value()
    }))
}

/// Householder reduction of a dense symmetric matrix to tridiagonal form,
/// accumulating the orthogonal transformation.
///
/// Follows the classic `tred2` routine. On return, `d` holds the diagonal,
/// `e` the subdiagonal (with `e[0] == 0`), and `q` the accumulated
/// orthogonal matrix as a flat row-major `n * n` buffer.
fn householder_tridiag(m: &SymmetricMatrix) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = m.dim();
    let mut q = m.to_dense();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];

    for (i, di) in d.iter_mut().enumerate() {
        *di = q[(n - 1) * n + i];
    }

    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = q[(i - 1) * n + j];
                q[i * n + j] = 0.0;
                q[j * n + i] = 0.0;
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }

            for j in 0..i {
                f = d[j];
                q[j * n + i] = f;
                g = e[j] + q[j * n + j] * f;
                for k in (j + 1)..i {
                    g += q[k * n + j] * d[k];
                    e[k] += q[k * n + j] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    q[k * n + j] -= f * e[k] + g * d[k];
                }
                d[j] = q[(i - 1) * n + j];
                q[i * n + j] = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..(n - 1) {
        q[(n - 1) * n + i] = q[i * n + i];
        q[i * n + i] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for (k, dk) in d.iter_mut().enumerate().take(i + 1) {
                *dk = q[k * n + i + 1] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += q[k * n + i + 1] * q[k * n + j];
                }
                for (k, dk) in d.iter().enumerate().take(i + 1) {
                    q[k * n + j] -= g * dk;
                }
            }
        }
        for k in 0..=i {
            q[k * n + i + 1] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = q[(n - 1) * n + j];
        q[(n - 1) * n + j] = 0.0;
    }
    q[(n - 1) * n + n - 1] = 1.0;
    e[0] = 0.0;

    (d, e, q)
}

/// QL iteration with implicit shifts on a symmetric tridiagonal matrix.
///
/// `d` is the diagonal and `e` the subdiagonal (`e[0]` unused). `acc` is an
/// accumulator with `acc_rows` rows and `n` columns, row-major; every plane
/// rotation applied to the tridiagonal matrix is applied to its columns, so
/// passing the identity yields full eigenvectors while a single unit row
/// yields just one row of the eigenvector matrix. Eigenvalues come back
/// ascending, with accumulator columns permuted to match.
fn tridiag_ql(d: &mut [f64], e: &mut [f64], acc: &mut [f64], acc_rows: usize) -> Result<()> {
    let n = d.len();
    const MAX_ITER: usize = 50;

    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());

        let mut m = l;
        while m < n && e[m].abs() > tst1 * f64::EPSILON {
            m += 1;
        }

        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter >= MAX_ITER {
                    return Err(Error::IterationLimit(MAX_ITER));
                }

                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);

                    for k in 0..acc_rows {
                        let row = k * n;
                        h = acc[row + i + 1];
                        acc[row + i + 1] = s * acc[row + i] + c * h;
                        acc[row + i] = c * acc[row + i] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;

                if e[l].abs() <= tst1 * f64::EPSILON {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }

    // Selection sort into ascending order, carrying accumulator columns.
    for i in 0..(n - 1) {
        let mut k = i;
        let mut p = d[i];
        for (j, dj) in d.iter().enumerate().take(n).skip(i + 1) {
            if *dj < p {
                k = j;
                p = *dj;
            }
        }
        if k != i {
            d[k] = d[i];
            d[i] = p;
            for r in 0..acc_rows {
                acc.swap(r * n + i, r * n + k);
            }
        }
    }
    Ok(())
}

/// Full eigendecomposition of a symmetric matrix.
///
/// Returns eigenvalues in ascending order and the matching orthonormal
/// eigenvectors as the columns of a flat row-major `n * n` buffer.
pub fn sym_eigen(m: &SymmetricMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = m.dim();
    if n == 1 {
        return Ok((vec![m.get(0, 0)], vec![1.0]));
    }
    let (mut d, mut e, mut q) = householder_tridiag(m);
    tridiag_ql(&mut d, &mut e, &mut q, n)?;
    Ok((d, q))
}

/// Eigenvalues of a symmetric tridiagonal matrix together with the first
/// component of each (normalized) eigenvector.
///
/// `offdiag` has length `n - 1`. This is the piece of the decomposition
/// that Golub-Welsch quadrature rules need, and skipping the rest keeps the
/// work quadratic instead of cubic.
pub fn tridiag_eigen_first_row(
    diag: &[f64],
    offdiag: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = diag.len();
    assert_eq!(offdiag.len() + 1, n, "offdiagonal length must be n - 1");
    if n == 1 {
        return Ok((vec![diag[0]], vec![1.0]));
    }
    let mut d = diag.to_vec();
    // tridiag_ql expects the subdiagonal shifted so that e[i] couples rows
    // i - 1 and i before its own internal re-shift.
    let mut e = vec![0.0; n];
    e[1..n].copy_from_slice(offdiag);
    let mut row = vec![0.0; n];
    row[0] = 1.0;
    tridiag_ql(&mut d, &mut e, &mut row, 1)?;
    Ok((d, row))
}

/// Operator (spectral) norm of a symmetric matrix: the largest absolute
/// eigenvalue.
pub fn spectral_norm(m: &SymmetricMatrix) -> Result<f64> {
    let (eigs, _) = sym_eigen(m)?;
    Ok(eigs.iter().fold(0.0, |acc: f64, &v| acc.max(v.abs())))
}

/// Rescales a covariance matrix to a correlation matrix with an exactly
/// unit diagonal.
pub fn correlation_from_covariance(m: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    let n = m.dim();
    let mut inv_sd = vec![0.0; n];
    for (i, slot) in inv_sd.iter_mut().enumerate() {
        let v = m.get(i, i);
        if v <= 0.0 || !v.is_finite() {
            return Err(Error::NonPositiveVariance { index: i, value: v });
        }
        *slot = 1.0 / v.sqrt();
    }
    Ok(SymmetricMatrix::from_fn(n, |i, j| {
        if i == j {
            1.0
        } else {
            m.get(i, j) * inv_sd[i] * inv_sd[j]
        }
    }))
}

/// Spectral norm of `m - I`, the quantity gating the whole pipeline.
pub fn norm_minus_identity(m: &SymmetricMatrix) -> Result<f64> {
    let n = m.dim();
    let shifted = SymmetricMatrix::from_fn(n, |i, j| {
        if i == j {
            m.get(i, i) - 1.0
        } else {
            m.get(i, j)
        }
    });
    spectral_norm(&shifted)
}

/// A batch of real observations: `n_rows` samples of `n_cols` variables,
/// stored row-major. The carrier for everything between the Gaussian
/// sampler and the structure learner.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    n_rows: usize,
    n_cols: usize,
    names: Vec<String>,
    data: Vec<f64>,
}

impl SampleBatch {
    /// Wraps a row-major buffer. Column names default to `x0, x1, ...`.
    ///
    /// # Panics
    /// Panics if the buffer length is not `n_rows * n_cols` or `n_cols` is
    /// zero.
    pub fn new(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Self {
        assert!(n_cols >= 1, "batch must have at least one column");
        assert_eq!(data.len(), n_rows * n_cols, "buffer length mismatch");
        let names = (0..n_cols).map(|j| format!("x{j}")).collect();
        SampleBatch {
            n_rows,
            n_cols,
            names,
            data,
        }
    }

    /// Number of observations.
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    /// Number of variables.
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Column names, in order.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Replaces the column names.
    ///
    /// # Panics
    /// Panics if the count does not match the number of columns.
    pub fn set_names(&mut self, names: Vec<String>) {
        assert_eq!(names.len(), self.n_cols, "one name per column");
        self.names = names;
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n_cols + col]
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.n_cols..(row + 1) * self.n_cols]
    }

    /// Full row-major buffer.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Applies `f` to every entry of column `col`.
    pub fn map_column(&mut self, col: usize, mut f: impl FnMut(f64) -> f64) {
        for r in 0..self.n_rows {
            let v = &mut self.data[r * self.n_cols + col];
            *v = f(*v);
        }
    }

    /// Reads a batch from CSV with a header row of variable names.
    pub fn from_csv_reader(reader: impl std::io::Read) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let names: Vec<String> = rd
            .headers()?
            .iter()
            .map(|s| s.to_string())
            .collect();
        let n_cols = names.len();
        if n_cols == 0 {
            return Err(Error::InvalidInput("CSV header has no columns".into()));
        }
        let mut data = Vec::new();
        let mut n_rows = 0;
        for record in rd.records() {
            let record = record?;
            if record.len() != n_cols {
                return Err(Error::DimensionMismatch {
                    expected: n_cols,
                    actual: record.len(),
                });
            }
            for field in record.iter() {
                let v: f64 = field.parse().map_err(|_| {
                    Error::InvalidInput(format!("non-numeric CSV field `{field}`"))
                })?;
                data.push(v);
            }
            n_rows += 1;
        }
        let mut batch = SampleBatch::new(n_rows, n_cols, data);
        batch.set_names(names);
        Ok(batch)
    }

    /// Writes the batch as CSV with a header row.
    pub fn to_csv_writer(&self, writer: impl std::io::Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(writer);
        wr.write_record(&self.names)?;
        let mut record = Vec::with_capacity(self.n_cols);
        for r in 0..self.n_rows {
            record.clear();
            for c in 0..self.n_cols {
                record.push(format!("{}", self.get(r, c)));
            }
            wr.write_record(&record)?;
        }
        wr.flush()?;
        Ok(())
    }
}
