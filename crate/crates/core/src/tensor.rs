//! Dense and low-rank containers for word functions, plus the contractions
//! that apply them to argument vectors.
//!
//! An attributive adjective is an `N x N` matrix acting on a noun vector; a
//! transitive verb is an `S x N x N` third-order tensor contracted with a
//! subject and an object vector. Both also come in a factored (low-rank) form
//! that stores `rank` outer-product components and applies them without ever
//! reconstructing the dense array.
//!
//! All summations are plain left-to-right loops over the canonical storage
//! order, so results are bit-reproducible regardless of thread count.

// The kernels below use explicit index arithmetic on purpose: the index
// order IS the summation order, and that order is part of the
// reproducibility contract.
#![allow(clippy::needless_range_loop)]

use crate::error::{Error, Result};

fn check_finite(values: &[f64], context: &str) -> Result<()> {
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::RejectedInput(format!(
                "{context}: non-finite entry {v} at index {i}"
            )));
        }
    }
    Ok(())
}

/// A dense vector of finite `f64` values. Always non-empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    values: Vec<f64>,
}

impl Vector {
    /// Build a vector, rejecting empty input and non-finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::RejectedInput("vector must be non-empty".into()));
        }
        check_finite(&values, "vector")?;
        Ok(Vector { values })
    }

    /// Internal constructor for values produced by our own arithmetic.
    /// Skips the finiteness scan; divergence detection happens at the
    /// training loop, not here.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        Vector { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Cosine similarity between two equal-length vectors.
///
/// By convention the cosine involving a zero vector is 0.
pub fn cosine(a: &Vector, b: &Vector) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "cosine".into(),
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(cosine_slices(a.values(), b.values()))
}

pub(crate) fn cosine_slices(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    // sqrt of the product rather than the product of sqrts: identical
    // vectors then divide by exactly their squared norm, so self-similarity
    // is exactly 1.
    dot / (na * nb).sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

fn frobenius_distance_slices(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc.sqrt()
}

/// A dense row-major matrix with positive dimensions and finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    /// Build a matrix from row-major values.
    ///
    /// Rejects zero dimensions, a length that disagrees with `rows * cols`,
    /// and non-finite entries.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::RejectedInput(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: format!("{rows}x{cols} matrix storage"),
                expected: rows * cols,
                actual: values.len(),
            });
        }
        check_finite(&values, "matrix")?;
        Ok(DenseMatrix { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        DenseMatrix::new(rows, cols, vec![0.0; rows * cols])
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), rows * cols);
        DenseMatrix { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert!(i < self.rows);
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    /// Matrix-vector product `M v`. `v.len()` must equal `cols`.
    ///
    /// `[[1,2],[3,4]] * (1,1) = (3,7)`.
    pub fn matvec(&self, v: &Vector) -> Result<Vector> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                context: "matvec argument".into(),
                expected: self.cols,
                actual: v.len(),
            });
        }
        Ok(Vector::from_raw(self.matvec_slice(v.values())))
    }

    pub(crate) fn matvec_slice(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            out[i] = dot(self.row(i), v);
        }
        out
    }

    /// Transposed product `M^T w`. `w.len()` must equal `rows`.
    pub(crate) fn matvec_t_slice(&self, w: &[f64]) -> Vec<f64> {
        debug_assert_eq!(w.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let wi = w[i];
            let row = self.row(i);
            for j in 0..self.cols {
                out[j] += wi * row[j];
            }
        }
        out
    }

    /// Frobenius distance `||A - B||_F` between equal-shape matrices.
    ///
    /// `||I_2 - 0||_F = sqrt(2)`.
    pub fn frobenius_distance(&self, other: &DenseMatrix) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                context: "frobenius distance (matrix shapes)".into(),
                expected: self.values.len(),
                actual: other.values.len(),
            });
        }
        Ok(frobenius_distance_slices(&self.values, &other.values))
    }

    /// Sum of squared entries, `||A||_F^2`.
    pub fn frobenius_norm_sq(&self) -> f64 {
        dot(&self.values, &self.values)
    }

    /// Row-major flattening.
    pub fn unfurl(&self) -> Vector {
        Vector::from_raw(self.values.clone())
    }
}

/// A dense third-order tensor with shape `(S, N, N)`, stored row-major with
/// the last index fastest: entry `(k, i, j)` lives at `(k*N + i)*N + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor3 {
    s: usize,
    n: usize,
    values: Vec<f64>,
}

impl DenseTensor3 {
    pub fn new(s: usize, n: usize, values: Vec<f64>) -> Result<Self> {
        if s == 0 || n == 0 {
            return Err(Error::RejectedInput(format!(
                "tensor dimensions must be positive, got {s}x{n}x{n}"
            )));
        }
        if values.len() != s * n * n {
            return Err(Error::DimensionMismatch {
                context: format!("{s}x{n}x{n} tensor storage"),
                expected: s * n * n,
                actual: values.len(),
            });
        }
        check_finite(&values, "tensor")?;
        Ok(DenseTensor3 { s, n, values })
    }

    pub fn zeros(s: usize, n: usize) -> Result<Self> {
        DenseTensor3::new(s, n, vec![0.0; s * n * n])
    }

    pub(crate) fn from_raw(s: usize, n: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), s * n * n);
        DenseTensor3 { s, n, values }
    }

    /// Output dimension (first axis).
    pub fn s(&self) -> usize {
        self.s
    }

    /// Argument dimension (second and third axes).
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        debug_assert!(k < self.s && i < self.n && j < self.n);
        self.values[(k * self.n + i) * self.n + j]
    }

    /// Bilinear contraction with a subject and an object vector:
    /// `out[k] = sum_i sum_j T[k,i,j] * subj[i] * obj[j]`.
    pub fn bilinear_apply(&self, subj: &Vector, obj: &Vector) -> Result<Vector> {
        if subj.len() != self.n {
            return Err(Error::DimensionMismatch {
                context: "bilinear subject".into(),
                expected: self.n,
                actual: subj.len(),
            });
        }
        if obj.len() != self.n {
            return Err(Error::DimensionMismatch {
                context: "bilinear object".into(),
                expected: self.n,
                actual: obj.len(),
            });
        }
        let s_vals = subj.values();
        let o_vals = obj.values();
        let mut out = vec![0.0; self.s];
        for k in 0..self.s {
            let mut acc = 0.0;
            for i in 0..self.n {
                let base = (k * self.n + i) * self.n;
                let si = s_vals[i];
                let mut inner = 0.0;
                for j in 0..self.n {
                    inner += self.values[base + j] * o_vals[j];
                }
                acc += si * inner;
            }
            out[k] = acc;
        }
        Ok(Vector::from_raw(out))
    }

    pub fn frobenius_distance(&self, other: &DenseTensor3) -> Result<f64> {
        if self.s != other.s || self.n != other.n {
            return Err(Error::DimensionMismatch {
                context: "frobenius distance (tensor shapes)".into(),
                expected: self.values.len(),
                actual: other.values.len(),
            });
        }
        Ok(frobenius_distance_slices(&self.values, &other.values))
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        dot(&self.values, &self.values)
    }

    pub fn unfurl(&self) -> Vector {
        Vector::from_raw(self.values.clone())
    }
}

/// A matrix in factored form: `A = sum_r u_r (outer) v_r`, stored as two
/// `rank x N` factor matrices. Applying it to a vector costs `2*N*rank`
/// multiplies: `A n = U^T (V n)`.
///
/// Parameter count is exactly `2 * N * rank`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankMatrix {
    u_factors: DenseMatrix,
    v_factors: DenseMatrix,
}

impl LowRankMatrix {
    /// Build from `rank x N` factor matrices. Both must have the same shape.
    pub fn new(u_factors: DenseMatrix, v_factors: DenseMatrix) -> Result<Self> {
        if u_factors.rows() != v_factors.rows() {
            return Err(Error::DimensionMismatch {
                context: "low-rank matrix factor ranks".into(),
                expected: u_factors.rows(),
                actual: v_factors.rows(),
            });
        }
        if u_factors.cols() != v_factors.cols() {
            return Err(Error::DimensionMismatch {
                context: "low-rank matrix factor widths".into(),
                expected: u_factors.cols(),
                actual: v_factors.cols(),
            });
        }
        Ok(LowRankMatrix {
            u_factors,
            v_factors,
        })
    }

    pub fn rank(&self) -> usize {
        self.u_factors.rows()
    }

    pub fn n(&self) -> usize {
        self.u_factors.cols()
    }

    pub fn u_factors(&self) -> &DenseMatrix {
        &self.u_factors
    }

    pub fn v_factors(&self) -> &DenseMatrix {
        &self.v_factors
    }

    pub(crate) fn factors_mut(&mut self) -> (&mut DenseMatrix, &mut DenseMatrix) {
        (&mut self.u_factors, &mut self.v_factors)
    }

    pub fn param_count(&self) -> usize {
        2 * self.n() * self.rank()
    }

    /// Factored application `U^T (V n)` without reconstruction.
    pub fn apply(&self, n: &Vector) -> Result<Vector> {
        if n.len() != self.n() {
            return Err(Error::DimensionMismatch {
                context: "low-rank matrix argument".into(),
                expected: self.n(),
                actual: n.len(),
            });
        }
        let hidden = self.v_factors.matvec_slice(n.values());
        Ok(Vector::from_raw(self.u_factors.matvec_t_slice(&hidden)))
    }

    /// Materialize the dense matrix `sum_r u_r (outer) v_r`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let n = self.n();
        let mut values = vec![0.0; n * n];
        for r in 0..self.rank() {
            let u_row = self.u_factors.row(r);
            let v_row = self.v_factors.row(r);
            for i in 0..n {
                let ui = u_row[i];
                let base = i * n;
                for j in 0..n {
                    values[base + j] += ui * v_row[j];
                }
            }
        }
        DenseMatrix::from_raw(n, n, values)
    }

    /// Factor-wise distance: `||U - U'||_F + ||V - V'||_F`.
    /// Requires equal ranks and widths.
    pub fn frobenius_distance(&self, other: &LowRankMatrix) -> Result<f64> {
        Ok(self.u_factors.frobenius_distance(&other.u_factors)?
            + self.v_factors.frobenius_distance(&other.v_factors)?)
    }
}

/// A third-order tensor in factored form:
/// `T = sum_r p_r (outer) q_r (outer) r_r`, stored as a `rank x S` output
/// factor and two `rank x N` argument factors. Application never
/// reconstructs: `T(s, o) = P^T (Q s . R o)` where `.` is the elementwise
/// product over the rank axis.
///
/// Parameter count is exactly `rank * (S + 2*N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankTensor3 {
    p_factors: DenseMatrix,
    q_factors: DenseMatrix,
    r_factors: DenseMatrix,
}

impl LowRankTensor3 {
    /// Build from a `rank x S` output factor and `rank x N` subject/object
    /// factors. All three must agree on `rank`; `q` and `r` on `N`.
    pub fn new(
        p_factors: DenseMatrix,
        q_factors: DenseMatrix,
        r_factors: DenseMatrix,
    ) -> Result<Self> {
        if p_factors.rows() != q_factors.rows() || p_factors.rows() != r_factors.rows() {
            return Err(Error::DimensionMismatch {
                context: "low-rank tensor factor ranks".into(),
                expected: p_factors.rows(),
                actual: q_factors.rows().max(r_factors.rows()),
            });
        }
        if q_factors.cols() != r_factors.cols() {
            return Err(Error::DimensionMismatch {
                context: "low-rank tensor argument widths".into(),
                expected: q_factors.cols(),
                actual: r_factors.cols(),
            });
        }
        Ok(LowRankTensor3 {
            p_factors,
            q_factors,
            r_factors,
        })
    }

    pub fn rank(&self) -> usize {
        self.p_factors.rows()
    }

    pub fn s(&self) -> usize {
        self.p_factors.cols()
    }

    pub fn n(&self) -> usize {
        self.q_factors.cols()
    }

    pub fn p_factors(&self) -> &DenseMatrix {
        &self.p_factors
    }

    pub fn q_factors(&self) -> &DenseMatrix {
        &self.q_factors
    }

    pub fn r_factors(&self) -> &DenseMatrix {
        &self.r_factors
    }

    pub(crate) fn factors_mut(
        &mut self,
    ) -> (&mut DenseMatrix, &mut DenseMatrix, &mut DenseMatrix) {
        (
            &mut self.p_factors,
            &mut self.q_factors,
            &mut self.r_factors,
        )
    }

    pub fn param_count(&self) -> usize {
        self.rank() * (self.s() + 2 * self.n())
    }

    /// Factored application `P^T (Q subj . R obj)`.
    pub fn apply(&self, subj: &Vector, obj: &Vector) -> Result<Vector> {
        if subj.len() != self.n() {
            return Err(Error::DimensionMismatch {
                context: "low-rank tensor subject".into(),
                expected: self.n(),
                actual: subj.len(),
            });
        }
        if obj.len() != self.n() {
            return Err(Error::DimensionMismatch {
                context: "low-rank tensor object".into(),
                expected: self.n(),
                actual: obj.len(),
            });
        }
        let mut hidden = self.q_factors.matvec_slice(subj.values());
        let b = self.r_factors.matvec_slice(obj.values());
        for (h, bv) in hidden.iter_mut().zip(&b) {
            *h *= bv;
        }
        Ok(Vector::from_raw(self.p_factors.matvec_t_slice(&hidden)))
    }

    /// Materialize the dense tensor `T[k,i,j] = sum_r p[r,k] q[r,i] r[r,j]`.
    pub fn reconstruct(&self) -> DenseTensor3 {
        let s = self.s();
        let n = self.n();
        let mut values = vec![0.0; s * n * n];
        for r in 0..self.rank() {
            let p_row = self.p_factors.row(r);
            let q_row = self.q_factors.row(r);
            let r_row = self.r_factors.row(r);
            for k in 0..s {
                let pk = p_row[k];
                for i in 0..n {
                    let base = (k * n + i) * n;
                    let pq = pk * q_row[i];
                    for j in 0..n {
                        values[base + j] += pq * r_row[j];
                    }
                }
            }
        }
        DenseTensor3::from_raw(s, n, values)
    }

    /// Factor-wise distance: `||P-P'||_F + ||Q-Q'||_F + ||R-R'||_F`.
    pub fn frobenius_distance(&self, other: &LowRankTensor3) -> Result<f64> {
        Ok(self.p_factors.frobenius_distance(&other.p_factors)?
            + self.q_factors.frobenius_distance(&other.q_factors)?
            + self.r_factors.frobenius_distance(&other.r_factors)?)
    }
}
