//! Matrix-prediction baseline for adjectives.
//!
//! Instead of giving every adjective its own trained matrix, learn one
//! third-order tensor `G` that maps an adjective's word vector `a` to a
//! matrix `G·a`. Training happens in two steps: first fit matrices for
//! data-rich adjectives the ordinary way, then fit `G` to reproduce those
//! matrices from the corresponding word vectors. Once `G` is trained it
//! predicts a matrix for any adjective with a word vector — including ones
//! never seen with training phrases.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{EmbeddingTable, Pos, WordId};
use crate::tensor::{DenseMatrix, Vector};
use crate::train::{AdadeltaState, StopReason, ADADELTA_EPSILON, ADADELTA_RHO, PATIENCE,
    STAGNATION_TOLERANCE};

/// Default epoch cap for fitting the prediction tensor. The summed
/// Frobenius objective over dozens of matrices needs a longer budget than
/// per-word training does.
pub const GLF_MAX_ITERATIONS: usize = 500;

/// Minimum tuple count for an adjective to join the pretraining step.
pub const GLF_MIN_TUPLES: usize = 50;

/// An `N x N x D` tensor mapping word vectors (length `D`) to `N x N`
/// matrices. Stored row-major over (i, j) cells with the `D` mode
/// innermost, so prediction is one dot product per matrix cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GlfTensor {
    n: usize,
    d: usize,
    values: Vec<f64>,
}

impl GlfTensor {
    pub fn new(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::RejectedInput(format!(
                "prediction tensor dimensions must be positive, got {n}x{n}x{d}"
            )));
        }
        if values.len() != n * n * d {
            return Err(Error::DimensionMismatch {
                context: "prediction tensor values".into(),
                expected: n * n * d,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::RejectedInput(
                "prediction tensor entries must be finite".into(),
            ));
        }
        Ok(GlfTensor { n, d, values })
    }

    pub fn zeros(n: usize, d: usize) -> Result<Self> {
        GlfTensor::new(n, d, vec![0.0; n * n * d])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Predict a matrix from a word vector: `M[i,j] = sum_d G[i,j,d] * a[d]`.
/// Linear in `a` by construction.
pub fn glf_predict(g: &GlfTensor, a: &Vector) -> Result<DenseMatrix> {
    if a.len() != g.d {
        return Err(Error::DimensionMismatch {
            context: "word vector for matrix prediction".into(),
            expected: g.d,
            actual: a.len(),
        });
    }
    let mut out = vec![0.0; g.n * g.n];
    for (cell, slot) in out.iter_mut().enumerate() {
        let base = cell * g.d;
        let mut acc = 0.0;
        for (k, ak) in a.values().iter().enumerate() {
            acc += g.values[base + k] * ak;
        }
        *slot = acc;
    }
    DenseMatrix::new(g.n, g.n, out)
}

/// Settings for fitting the prediction tensor.
#[derive(Debug, Clone, Copy)]
pub struct GlfConfig {
    pub max_iterations: usize,
    pub patience: usize,
    pub stagnation_tolerance: f64,
    pub adadelta_rho: f64,
    pub adadelta_eps: f64,
}

impl Default for GlfConfig {
    fn default() -> Self {
        GlfConfig {
            max_iterations: GLF_MAX_ITERATIONS,
            patience: PATIENCE,
            stagnation_tolerance: STAGNATION_TOLERANCE,
            adadelta_rho: ADADELTA_RHO,
            adadelta_eps: ADADELTA_EPSILON,
        }
    }
}

impl GlfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::RejectedInput("max_iterations must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::RejectedInput("patience must be positive".into()));
        }
        if !self.stagnation_tolerance.is_finite() || self.stagnation_tolerance < 0.0 {
            return Err(Error::RejectedInput(format!(
                "stagnation tolerance must be finite and non-negative, got {}",
                self.stagnation_tolerance
            )));
        }
        if !(0.0..1.0).contains(&self.adadelta_rho) {
            return Err(Error::RejectedInput(format!(
                "adadelta rho must lie in [0, 1), got {}",
                self.adadelta_rho
            )));
        }
        if !self.adadelta_eps.is_finite() || self.adadelta_eps <= 0.0 {
            return Err(Error::RejectedInput(format!(
                "adadelta epsilon must be positive and finite, got {}",
                self.adadelta_eps
            )));
        }
        Ok(())
    }
}

/// Outcome of fitting the prediction tensor.
#[derive(Debug, Clone)]
pub struct GlfReport {
    pub final_loss: f64,
    pub iterations: usize,
    pub stop_reason: StopReason,
    /// Objective per epoch, starting with the value at the zero tensor.
    pub loss_history: Vec<f64>,
}

/// Matrix dimension, vector dimension, and the (vector, matrix) pairs in
/// sorted word order.
type ResolvedPairs<'a> = (usize, usize, Vec<(&'a Vector, &'a DenseMatrix)>);

fn resolve_pairs<'a>(
    pretrained: &'a BTreeMap<WordId, DenseMatrix>,
    adj_vectors: &'a EmbeddingTable,
) -> Result<ResolvedPairs<'a>> {
    if pretrained.len() < 2 {
        return Err(Error::RejectedInput(format!(
            "matrix prediction needs at least 2 pretrained adjectives, got {}",
            pretrained.len()
        )));
    }
    let d = adj_vectors.dim();
    let mut n = 0;
    let mut pairs = Vec::with_capacity(pretrained.len());
    for (word, matrix) in pretrained {
        if word.pos() != Pos::Adjective {
            return Err(Error::RejectedInput(format!(
                "matrix prediction covers adjectives only, got '{word}'"
            )));
        }
        if matrix.rows() != matrix.cols() {
            return Err(Error::DimensionMismatch {
                context: format!("pretrained matrix for '{word}'"),
                expected: matrix.rows(),
                actual: matrix.cols(),
            });
        }
        if n == 0 {
            n = matrix.rows();
        } else if matrix.rows() != n {
            return Err(Error::DimensionMismatch {
                context: format!("pretrained matrix for '{word}'"),
                expected: n,
                actual: matrix.rows(),
            });
        }
        let vector = adj_vectors.require(word.surface())?;
        pairs.push((vector, matrix));
    }
    Ok((n, d, pairs))
}

/// The summed objective `sum_j 0.5 * ||G . a_j - A_j||_F^2` over the
/// pretrained (vector, matrix) pairs.
pub fn glf_loss(
    g: &GlfTensor,
    pretrained: &BTreeMap<WordId, DenseMatrix>,
    adj_vectors: &EmbeddingTable,
) -> Result<f64> {
    let (n, d, pairs) = resolve_pairs(pretrained, adj_vectors)?;
    check_dims(g, n, d)?;
    let mut loss = 0.0;
    for (a, target) in &pairs {
        let predicted = glf_predict(g, a)?;
        for (p, t) in predicted.values().iter().zip(target.values()) {
            let r = p - t;
            loss += 0.5 * r * r;
        }
    }
    Ok(loss)
}

/// Exact gradient of [`glf_loss`] with respect to the tensor entries, flat
/// in storage order: `dL/dG[i,j,d] = sum_j residual_j[i,j] * a_j[d]`.
pub fn glf_gradient(
    g: &GlfTensor,
    pretrained: &BTreeMap<WordId, DenseMatrix>,
    adj_vectors: &EmbeddingTable,
) -> Result<Vec<f64>> {
    let (n, d, pairs) = resolve_pairs(pretrained, adj_vectors)?;
    check_dims(g, n, d)?;
    let mut grad = vec![0.0; g.values.len()];
    for (a, target) in &pairs {
        let predicted = glf_predict(g, a)?;
        for (cell, (p, t)) in predicted.values().iter().zip(target.values()).enumerate() {
            let r = p - t;
            let base = cell * g.d;
            for (k, ak) in a.values().iter().enumerate() {
                grad[base + k] += r * ak;
            }
        }
    }
    Ok(grad)
}

fn check_dims(g: &GlfTensor, n: usize, d: usize) -> Result<()> {
    if g.n != n || g.d != d {
        return Err(Error::DimensionMismatch {
            context: "prediction tensor against training pairs".into(),
            expected: n * n * d,
            actual: g.n * g.n * g.d,
        });
    }
    Ok(())
}

/// Fit the prediction tensor to pretrained matrices with ADADELTA from a
/// zero start, stopping on stagnation or rising loss. Deterministic: no
/// randomness is involved at all.
pub fn glf_train(
    pretrained: &BTreeMap<WordId, DenseMatrix>,
    adj_vectors: &EmbeddingTable,
    config: &GlfConfig,
) -> Result<(GlfTensor, GlfReport)> {
    config.validate()?;
    let (n, d, _) = resolve_pairs(pretrained, adj_vectors)?;
    let mut g = GlfTensor::zeros(n, d)?;
    let mut state = AdadeltaState::new(config.adadelta_rho, config.adadelta_eps, n * n * d)?;

    let initial = glf_loss(&g, pretrained, adj_vectors)?;
    if !initial.is_finite() {
        return Err(Error::NumericalFailure(
            "prediction-tensor loss is not finite before the first iteration".into(),
        ));
    }
    let mut history = vec![initial];
    let mut prev = initial;
    let mut stagnant = 0;
    let mut rising = 0;
    let mut iterations = 0;
    let mut stop_reason = StopReason::MaxIters;

    for epoch in 1..=config.max_iterations {
        let grad = glf_gradient(&g, pretrained, adj_vectors)?;
        let update = state.step(&grad)?;
        for (v, u) in g.values.iter_mut().zip(&update) {
            *v += u;
        }
        let loss = glf_loss(&g, pretrained, adj_vectors)?;
        if !loss.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "prediction-tensor loss became non-finite at iteration {epoch}"
            )));
        }
        history.push(loss);
        iterations = epoch;

        if loss > prev {
            rising += 1;
        } else {
            rising = 0;
        }
        let relative_gain = if prev > 0.0 { (prev - loss) / prev } else { 0.0 };
        if relative_gain < config.stagnation_tolerance {
            stagnant += 1;
        } else {
            stagnant = 0;
        }
        prev = loss;
        if rising >= config.patience {
            stop_reason = StopReason::ErrorIncrease;
            break;
        }
        if stagnant >= config.patience {
            stop_reason = StopReason::Stagnation;
            break;
        }
    }

    let report = GlfReport {
        final_loss: prev,
        iterations,
        stop_reason,
        loss_history: history,
    };
    Ok((g, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predict_zero_vector_gives_zero_matrix() {
        let g = GlfTensor::new(2, 3, (0..12).map(|i| i as f64).collect()).unwrap();
        let a = Vector::new(vec![0.0, 0.0, 0.0]).unwrap();
        let m = glf_predict(&g, &a).unwrap();
        assert!(m.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn predict_basis_vector_selects_slice() {
        // Only the d=0 slice is nonzero; e0 must recover it exactly.
        let n = 2;
        let d = 3;
        let mut values = vec![0.0; n * n * d];
        for cell in 0..n * n {
            values[cell * d] = (cell + 1) as f64;
        }
        let g = GlfTensor::new(n, d, values).unwrap();
        let a = Vector::new(vec![1.0, 0.0, 0.0]).unwrap();
        let m = glf_predict(&g, &a).unwrap();
        assert_eq!(m.values(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn predict_rejects_wrong_dimension() {
        let g = GlfTensor::zeros(2, 3).unwrap();
        let a = Vector::new(vec![1.0, 2.0]).unwrap();
        assert!(glf_predict(&g, &a).is_err());
    }
}
