//! Training objectives: squared-error example losses, neighbour-blended
//! parameter sharing, the neighbour-fitting penalty, and their exact
//! gradients.
//!
//! For a word w with parameters T, training tuples (args -> z), neighbour
//! list {(w_i, phi_i)} and blending weight alpha, the per-word objective is
//!
//! ```text
//!   mean_over_batch  0.5 * || blend(T).apply(args) - z ||^2     (data term)
//! + (beta / K) * sum_i phi_i * ||T - T_i||_F                    (fitting)
//! + lambda * ||T||_F^2                                          (dense only)
//! ```
//!
//! where `blend(T) = (1 - alpha) * T + (alpha / K) * sum_i phi_i * T_i`.
//! Low-rank parameters blend factor-wise and measure the fitting distance as
//! the sum of factor-wise Frobenius distances.
//!
//! [`gradients`] returns the exact analytic gradient of the *total* objective
//! (summed over words) with respect to every parameter tensor. Three flows
//! matter: the `(1 - alpha)`-scaled flow into the word itself, the
//! `(alpha * phi_i / K)`-scaled flow into each neighbour (this is what lets a
//! word with no tuples acquire a useful tensor), and the fitting-penalty
//! subgradient `(T - T_i) / ||T - T_i||_F`, defined as zero when the distance
//! falls below [`FT_SUBGRADIENT_EPS`] and applied per factor matrix in
//! low-rank form.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{NeighborGraph, WordId};
use crate::tensor::{DenseMatrix, DenseTensor3, LowRankMatrix, LowRankTensor3, Vector};

/// Distances below this threshold use the zero subgradient for the
/// fitting penalty.
pub const FT_SUBGRADIENT_EPS: f64 = 1e-12;

/// Default l2 weight for dense (full) parameter tensors.
pub const L2_LAMBDA_FULL: f64 = 0.1;
/// Default l2 weight for low-rank parameter tensors (none).
pub const L2_LAMBDA_LOW_RANK: f64 = 0.0;

/// How a word function is stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    Full,
    LowRank { rank: usize },
}

/// The example-loss shape. Only squared error is defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossForm {
    #[default]
    SquaredError,
}

/// Per-run objective settings.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveConfig {
    /// Neighbour-blending weight in [0, 1]. 0 disables sharing entirely.
    pub alpha: f64,
    /// Fitting-penalty weight, >= 0. 0 disables the penalty entirely.
    pub beta: f64,
    /// Neighbour count; also the blending divisor K.
    pub k: usize,
    /// l2 weight on the word's own stored tensor. Applied to dense
    /// representations only.
    pub l2_lambda: f64,
    pub representation: Representation,
    pub loss_form: LossForm,
    /// When set, divide blends and penalties by the actual neighbour-list
    /// length instead of the configured K.
    pub divide_by_actual_neighbors: bool,
    /// When set, evaluation composes with the blended mixture instead of the
    /// word's stored tensor (diagnostic).
    pub eval_with_ps_mixture: bool,
}

impl ObjectiveConfig {
    /// Standard config: l2 defaults to 0.1 for dense and 0 for low-rank.
    pub fn new(alpha: f64, beta: f64, k: usize, representation: Representation) -> Result<Self> {
        let l2_lambda = match representation {
            Representation::Full => L2_LAMBDA_FULL,
            Representation::LowRank { .. } => L2_LAMBDA_LOW_RANK,
        };
        let config = ObjectiveConfig {
            alpha,
            beta,
            k,
            l2_lambda,
            representation,
            loss_form: LossForm::SquaredError,
            divide_by_actual_neighbors: false,
            eval_with_ps_mixture: false,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::RejectedInput(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(Error::RejectedInput(format!(
                "beta must be finite and non-negative, got {}",
                self.beta
            )));
        }
        if self.k == 0 {
            return Err(Error::RejectedInput("k must be at least 1".into()));
        }
        if !self.l2_lambda.is_finite() || self.l2_lambda < 0.0 {
            return Err(Error::RejectedInput(format!(
                "l2_lambda must be finite and non-negative, got {}",
                self.l2_lambda
            )));
        }
        if let Representation::LowRank { rank } = self.representation {
            if rank == 0 {
                return Err(Error::RejectedInput("rank must be at least 1".into()));
            }
        }
        Ok(())
    }
}

/// Trainable parameters of one word, in any of the four storage forms.
#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    Matrix(DenseMatrix),
    LowRankMatrix(LowRankMatrix),
    Tensor3(DenseTensor3),
    LowRankTensor3(LowRankTensor3),
}

/// All word parameters of a trained model, keyed by word.
pub type ParamsStore = BTreeMap<WordId, Params>;

/// Gradients shaped exactly like the parameters they belong to.
pub type GradientSet = BTreeMap<WordId, Params>;

/// Argument vectors of one training example.
#[derive(Debug, Clone)]
pub enum ExampleArgs {
    /// One argument (attributive adjective applied to a noun).
    Unary(Vector),
    /// Subject and object (transitive verb).
    Binary(Vector, Vector),
}

/// One training example: argument vectors and the observed phrase vector.
#[derive(Debug, Clone)]
pub struct ResolvedExample {
    pub args: ExampleArgs,
    pub target: Vector,
}

impl Params {
    /// Number of argument vectors this kind of function takes.
    pub fn arity(&self) -> usize {
        match self {
            Params::Matrix(_) | Params::LowRankMatrix(_) => 1,
            Params::Tensor3(_) | Params::LowRankTensor3(_) => 2,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Params::Matrix(_) => "matrix",
            Params::LowRankMatrix(_) => "low-rank matrix",
            Params::Tensor3(_) => "third-order tensor",
            Params::LowRankTensor3(_) => "low-rank third-order tensor",
        }
    }

    /// Total number of stored scalars.
    pub fn param_len(&self) -> usize {
        self.components().iter().map(|c| c.len()).sum()
    }

    /// The stored scalar blocks in canonical order: the whole array for dense
    /// forms; U,V (or P,Q,R) factor matrices for low-rank forms.
    pub fn components(&self) -> Vec<&[f64]> {
        match self {
            Params::Matrix(m) => vec![m.values()],
            Params::LowRankMatrix(m) => vec![m.u_factors().values(), m.v_factors().values()],
            Params::Tensor3(t) => vec![t.values()],
            Params::LowRankTensor3(t) => vec![
                t.p_factors().values(),
                t.q_factors().values(),
                t.r_factors().values(),
            ],
        }
    }

    fn components_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Params::Matrix(m) => vec![m.values_mut()],
            Params::LowRankMatrix(m) => {
                let (u, v) = m.factors_mut();
                vec![u.values_mut(), v.values_mut()]
            }
            Params::Tensor3(t) => vec![t.values_mut()],
            Params::LowRankTensor3(t) => {
                let (p, q, r) = t.factors_mut();
                vec![p.values_mut(), q.values_mut(), r.values_mut()]
            }
        }
    }

    /// True when `other` has the same kind and identical shapes.
    pub fn same_shape(&self, other: &Params) -> bool {
        match (self, other) {
            (Params::Matrix(a), Params::Matrix(b)) => {
                a.rows() == b.rows() && a.cols() == b.cols()
            }
            (Params::LowRankMatrix(a), Params::LowRankMatrix(b)) => {
                a.rank() == b.rank() && a.n() == b.n()
            }
            (Params::Tensor3(a), Params::Tensor3(b)) => a.s() == b.s() && a.n() == b.n(),
            (Params::LowRankTensor3(a), Params::LowRankTensor3(b)) => {
                a.rank() == b.rank() && a.s() == b.s() && a.n() == b.n()
            }
            _ => false,
        }
    }

    fn require_same_shape(&self, other: &Params, context: &str) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::RejectedInput(format!(
                "{context}: incompatible parameter shapes ({} vs {})",
                self.kind_name(),
                other.kind_name()
            )));
        }
        Ok(())
    }

    /// Apply to example arguments. Arity must match the parameter kind.
    pub fn apply(&self, args: &ExampleArgs) -> Result<Vector> {
        match (self, args) {
            (Params::Matrix(m), ExampleArgs::Unary(n)) => m.matvec(n),
            (Params::LowRankMatrix(m), ExampleArgs::Unary(n)) => m.apply(n),
            (Params::Tensor3(t), ExampleArgs::Binary(s, o)) => t.bilinear_apply(s, o),
            (Params::LowRankTensor3(t), ExampleArgs::Binary(s, o)) => t.apply(s, o),
            _ => Err(Error::RejectedInput(format!(
                "a {} takes {} argument vector(s)",
                self.kind_name(),
                self.arity()
            ))),
        }
    }

    /// Length of the composed output vector.
    pub fn output_dim(&self) -> usize {
        match self {
            Params::Matrix(m) => m.rows(),
            Params::LowRankMatrix(m) => m.n(),
            Params::Tensor3(t) => t.s(),
            Params::LowRankTensor3(t) => t.s(),
        }
    }

    /// Row-major flattening of the (reconstructed, for low-rank forms) dense
    /// tensor.
    pub fn unfurl(&self) -> Vector {
        match self {
            Params::Matrix(m) => m.unfurl(),
            Params::LowRankMatrix(m) => m.reconstruct().unfurl(),
            Params::Tensor3(t) => t.unfurl(),
            Params::LowRankTensor3(t) => t.reconstruct().unfurl(),
        }
    }

    /// Same-shaped parameters with every entry zero.
    pub fn zero_like(&self) -> Params {
        let mut out = self.clone();
        for block in out.components_mut() {
            for v in block {
                *v = 0.0;
            }
        }
        out
    }

    /// Multiply every entry by `c`.
    pub fn scale(&mut self, c: f64) {
        for block in self.components_mut() {
            for v in block {
                *v *= c;
            }
        }
    }

    /// `self += c * other`. Shapes must match.
    pub fn add_scaled(&mut self, other: &Params, c: f64) -> Result<()> {
        self.require_same_shape(other, "add_scaled")?;
        for (mine, theirs) in self.components_mut().into_iter().zip(other.components()) {
            for (m, t) in mine.iter_mut().zip(theirs) {
                *m += c * t;
            }
        }
        Ok(())
    }

    /// Copy the stored scalars into one flat vector (component order).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_len());
        for block in self.components() {
            out.extend_from_slice(block);
        }
        out
    }

    /// `self += delta` where `delta` is a flat vector in component order.
    pub fn add_flat(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.param_len() {
            return Err(Error::DimensionMismatch {
                context: "flat parameter update".into(),
                expected: self.param_len(),
                actual: delta.len(),
            });
        }
        let mut offset = 0;
        for block in self.components_mut() {
            for v in block.iter_mut() {
                *v += delta[offset];
                offset += 1;
            }
        }
        Ok(())
    }

    /// Distance used by the fitting penalty: Frobenius distance for dense
    /// forms, sum of factor-wise Frobenius distances for low-rank forms.
    pub fn frobenius_distance(&self, other: &Params) -> Result<f64> {
        self.require_same_shape(other, "frobenius_distance")?;
        let mut total = 0.0;
        for (a, b) in self.components().iter().zip(other.components()) {
            let mut acc = 0.0;
            for (x, y) in a.iter().zip(b) {
                let d = x - y;
                acc += d * d;
            }
            total += acc.sqrt();
        }
        Ok(total)
    }

    /// Sum of squared stored entries (the dense l2 term).
    pub fn frobenius_norm_sq(&self) -> f64 {
        self.components()
            .iter()
            .map(|b| b.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// Largest absolute entry of the unfurled tensor (diagnostic).
    pub fn max_abs_entry(&self) -> f64 {
        self.unfurl()
            .values()
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.components()
            .iter()
            .all(|b| b.iter().all(|v| v.is_finite()))
    }
}

fn squared_error_half(y: &Vector, z: &Vector) -> Result<f64> {
    if y.len() != z.len() {
        return Err(Error::DimensionMismatch {
            context: "example target".into(),
            expected: y.len(),
            actual: z.len(),
        });
    }
    let mut acc = 0.0;
    for (a, b) in y.values().iter().zip(z.values()) {
        let d = a - b;
        acc += d * d;
    }
    Ok(0.5 * acc)
}

/// Squared-error loss of one adjective example: `0.5 * ||A n - z||^2`.
pub fn adj_example_loss(params: &Params, n: &Vector, z: &Vector) -> Result<f64> {
    let y = params.apply(&ExampleArgs::Unary(n.clone()))?;
    squared_error_half(&y, z)
}

/// Squared-error loss of one verb example: `0.5 * ||T(s, o) - z||^2`.
pub fn verb_example_loss(params: &Params, subj: &Vector, obj: &Vector, z: &Vector) -> Result<f64> {
    let y = params.apply(&ExampleArgs::Binary(subj.clone(), obj.clone()))?;
    squared_error_half(&y, z)
}

/// Squared-error loss of one resolved example through the given parameters.
pub fn example_loss(params: &Params, example: &ResolvedExample) -> Result<f64> {
    let y = params.apply(&example.args)?;
    squared_error_half(&y, &example.target)
}

/// The neighbour-blended (shared) parameters
/// `(1 - alpha) * T + (alpha / divisor) * sum_i phi_i * T_i`.
///
/// With `alpha == 0` this returns the target parameters unchanged, on the
/// identical code path, so downstream results are bit-for-bit equal to not
/// sharing at all. Low-rank parameters blend each factor matrix
/// independently.
pub fn ps_effective_params(
    target: &Params,
    neighbors: &[(&Params, f64)],
    alpha: f64,
    divisor: usize,
) -> Result<Params> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::RejectedInput(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    if divisor == 0 {
        return Err(Error::RejectedInput("blend divisor must be at least 1".into()));
    }
    if alpha == 0.0 {
        return Ok(target.clone());
    }
    let mut out = target.clone();
    out.scale(1.0 - alpha);
    for (neighbor, phi) in neighbors {
        out.add_scaled(neighbor, alpha * phi / divisor as f64)?;
    }
    Ok(out)
}

/// Example loss evaluated through the blended parameters.
pub fn ps_example_loss(
    target: &Params,
    neighbors: &[(&Params, f64)],
    alpha: f64,
    divisor: usize,
    example: &ResolvedExample,
) -> Result<f64> {
    let effective = ps_effective_params(target, neighbors, alpha, divisor)?;
    example_loss(&effective, example)
}

/// The neighbour-fitting penalty
/// `(beta / divisor) * sum_i phi_i * distance(T, T_i)` with the unsquared
/// (factor-wise, for low-rank) Frobenius distance.
///
/// `beta == 0` returns exactly 0.0 without touching the neighbours.
pub fn ft_penalty(
    target: &Params,
    neighbors: &[(&Params, f64)],
    beta: f64,
    divisor: usize,
) -> Result<f64> {
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::RejectedInput(format!(
            "beta must be finite and non-negative, got {beta}"
        )));
    }
    if divisor == 0 {
        return Err(Error::RejectedInput("penalty divisor must be at least 1".into()));
    }
    if beta == 0.0 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for (neighbor, phi) in neighbors {
        acc += phi * target.frobenius_distance(neighbor)?;
    }
    Ok(beta / divisor as f64 * acc)
}

/// The divisor shared by blending and the fitting penalty: the configured
/// neighbour count `k`, or (opt-in) the number of neighbours actually
/// present, floored at 1.
pub fn blend_divisor(config: &ObjectiveConfig, actual_neighbors: usize) -> usize {
    if config.divide_by_actual_neighbors {
        actual_neighbors.max(1)
    } else {
        config.k
    }
}

/// The full per-word objective: mean blended example loss over the batch,
/// plus the fitting penalty, plus `l2_lambda * ||T||_F^2` for dense forms.
///
/// An empty batch is allowed only when `beta > 0` (pure neighbour fitting);
/// with `beta == 0` there is no term left and the objective is degenerate.
pub fn combined_loss(
    target: &Params,
    batch: &[ResolvedExample],
    neighbors: &[(&Params, f64)],
    config: &ObjectiveConfig,
) -> Result<f64> {
    config.validate()?;
    if batch.is_empty() && config.beta == 0.0 {
        return Err(Error::DegenerateObjective);
    }
    let divisor = blend_divisor(config, neighbors.len());
    let mut total = 0.0;
    if !batch.is_empty() {
        let effective = ps_effective_params(target, neighbors, config.alpha, divisor)?;
        let mut acc = 0.0;
        for example in batch {
            acc += example_loss(&effective, example)?;
        }
        total += acc / batch.len() as f64;
    }
    total += ft_penalty(target, neighbors, config.beta, divisor)?;
    if config.l2_lambda > 0.0 && matches!(target, Params::Matrix(_) | Params::Tensor3(_)) {
        total += config.l2_lambda * target.frobenius_norm_sq();
    }
    Ok(total)
}

/// One word's view of the objective, resolved against the store and graph.
struct WordTerm<'a> {
    word: &'a WordId,
    params: &'a Params,
    batch: &'a [ResolvedExample],
    neighbors: Vec<(&'a WordId, &'a Params, f64)>,
    alpha: f64,
    /// Scales the fitting penalty and l2 term (1.0 in full-batch training;
    /// the chunk fraction in minibatch mode so per-epoch weights match).
    reg_scale: f64,
}

fn resolve_term<'a>(
    word: &'a WordId,
    batch: &'a [ResolvedExample],
    graph: &'a NeighborGraph,
    store: &'a ParamsStore,
    alpha: f64,
    reg_scale: f64,
) -> Result<WordTerm<'a>> {
    let params = store
        .get(word)
        .ok_or_else(|| Error::MissingWord(format!("{word} (parameter store)")))?;
    let neighbor_list = graph
        .neighbors(word)
        .ok_or_else(|| Error::MissingWord(format!("{word} (neighbour graph)")))?;
    let mut neighbors = Vec::with_capacity(neighbor_list.len());
    for (neighbor_id, phi) in neighbor_list {
        let neighbor_params = store
            .get(neighbor_id)
            .ok_or_else(|| Error::MissingWord(format!("{neighbor_id} (parameter store)")))?;
        neighbors.push((neighbor_id, neighbor_params, *phi));
    }
    Ok(WordTerm {
        word,
        params,
        batch,
        neighbors,
        alpha,
        reg_scale,
    })
}

/// Accumulate the gradient of the summed example losses with respect to the
/// *effective* (blended) parameters. Kind-specific outer products.
fn accumulate_effective_gradient(
    effective: &Params,
    batch: &[ResolvedExample],
    grad: &mut Params,
) -> Result<()> {
    for example in batch {
        let y = effective.apply(&example.args)?;
        if y.len() != example.target.len() {
            return Err(Error::DimensionMismatch {
                context: "example target".into(),
                expected: y.len(),
                actual: example.target.len(),
            });
        }
        let residual: Vec<f64> = y
            .values()
            .iter()
            .zip(example.target.values())
            .map(|(a, b)| a - b)
            .collect();
        match (effective, &mut *grad, &example.args) {
            (Params::Matrix(m), Params::Matrix(g), ExampleArgs::Unary(n)) => {
                let cols = m.cols();
                let gv = g.values_mut();
                for (i, ri) in residual.iter().enumerate() {
                    let base = i * cols;
                    for (j, nj) in n.values().iter().enumerate() {
                        gv[base + j] += ri * nj;
                    }
                }
            }
            (Params::Tensor3(t), Params::Tensor3(g), ExampleArgs::Binary(s, o)) => {
                let n = t.n();
                let gv = g.values_mut();
                for (k, rk) in residual.iter().enumerate() {
                    for (i, si) in s.values().iter().enumerate() {
                        let base = (k * n + i) * n;
                        let c = rk * si;
                        for (j, oj) in o.values().iter().enumerate() {
                            gv[base + j] += c * oj;
                        }
                    }
                }
            }
            (Params::LowRankMatrix(m), Params::LowRankMatrix(g), ExampleArgs::Unary(n)) => {
                // y = U^T t with t = V n; dL/dU[r,c] = t[r] res[c],
                // dL/dV[r,j] = (U res)[r] n[j].
                let hidden = m.v_factors().matvec_slice(n.values());
                let back = m.u_factors().matvec_slice(&residual);
                let width = m.n();
                let (gu, gv) = g.factors_mut();
                let guv = gu.values_mut();
                let gvv = gv.values_mut();
                for r in 0..m.rank() {
                    let base = r * width;
                    let tr = hidden[r];
                    let br = back[r];
                    for c in 0..width {
                        guv[base + c] += tr * residual[c];
                        gvv[base + c] += br * n.values()[c];
                    }
                }
            }
            (Params::LowRankTensor3(t), Params::LowRankTensor3(g), ExampleArgs::Binary(s, o)) => {
                // y = P^T (a . b) with a = Q s, b = R o.
                let a = t.q_factors().matvec_slice(s.values());
                let b = t.r_factors().matvec_slice(o.values());
                let back = t.p_factors().matvec_slice(&residual); // (P res)[r]
                let s_dim = t.s();
                let n_dim = t.n();
                let (gp, gq, gr) = g.factors_mut();
                let gpv = gp.values_mut();
                let gqv = gq.values_mut();
                let grv = gr.values_mut();
                for r in 0..t.rank() {
                    let cr = a[r] * b[r];
                    let base_p = r * s_dim;
                    for (k, rk) in residual.iter().enumerate() {
                        gpv[base_p + k] += cr * rk;
                    }
                    let base = r * n_dim;
                    let qb = back[r] * b[r];
                    let ra = back[r] * a[r];
                    for i in 0..n_dim {
                        gqv[base + i] += qb * s.values()[i];
                        grv[base + i] += ra * o.values()[i];
                    }
                }
            }
            _ => {
                return Err(Error::RejectedInput(format!(
                    "a {} takes {} argument vector(s)",
                    effective.kind_name(),
                    effective.arity()
                )))
            }
        }
    }
    Ok(())
}

/// Compute one word's contributions to the global gradient, as
/// `(receiving word, gradient piece)` pairs in a fixed order: the word
/// itself, then neighbours in rank order.
fn word_contributions(
    term: &WordTerm<'_>,
    config: &ObjectiveConfig,
) -> Result<Vec<(WordId, Params)>> {
    let mut out: Vec<(WordId, Params)> = Vec::new();
    let divisor = blend_divisor(config, term.neighbors.len());
    let neighbor_refs: Vec<(&Params, f64)> =
        term.neighbors.iter().map(|(_, p, phi)| (*p, *phi)).collect();

    if !term.batch.is_empty() {
        let effective = ps_effective_params(term.params, &neighbor_refs, term.alpha, divisor)?;
        let mut grad_eff = term.params.zero_like();
        accumulate_effective_gradient(&effective, term.batch, &mut grad_eff)?;
        grad_eff.scale(1.0 / term.batch.len() as f64);

        let own_scale = 1.0 - term.alpha;
        if own_scale != 0.0 {
            let mut own = grad_eff.clone();
            own.scale(own_scale);
            out.push((term.word.clone(), own));
        }
        if term.alpha != 0.0 {
            for (neighbor_id, _, phi) in &term.neighbors {
                let coef = term.alpha * phi / divisor as f64;
                if coef == 0.0 {
                    continue;
                }
                let mut piece = grad_eff.clone();
                piece.scale(coef);
                out.push(((*neighbor_id).clone(), piece));
            }
        }
    }

    if config.beta > 0.0 {
        for (neighbor_id, neighbor_params, phi) in &term.neighbors {
            term.params
                .require_same_shape(neighbor_params, "fitting penalty")?;
            let mut own_piece = term.params.zero_like();
            let mut neighbor_piece = term.params.zero_like();
            let mut any = false;
            {
                let t_blocks = term.params.components();
                let n_blocks = neighbor_params.components();
                let mut own_blocks = own_piece.components_mut();
                let mut nbr_blocks = neighbor_piece.components_mut();
                for c in 0..t_blocks.len() {
                    let mut dist_sq = 0.0;
                    for (x, y) in t_blocks[c].iter().zip(n_blocks[c]) {
                        let d = x - y;
                        dist_sq += d * d;
                    }
                    let dist = dist_sq.sqrt();
                    if dist < FT_SUBGRADIENT_EPS {
                        continue;
                    }
                    let coef = term.reg_scale * config.beta * phi / divisor as f64 / dist;
                    if coef == 0.0 {
                        continue;
                    }
                    any = true;
                    for (idx, (x, y)) in t_blocks[c].iter().zip(n_blocks[c]).enumerate() {
                        let g = coef * (x - y);
                        own_blocks[c][idx] += g;
                        nbr_blocks[c][idx] -= g;
                    }
                }
            }
            if any {
                out.push((term.word.clone(), own_piece));
                out.push(((*neighbor_id).clone(), neighbor_piece));
            }
        }
    }

    if config.l2_lambda > 0.0
        && matches!(term.params, Params::Matrix(_) | Params::Tensor3(_))
        && (!term.batch.is_empty() || config.beta > 0.0)
    {
        let mut decay = term.params.clone();
        decay.scale(2.0 * config.l2_lambda * term.reg_scale);
        out.push((term.word.clone(), decay));
    }

    Ok(out)
}

/// Exact analytic gradient of the total objective (the sum of every listed
/// word's combined loss) with respect to every parameter tensor in `store`.
///
/// `alphas` supplies the per-word blending weight (the variable alpha
/// schedule makes this word-dependent); words absent from the map fall back
/// to `config.alpha`. Words whose batch is empty while `beta == 0` have no
/// objective term and contribute nothing. The result holds an entry for
/// every word in the store — including words with zero tuples, which can
/// still receive neighbour flow.
pub fn gradients(
    batches: &BTreeMap<WordId, Vec<ResolvedExample>>,
    graph: &NeighborGraph,
    store: &ParamsStore,
    config: &ObjectiveConfig,
    alphas: &BTreeMap<WordId, f64>,
) -> Result<GradientSet> {
    config.validate()?;
    let participants: Vec<Participant<'_>> = batches
        .iter()
        .filter(|(_, batch)| !(batch.is_empty() && config.beta == 0.0))
        .map(|(word, batch)| Participant {
            word,
            batch,
            alpha: alphas.get(word).copied().unwrap_or(config.alpha),
            reg_scale: 1.0,
        })
        .collect();
    step_gradients(&participants, graph, store, config, None)
}

/// One word's participation in a synchronous gradient step.
pub(crate) struct Participant<'a> {
    pub word: &'a WordId,
    pub batch: &'a [ResolvedExample],
    pub alpha: f64,
    /// Scale on the word's fitting penalty and l2 term for this step.
    pub reg_scale: f64,
}

/// Gradient of one synchronous step over the given participants.
///
/// Contributions are computed per participant (in parallel when a pool is
/// given) and merged in participant order, so the result is bit-identical at
/// every thread count. The caller is responsible for listing participants in
/// a deterministic order (sorted by word).
pub(crate) fn step_gradients(
    participants: &[Participant<'_>],
    graph: &NeighborGraph,
    store: &ParamsStore,
    config: &ObjectiveConfig,
    pool: Option<&rayon::ThreadPool>,
) -> Result<GradientSet> {
    let terms: Vec<WordTerm<'_>> = participants
        .iter()
        .map(|p| resolve_term(p.word, p.batch, graph, store, p.alpha, p.reg_scale))
        .collect::<Result<_>>()?;

    let contributions: Vec<Vec<(WordId, Params)>> = match pool {
        Some(pool) => pool.install(|| {
            use rayon::prelude::*;
            terms
                .par_iter()
                .map(|term| word_contributions(term, config))
                .collect::<Result<_>>()
        })?,
        None => terms
            .iter()
            .map(|term| word_contributions(term, config))
            .collect::<Result<_>>()?,
    };

    let mut grads: GradientSet = store
        .iter()
        .map(|(word, params)| (word.clone(), params.zero_like()))
        .collect();
    for pieces in contributions {
        for (receiver, piece) in pieces {
            let slot = grads
                .get_mut(&receiver)
                .ok_or_else(|| Error::MissingWord(format!("{receiver} (parameter store)")))?;
            slot.add_scaled(&piece, 1.0)?;
        }
    }
    Ok(grads)
}

/// Total objective value matching [`gradients`]: the sum of combined losses
/// over all non-degenerate word terms.
pub fn total_loss(
    batches: &BTreeMap<WordId, Vec<ResolvedExample>>,
    graph: &NeighborGraph,
    store: &ParamsStore,
    config: &ObjectiveConfig,
    alphas: &BTreeMap<WordId, f64>,
) -> Result<f64> {
    config.validate()?;
    let mut total = 0.0;
    for (word, batch) in batches {
        if batch.is_empty() && config.beta == 0.0 {
            continue;
        }
        let alpha = alphas.get(word).copied().unwrap_or(config.alpha);
        total += word_combined_loss(word, batch, graph, store, alpha, config)?;
    }
    Ok(total)
}

/// Combined loss of one word's objective term, with an explicit per-word
/// alpha (the variable schedule makes alpha word-dependent).
pub(crate) fn word_combined_loss(
    word: &WordId,
    batch: &[ResolvedExample],
    graph: &NeighborGraph,
    store: &ParamsStore,
    alpha: f64,
    config: &ObjectiveConfig,
) -> Result<f64> {
    let term = resolve_term(word, batch, graph, store, alpha, 1.0)?;
    let neighbor_refs: Vec<(&Params, f64)> =
        term.neighbors.iter().map(|(_, p, phi)| (*p, *phi)).collect();
    let mut word_config = *config;
    word_config.alpha = alpha;
    combined_loss(term.params, batch, &neighbor_refs, &word_config)
}

/// Mean blended example loss over a held-out slice. No penalty or decay
/// terms: this is the quantity validation-based stopping watches.
pub(crate) fn word_validation_loss(
    word: &WordId,
    examples: &[ResolvedExample],
    graph: &NeighborGraph,
    store: &ParamsStore,
    alpha: f64,
    config: &ObjectiveConfig,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::RejectedInput(
            "validation loss requires at least one example".into(),
        ));
    }
    let term = resolve_term(word, examples, graph, store, alpha, 1.0)?;
    let neighbor_refs: Vec<(&Params, f64)> =
        term.neighbors.iter().map(|(_, p, phi)| (*p, *phi)).collect();
    let divisor = blend_divisor(config, neighbor_refs.len());
    let effective = ps_effective_params(term.params, &neighbor_refs, alpha, divisor)?;
    let mut total = 0.0;
    for example in examples {
        total += example_loss(&effective, example)?;
    }
    Ok(total / examples.len() as f64)
}

/// Materialize a store where every word's tensor is replaced by its blended
/// mixture (diagnostic evaluation mode).
pub fn ps_mixture_store(
    store: &ParamsStore,
    graph: &NeighborGraph,
    alpha: f64,
    config: &ObjectiveConfig,
) -> Result<ParamsStore> {
    let mut out = ParamsStore::new();
    for (word, params) in store {
        let neighbor_list = graph
            .neighbors(word)
            .ok_or_else(|| Error::MissingWord(format!("{word} (neighbour graph)")))?;
        let mut neighbor_refs = Vec::with_capacity(neighbor_list.len());
        for (neighbor_id, phi) in neighbor_list {
            let neighbor_params = store
                .get(neighbor_id)
                .ok_or_else(|| Error::MissingWord(format!("{neighbor_id} (parameter store)")))?;
            neighbor_refs.push((neighbor_params, *phi));
        }
        let divisor = blend_divisor(config, neighbor_refs.len());
        out.insert(
            word.clone(),
            ps_effective_params(params, &neighbor_refs, alpha, divisor)?,
        );
    }
    Ok(out)
}
