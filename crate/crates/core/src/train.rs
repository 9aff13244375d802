//! Collaborative training of word tensors.
//!
//! Every word in the vocabulary owns a parameter tensor. Words with
//! training tuples fit them against observed phrase vectors; the blending
//! weight alpha mixes neighbour tensors into each prediction and the
//! fitting weight beta pulls tensors toward their neighbours, so gradient
//! flows between words and even tuple-less words end up with usable
//! tensors. Optimization is plain ADADELTA with per-word early stopping.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::graph::{EmbeddingTable, NeighborGraph, Pos, WordId};
use crate::objective::{
    step_gradients, word_combined_loss, word_validation_loss, ExampleArgs, GradientSet,
    ObjectiveConfig, ParamsStore, Participant, Representation, ResolvedExample,
};
use crate::objective::Params;
use crate::rng::SeededRng;
use crate::tensor::{DenseMatrix, DenseTensor3, LowRankMatrix, LowRankTensor3};

/// Default cap on training epochs.
pub const MAX_ITERATIONS: usize = 200;
/// Fraction of a verb's tuples held out for validation-based stopping.
pub const VALIDATION_FRACTION: f64 = 0.1;
/// Minimum tuple count before a validation slice is carved out.
pub const VALIDATION_MIN_POINTS: usize = 20;
/// Consecutive bad epochs tolerated before a stop triggers.
pub const PATIENCE: usize = 5;
/// Relative per-epoch improvement below this counts as stagnation.
pub const STAGNATION_TOLERANCE: f64 = 1e-4;
/// ADADELTA running-average decay rate.
pub const ADADELTA_RHO: f64 = 0.95;
/// ADADELTA conditioning constant.
pub const ADADELTA_EPSILON: f64 = 1e-6;
/// Ceiling of the data-dependent blending-weight schedule.
pub const VAR_ALPHA_MAX: f64 = 0.9;
/// Tuple count at which the data-dependent schedule saturates.
pub const VAR_M_FULL: usize = 500;
/// Blending weights examined in sweeps.
pub const ALPHA_GRID: [f64; 5] = [0.0, 0.1, 0.5, 0.9, 1.0];
/// Fitting-penalty weights examined in sweeps.
pub const BETA_GRID: [f64; 4] = [0.0, 0.01, 0.05, 0.1];

/// Per-parameter ADADELTA accumulators.
///
/// The update needs no learning rate; it rescales each gradient coordinate
/// by the ratio of two running averages:
///
/// ```text
/// E[g^2]  <- rho * E[g^2]  + (1 - rho) * g^2
/// dx       = -sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
/// E[dx^2] <- rho * E[dx^2] + (1 - rho) * dx^2
/// ```
#[derive(Debug, Clone)]
pub struct AdadeltaState {
    rho: f64,
    eps: f64,
    acc_grad_sq: Vec<f64>,
    acc_update_sq: Vec<f64>,
}

impl AdadeltaState {
    pub fn new(rho: f64, eps: f64, len: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::RejectedInput(format!(
                "adadelta rho must lie in [0, 1), got {rho}"
            )));
        }
        if !eps.is_finite() || eps <= 0.0 {
            return Err(Error::RejectedInput(format!(
                "adadelta epsilon must be positive and finite, got {eps}"
            )));
        }
        if len == 0 {
            return Err(Error::RejectedInput(
                "adadelta state needs at least one coordinate".into(),
            ));
        }
        Ok(AdadeltaState {
            rho,
            eps,
            acc_grad_sq: vec![0.0; len],
            acc_update_sq: vec![0.0; len],
        })
    }

    pub fn len(&self) -> usize {
        self.acc_grad_sq.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects zero-length states
    }

    /// Advance the accumulators with one gradient and return the additive
    /// parameter update (already negated).
    pub fn step(&mut self, grad: &[f64]) -> Result<Vec<f64>> {
        if grad.len() != self.acc_grad_sq.len() {
            return Err(Error::DimensionMismatch {
                context: "adadelta gradient".into(),
                expected: self.acc_grad_sq.len(),
                actual: grad.len(),
            });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NumericalFailure(format!(
                "non-finite gradient entry at coordinate {i}"
            )));
        }
        let mut update = vec![0.0; grad.len()];
        for (i, &g) in grad.iter().enumerate() {
            self.acc_grad_sq[i] = self.rho * self.acc_grad_sq[i] + (1.0 - self.rho) * g * g;
            let dx = -((self.acc_update_sq[i] + self.eps).sqrt()
                / (self.acc_grad_sq[i] + self.eps).sqrt())
                * g;
            self.acc_update_sq[i] = self.rho * self.acc_update_sq[i] + (1.0 - self.rho) * dx * dx;
            update[i] = dx;
        }
        Ok(update)
    }
}

/// How the blending weight alpha is assigned per word.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaSchedule {
    /// Every word uses the same weight.
    Fixed(f64),
    /// Weight grows linearly with the word's tuple count and saturates:
    /// `alpha_max * min(1, m / m_full)`. Words with plenty of data lean on
    /// their neighbours; words with little data mostly keep their own term.
    Var { alpha_max: f64, m_full: usize },
}

impl AlphaSchedule {
    pub fn alpha_for(&self, tuple_count: usize) -> f64 {
        match *self {
            AlphaSchedule::Fixed(alpha) => alpha,
            AlphaSchedule::Var { alpha_max, m_full } => {
                alpha_schedule_var(tuple_count, alpha_max, m_full)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            AlphaSchedule::Fixed(alpha) => {
                if !(0.0..=1.0).contains(&alpha) {
                    return Err(Error::RejectedInput(format!(
                        "alpha must lie in [0, 1], got {alpha}"
                    )));
                }
            }
            AlphaSchedule::Var { alpha_max, m_full } => {
                if !(0.0..=1.0).contains(&alpha_max) {
                    return Err(Error::RejectedInput(format!(
                        "alpha ceiling must lie in [0, 1], got {alpha_max}"
                    )));
                }
                if m_full == 0 {
                    return Err(Error::RejectedInput(
                        "alpha schedule saturation count must be positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// The data-dependent blending weight: grows linearly with the tuple count
/// and saturates at `alpha_max` once a word has `m_full` tuples.
pub fn alpha_schedule_var(tuple_count: usize, alpha_max: f64, m_full: usize) -> f64 {
    if m_full == 0 {
        return alpha_max;
    }
    alpha_max * (tuple_count as f64 / m_full as f64).min(1.0)
}

/// Named training regimes covering the useful corners of (alpha, beta):
/// heavy sharing with a light pull (`fix1`), pull only (`fix2`), light
/// sharing with a strong pull (`fix3`), and the data-dependent schedule
/// (`var`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Fix1,
    Fix2,
    Fix3,
    Var,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Preset> {
        match name {
            "fix1" => Ok(Preset::Fix1),
            "fix2" => Ok(Preset::Fix2),
            "fix3" => Ok(Preset::Fix3),
            "var" => Ok(Preset::Var),
            other => Err(Error::RejectedInput(format!(
                "unknown preset '{other}' (expected fix1, fix2, fix3, or var)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Fix1 => "fix1",
            Preset::Fix2 => "fix2",
            Preset::Fix3 => "fix3",
            Preset::Var => "var",
        }
    }

    pub fn alpha_schedule(&self) -> AlphaSchedule {
        match self {
            Preset::Fix1 => AlphaSchedule::Fixed(0.9),
            Preset::Fix2 => AlphaSchedule::Fixed(0.0),
            Preset::Fix3 => AlphaSchedule::Fixed(0.1),
            Preset::Var => AlphaSchedule::Var {
                alpha_max: VAR_ALPHA_MAX,
                m_full: VAR_M_FULL,
            },
        }
    }

    pub fn beta(&self) -> f64 {
        match self {
            Preset::Fix1 | Preset::Var => 0.01,
            Preset::Fix2 | Preset::Fix3 => 0.1,
        }
    }
}

/// Gradient-step granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    /// One synchronous step per epoch over every word's full batch.
    FullBatch,
    /// Several steps per epoch over shuffled chunks of at most the given
    /// size. Penalty and decay terms are scaled by each chunk's share of
    /// the batch so an epoch weighs them like a full-batch epoch.
    Minibatch(usize),
}

/// Everything [`fit`] needs besides the data.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub objective: ObjectiveConfig,
    pub alpha_schedule: AlphaSchedule,
    pub max_iterations: usize,
    pub batch_mode: BatchMode,
    pub validation_fraction: f64,
    pub validation_min_points: usize,
    pub patience: usize,
    pub stagnation_tolerance: f64,
    pub adadelta_rho: f64,
    pub adadelta_eps: f64,
    pub seed: u64,
    /// Worker threads for per-word gradient terms. Results are bit-identical
    /// at every thread count.
    pub threads: usize,
}

impl TrainConfig {
    /// Defaults around the given objective; the fixed alpha schedule reuses
    /// the objective's blending weight.
    pub fn new(objective: ObjectiveConfig, seed: u64) -> Self {
        TrainConfig {
            objective,
            alpha_schedule: AlphaSchedule::Fixed(objective.alpha),
            max_iterations: MAX_ITERATIONS,
            batch_mode: BatchMode::FullBatch,
            validation_fraction: VALIDATION_FRACTION,
            validation_min_points: VALIDATION_MIN_POINTS,
            patience: PATIENCE,
            stagnation_tolerance: STAGNATION_TOLERANCE,
            adadelta_rho: ADADELTA_RHO,
            adadelta_eps: ADADELTA_EPSILON,
            seed,
            threads: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        self.alpha_schedule.validate()?;
        if self.max_iterations == 0 {
            return Err(Error::RejectedInput("max_iterations must be positive".into()));
        }
        if let BatchMode::Minibatch(size) = self.batch_mode {
            if size == 0 {
                return Err(Error::RejectedInput("minibatch size must be positive".into()));
            }
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::RejectedInput(format!(
                "validation fraction must lie in [0, 1), got {}",
                self.validation_fraction
            )));
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
        if self.threads == 0 {
            return Err(Error::RejectedInput("threads must be at least 1".into()));
        }
        Ok(())
    }
}

/// One (head word, argument words, observed phrase) training row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingTuple {
    pub head: WordId,
    pub args: TupleArgs,
    /// Key of the observed phrase vector in the holistic table.
    pub holistic_key: String,
    /// Corpus occurrence count of the phrase.
    pub occurrence_count: u64,
}

/// Argument words of a training tuple.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum TupleArgs {
    /// The modified noun of an adjective-noun phrase.
    Noun(String),
    /// Subject and object of a subject-verb-object phrase.
    SubjectObject(String, String),
}

/// Initial parameters for one word, drawn uniformly from `(-s, s)` with
/// per-shape scales: `1/sqrt(n)` for square matrices and argument-side
/// factors, `1/sqrt(rank)` for output-side factors, and `1/n` for dense
/// third-order tensors (whose contractions sum `n^2` products).
///
/// The draw is seeded by `(seed, word)` alone, so a word's starting point
/// does not depend on vocabulary order or on what else is trained.
pub fn init_params(
    word: &WordId,
    representation: Representation,
    n: usize,
    out_dim: usize,
    seed: u64,
) -> Result<Params> {
    if n == 0 || out_dim == 0 {
        return Err(Error::RejectedInput(
            "parameter dimensions must be positive".into(),
        ));
    }
    if word.pos() == Pos::Adjective && out_dim != n {
        return Err(Error::DimensionMismatch {
            context: "matrix output dimension".into(),
            expected: n,
            actual: out_dim,
        });
    }
    let mut rng = SeededRng::derive(seed, &["init", word.surface(), word.pos().as_str()]);
    let fill = |len: usize, scale: f64, rng: &mut SeededRng| -> Vec<f64> {
        (0..len).map(|_| rng.uniform(-scale, scale)).collect()
    };
    match (word.pos(), representation) {
        (Pos::Adjective, Representation::Full) => {
            let scale = 1.0 / (n as f64).sqrt();
            Ok(Params::Matrix(DenseMatrix::new(
                n,
                n,
                fill(n * n, scale, &mut rng),
            )?))
        }
        (Pos::Adjective, Representation::LowRank { rank }) => {
            let u = DenseMatrix::new(
                rank,
                n,
                fill(rank * n, 1.0 / (rank.max(1) as f64).sqrt(), &mut rng),
            )?;
            let v = DenseMatrix::new(rank, n, fill(rank * n, 1.0 / (n as f64).sqrt(), &mut rng))?;
            Ok(Params::LowRankMatrix(LowRankMatrix::new(u, v)?))
        }
        (Pos::Verb, Representation::Full) => {
            let scale = 1.0 / n as f64;
            Ok(Params::Tensor3(DenseTensor3::new(
                out_dim,
                n,
                fill(out_dim * n * n, scale, &mut rng),
            )?))
        }
        (Pos::Verb, Representation::LowRank { rank }) => {
            let p = DenseMatrix::new(
                rank,
                out_dim,
                fill(rank * out_dim, 1.0 / (rank.max(1) as f64).sqrt(), &mut rng),
            )?;
            let q = DenseMatrix::new(rank, n, fill(rank * n, 1.0 / (n as f64).sqrt(), &mut rng))?;
            let r = DenseMatrix::new(rank, n, fill(rank * n, 1.0 / (n as f64).sqrt(), &mut rng))?;
            Ok(Params::LowRankTensor3(LowRankTensor3::new(p, q, r)?))
        }
        (Pos::Noun, _) => Err(Error::RejectedInput(
            "nouns are represented by their embedding vectors, not parameter tensors".into(),
        )),
    }
}

/// Split items into (training, validation) parts. A validation slice is
/// carved out only when there are at least `min_points` items; it holds
/// `ceil(fraction * len)` of them (but never all), sampled without
/// replacement in canonical order.
pub fn split_validation<T: Clone>(
    items: &[T],
    fraction: f64,
    min_points: usize,
    rng: &mut SeededRng,
) -> Result<(Vec<T>, Vec<T>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::RejectedInput(format!(
            "validation fraction must lie in [0, 1), got {fraction}"
        )));
    }
    if fraction == 0.0 || items.len() < min_points {
        return Ok((items.to_vec(), Vec::new()));
    }
    let len = items.len();
    let want = (fraction * len as f64).ceil() as usize;
    let val_count = want.min(len - 1);
    if val_count == 0 {
        return Ok((items.to_vec(), Vec::new()));
    }
    let chosen: BTreeSet<usize> = rng.sample_indices(len, val_count).into_iter().collect();
    let mut train = Vec::with_capacity(len - val_count);
    let mut val = Vec::with_capacity(val_count);
    for (i, item) in items.iter().enumerate() {
        if chosen.contains(&i) {
            val.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    Ok((train, val))
}

/// Why a word's training ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Ran the full epoch budget.
    MaxIters,
    /// Relative improvement stayed below tolerance for `patience` epochs.
    Stagnation,
    /// Training loss rose for `patience` consecutive epochs.
    ErrorIncrease,
    /// Held-out loss rose for `patience` consecutive epochs.
    ValidationIncrease,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::MaxIters => "max-iters",
            StopReason::Stagnation => "stagnation",
            StopReason::ErrorIncrease => "error-increase",
            StopReason::ValidationIncrease => "validation-increase",
        }
    }
}

/// Per-word training outcome.
#[derive(Debug, Clone)]
pub struct TrainRecord {
    /// Combined loss after the last epoch; absent for words that had no
    /// objective term of their own (no tuples and beta = 0).
    pub final_train_loss: Option<f64>,
    /// Mean held-out loss after the last epoch (verbs with a validation
    /// slice only).
    pub final_val_loss: Option<f64>,
    /// Epochs the word's parameters were live for.
    pub iterations: usize,
    pub stop_reason: StopReason,
    /// Combined loss per epoch, starting with the pre-training value.
    pub train_loss_history: Vec<f64>,
}

/// Training outcomes for every word in a run.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub records: BTreeMap<WordId, TrainRecord>,
}

impl TrainReport {
    /// One line per word:
    /// `word <TAB> train_loss <TAB> val_loss <TAB> iterations <TAB> reason`,
    /// with `-` for absent losses.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (word, record) in &self.records {
            let train = record
                .final_train_loss
                .map(|v| format!("{v:.9e}"))
                .unwrap_or_else(|| "-".into());
            let val = record
                .final_val_loss
                .map(|v| format!("{v:.9e}"))
                .unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                word,
                train,
                val,
                record.iterations,
                record.stop_reason.as_str()
            ));
        }
        out
    }
}

struct WordState {
    is_data: bool,
    has_term: bool,
    alpha: f64,
    stopped: Option<StopReason>,
    stopped_at: usize,
    prev_train: Option<f64>,
    prev_val: Option<f64>,
    stagnant: usize,
    rising: usize,
    val_rising: usize,
    last_val: Option<f64>,
    history: Vec<f64>,
    adadelta: AdadeltaState,
}

/// Train tensors for every vocabulary word.
///
/// All words share one synchronous clock: each epoch takes the gradient of
/// the whole objective (every live word's term) at the current parameters
/// and applies one ADADELTA update per word. Stopping is per word; a
/// stopped word's tensor is frozen but stays readable as a neighbour.
/// Words without tuples are exempt from stopping — with sharing or fitting
/// active they keep absorbing neighbour flow for the whole budget, which is
/// what makes zero-shot tensors possible.
///
/// Determinism: given equal inputs and config (including `seed`, and at any
/// `threads` count) the returned store is bit-for-bit identical.
pub fn fit(
    vocab: &[WordId],
    tuples_by_word: &BTreeMap<WordId, Vec<TrainingTuple>>,
    graph: &NeighborGraph,
    arg_vectors: &EmbeddingTable,
    holistic_vectors: &EmbeddingTable,
    config: &TrainConfig,
) -> Result<(ParamsStore, TrainReport)> {
    config.validate()?;
    if vocab.is_empty() {
        return Err(Error::RejectedInput("training vocabulary is empty".into()));
    }
    let words: BTreeSet<WordId> = vocab.iter().cloned().collect();
    let pos = words.iter().next().expect("non-empty vocabulary").pos();
    if words.iter().any(|w| w.pos() != pos) {
        return Err(Error::RejectedInput(
            "training vocabulary mixes word categories; train each separately".into(),
        ));
    }
    if pos == Pos::Noun {
        return Err(Error::RejectedInput(
            "nouns are represented by their embedding vectors, not parameter tensors".into(),
        ));
    }
    for word in tuples_by_word.keys() {
        if !words.contains(word) {
            return Err(Error::RejectedInput(format!(
                "tuples were given for '{word}', which is not in the training vocabulary"
            )));
        }
    }
    let n = arg_vectors.dim();
    let out_dim = match pos {
        Pos::Adjective => {
            if holistic_vectors.dim() != n {
                return Err(Error::DimensionMismatch {
                    context: "phrase vectors for matrix training".into(),
                    expected: n,
                    actual: holistic_vectors.dim(),
                });
            }
            n
        }
        Pos::Verb => holistic_vectors.dim(),
        Pos::Noun => unreachable!("rejected above"),
    };

    // Resolve every tuple into argument and target vectors up front.
    let no_tuples: Vec<TrainingTuple> = Vec::new();
    let mut train_data: BTreeMap<WordId, Vec<ResolvedExample>> = BTreeMap::new();
    let mut val_data: BTreeMap<WordId, Vec<ResolvedExample>> = BTreeMap::new();
    let mut alphas: BTreeMap<WordId, f64> = BTreeMap::new();
    for word in &words {
        let tuples = tuples_by_word.get(word).unwrap_or(&no_tuples);
        let mut resolved = Vec::with_capacity(tuples.len());
        for tuple in tuples {
            if tuple.head != *word {
                return Err(Error::RejectedInput(format!(
                    "tuple listed under '{word}' names head '{}'",
                    tuple.head
                )));
            }
            let args = match (&tuple.args, pos) {
                (TupleArgs::Noun(noun), Pos::Adjective) => {
                    ExampleArgs::Unary(arg_vectors.require(noun)?.clone())
                }
                (TupleArgs::SubjectObject(subj, obj), Pos::Verb) => ExampleArgs::Binary(
                    arg_vectors.require(subj)?.clone(),
                    arg_vectors.require(obj)?.clone(),
                ),
                _ => {
                    return Err(Error::RejectedInput(format!(
                        "tuple arity for '{word}' does not match its word category"
                    )))
                }
            };
            let target = holistic_vectors.require(&tuple.holistic_key)?.clone();
            if target.len() != out_dim {
                return Err(Error::DimensionMismatch {
                    context: format!("phrase vector '{}'", tuple.holistic_key),
                    expected: out_dim,
                    actual: target.len(),
                });
            }
            resolved.push(ResolvedExample { args, target });
        }
        alphas.insert(word.clone(), config.alpha_schedule.alpha_for(resolved.len()));
        let (train, val) = if pos == Pos::Verb {
            let mut rng = SeededRng::derive(
                config.seed,
                &["val-split", word.surface(), word.pos().as_str()],
            );
            split_validation(
                &resolved,
                config.validation_fraction,
                config.validation_min_points,
                &mut rng,
            )?
        } else {
            (resolved, Vec::new())
        };
        train_data.insert(word.clone(), train);
        val_data.insert(word.clone(), val);
    }

    let mut store = ParamsStore::new();
    let mut states: BTreeMap<WordId, WordState> = BTreeMap::new();
    for word in &words {
        let params = init_params(word, config.objective.representation, n, out_dim, config.seed)?;
        let adadelta =
            AdadeltaState::new(config.adadelta_rho, config.adadelta_eps, params.param_len())?;
        let is_data = !train_data[word].is_empty();
        states.insert(
            word.clone(),
            WordState {
                is_data,
                has_term: is_data || config.objective.beta > 0.0,
                alpha: alphas[word],
                stopped: None,
                stopped_at: 0,
                prev_train: None,
                prev_val: None,
                stagnant: 0,
                rising: 0,
                val_rising: 0,
                last_val: None,
                history: Vec::new(),
                adadelta,
            },
        );
        store.insert(word.clone(), params);
    }

    let pool = if config.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .map_err(|e| Error::RejectedInput(format!("could not build thread pool: {e}")))?,
        )
    } else {
        None
    };
    let pool_ref = pool.as_ref();

    // Pre-training losses anchor the stopping comparisons.
    let mut initial: Vec<(WordId, f64, Option<f64>)> = Vec::new();
    for (word, state) in &states {
        if !state.has_term {
            continue;
        }
        let loss = word_combined_loss(
            word,
            &train_data[word],
            graph,
            &store,
            state.alpha,
            &config.objective,
        )?;
        if !loss.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "training loss for '{word}' is not finite before the first iteration"
            )));
        }
        let val = if val_data[word].is_empty() {
            None
        } else {
            Some(word_validation_loss(
                word,
                &val_data[word],
                graph,
                &store,
                state.alpha,
                &config.objective,
            )?)
        };
        initial.push((word.clone(), loss, val));
    }
    for (word, loss, val) in initial {
        let state = states.get_mut(&word).expect("state exists for every word");
        state.history.push(loss);
        state.prev_train = Some(loss);
        state.prev_val = val;
        state.last_val = val;
    }

    let mut epochs_run = 0;
    for epoch in 1..=config.max_iterations {
        let active: Vec<WordId> = states
            .iter()
            .filter(|(_, s)| s.stopped.is_none() && s.has_term)
            .map(|(w, _)| w.clone())
            .collect();
        if active.is_empty() {
            break;
        }
        epochs_run = epoch;

        match config.batch_mode {
            BatchMode::FullBatch => {
                let participants: Vec<Participant<'_>> = active
                    .iter()
                    .map(|word| Participant {
                        word,
                        batch: train_data[word].as_slice(),
                        alpha: states[word].alpha,
                        reg_scale: 1.0,
                    })
                    .collect();
                let grads =
                    step_gradients(&participants, graph, &store, &config.objective, pool_ref)?;
                apply_updates(&mut store, &mut states, &grads, epoch)?;
            }
            BatchMode::Minibatch(size) => {
                // Chunk each word's shuffled batch; zero-tuple terms join
                // step 0 only. The shuffle is seeded by (word, epoch), so
                // it is independent of thread count and of other words.
                let mut chunks: BTreeMap<&WordId, Vec<Vec<ResolvedExample>>> = BTreeMap::new();
                let mut steps = 1;
                for word in &active {
                    let examples = &train_data[word];
                    if examples.is_empty() {
                        continue;
                    }
                    let mut order: Vec<usize> = (0..examples.len()).collect();
                    let epoch_tag = epoch.to_string();
                    let mut rng = SeededRng::derive(
                        config.seed,
                        &["minibatch", word.surface(), word.pos().as_str(), &epoch_tag],
                    );
                    rng.shuffle(&mut order);
                    let word_chunks: Vec<Vec<ResolvedExample>> = order
                        .chunks(size)
                        .map(|chunk| chunk.iter().map(|&i| examples[i].clone()).collect())
                        .collect();
                    steps = steps.max(word_chunks.len());
                    chunks.insert(word, word_chunks);
                }
                for step in 0..steps {
                    let mut participants: Vec<Participant<'_>> = Vec::new();
                    for word in &active {
                        let m = train_data[word].len();
                        if m == 0 {
                            if step == 0 {
                                participants.push(Participant {
                                    word,
                                    batch: &[],
                                    alpha: states[word].alpha,
                                    reg_scale: 1.0,
                                });
                            }
                            continue;
                        }
                        if let Some(chunk) = chunks.get(word).and_then(|c| c.get(step)) {
                            participants.push(Participant {
                                word,
                                batch: chunk.as_slice(),
                                alpha: states[word].alpha,
                                reg_scale: chunk.len() as f64 / m as f64,
                            });
                        }
                    }
                    if participants.is_empty() {
                        continue;
                    }
                    let grads =
                        step_gradients(&participants, graph, &store, &config.objective, pool_ref)?;
                    apply_updates(&mut store, &mut states, &grads, epoch)?;
                }
            }
        }

        // Epoch-end bookkeeping: full-batch losses, then stopping checks.
        let mut outcomes: Vec<(WordId, f64, Option<f64>)> = Vec::new();
        for word in &active {
            let state = &states[word];
            let loss = word_combined_loss(
                word,
                &train_data[word],
                graph,
                &store,
                state.alpha,
                &config.objective,
            )?;
            if !loss.is_finite() {
                return Err(Error::NumericalFailure(format!(
                    "training loss for '{word}' became non-finite at iteration {epoch}"
                )));
            }
            let val = if val_data[word].is_empty() {
                None
            } else {
                let v = word_validation_loss(
                    word,
                    &val_data[word],
                    graph,
                    &store,
                    state.alpha,
                    &config.objective,
                )?;
                if !v.is_finite() {
                    return Err(Error::NumericalFailure(format!(
                        "validation loss for '{word}' became non-finite at iteration {epoch}"
                    )));
                }
                Some(v)
            };
            outcomes.push((word.clone(), loss, val));
        }
        for (word, loss, val) in outcomes {
            let state = states.get_mut(&word).expect("state exists for every word");
            state.history.push(loss);
            if state.is_data {
                let prev = state.prev_train.expect("initial loss was recorded");
                if loss > prev {
                    state.rising += 1;
                } else {
                    state.rising = 0;
                }
                if let (Some(prev_val), Some(cur_val)) = (state.prev_val, val) {
                    if cur_val > prev_val {
                        state.val_rising += 1;
                    } else {
                        state.val_rising = 0;
                    }
                }
                let relative_gain = if prev > 0.0 { (prev - loss) / prev } else { 0.0 };
                if relative_gain < config.stagnation_tolerance {
                    state.stagnant += 1;
                } else {
                    state.stagnant = 0;
                }
                let reason = if state.rising >= config.patience {
                    Some(StopReason::ErrorIncrease)
                } else if state.val_rising >= config.patience {
                    Some(StopReason::ValidationIncrease)
                } else if state.stagnant >= config.patience {
                    Some(StopReason::Stagnation)
                } else {
                    None
                };
                if let Some(reason) = reason {
                    state.stopped = Some(reason);
                    state.stopped_at = epoch;
                }
            }
            state.prev_train = Some(loss);
            if val.is_some() {
                state.prev_val = val;
                state.last_val = val;
            }
        }
    }

    let mut records = BTreeMap::new();
    for (word, state) in states {
        let (iterations, stop_reason) = match state.stopped {
            Some(reason) => (state.stopped_at, reason),
            None => (epochs_run, StopReason::MaxIters),
        };
        records.insert(
            word,
            TrainRecord {
                final_train_loss: state.history.last().copied(),
                final_val_loss: state.last_val,
                iterations,
                stop_reason,
                train_loss_history: state.history,
            },
        );
    }
    Ok((store, TrainReport { records }))
}

/// One optimizer step for every live word. Stopped words are frozen:
/// inbound neighbour flow addressed to them is discarded.
fn apply_updates(
    store: &mut ParamsStore,
    states: &mut BTreeMap<WordId, WordState>,
    grads: &GradientSet,
    epoch: usize,
) -> Result<()> {
    for (word, grad) in grads {
        let state = states
            .get_mut(word)
            .ok_or_else(|| Error::MissingWord(format!("{word} (trainer state)")))?;
        if state.stopped.is_some() {
            continue;
        }
        if !grad.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "gradient for '{word}' became non-finite at iteration {epoch}"
            )));
        }
        let update = state.adadelta.step(&grad.to_flat())?;
        let params = store
            .get_mut(word)
            .ok_or_else(|| Error::MissingWord(format!("{word} (parameter store)")))?;
        params.add_flat(&update)?;
    }
    Ok(())
}

/// Keep a uniformly sampled share of every word's tuples:
/// `ceil(percent/100 * m)`, at least one for any word that has data.
pub fn ablate_tuples<T: Clone>(
    tuples_by_word: &BTreeMap<WordId, Vec<T>>,
    percent: f64,
    seed: u64,
) -> Result<BTreeMap<WordId, Vec<T>>> {
    validate_percent(percent)?;
    let mut out = BTreeMap::new();
    for (word, tuples) in tuples_by_word {
        if tuples.is_empty() {
            out.insert(word.clone(), Vec::new());
            continue;
        }
        let keep = ((percent / 100.0) * tuples.len() as f64).ceil().max(1.0) as usize;
        let keep = keep.min(tuples.len());
        let mut rng = SeededRng::derive(
            seed,
            &["ablate-tuples", word.surface(), word.pos().as_str()],
        );
        let chosen = rng.sample_indices(tuples.len(), keep);
        out.insert(
            word.clone(),
            chosen.into_iter().map(|i| tuples[i].clone()).collect(),
        );
    }
    Ok(out)
}

/// Keep a sampled subset of the words that have tuples; the rest lose
/// their tuples but stay in the vocabulary, where sharing and fitting can
/// still reach them.
pub fn ablate_words<T: Clone>(
    tuples_by_word: &BTreeMap<WordId, Vec<T>>,
    percent: f64,
    seed: u64,
) -> Result<BTreeMap<WordId, Vec<T>>> {
    validate_percent(percent)?;
    let with_data: Vec<&WordId> = tuples_by_word
        .iter()
        .filter(|(_, tuples)| !tuples.is_empty())
        .map(|(word, _)| word)
        .collect();
    let mut kept: BTreeSet<&WordId> = BTreeSet::new();
    if !with_data.is_empty() {
        let keep = ((percent / 100.0) * with_data.len() as f64).ceil().max(1.0) as usize;
        let keep = keep.min(with_data.len());
        let mut rng = SeededRng::derive(seed, &["ablate-words"]);
        for i in rng.sample_indices(with_data.len(), keep) {
            kept.insert(with_data[i]);
        }
    }
    let mut out = BTreeMap::new();
    for (word, tuples) in tuples_by_word {
        let kept_tuples = if kept.contains(word) {
            tuples.clone()
        } else {
            Vec::new()
        };
        out.insert(word.clone(), kept_tuples);
    }
    Ok(out)
}

fn validate_percent(percent: f64) -> Result<()> {
    if !percent.is_finite() || percent <= 0.0 || percent > 100.0 {
        return Err(Error::RejectedInput(format!(
            "ablation percentage must lie in (0, 100], got {percent}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adadelta_first_step_matches_hand_value() {
        let mut state = AdadeltaState::new(ADADELTA_RHO, ADADELTA_EPSILON, 1).unwrap();
        let update = state.step(&[1.0]).unwrap();
        assert!((update[0] - (-0.0044721)).abs() < 1e-6, "got {}", update[0]);
    }

    #[test]
    fn adadelta_rejects_non_finite_gradient() {
        let mut state = AdadeltaState::new(ADADELTA_RHO, ADADELTA_EPSILON, 2).unwrap();
        assert!(state.step(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn var_schedule_saturates() {
        let schedule = AlphaSchedule::Var {
            alpha_max: VAR_ALPHA_MAX,
            m_full: VAR_M_FULL,
        };
        assert_eq!(schedule.alpha_for(0), 0.0);
        assert_eq!(schedule.alpha_for(250), 0.45);
        assert_eq!(schedule.alpha_for(500), 0.9);
        assert_eq!(schedule.alpha_for(5000), 0.9);
    }

    #[test]
    fn validation_split_sizes() {
        let items: Vec<usize> = (0..20).collect();
        let mut rng = SeededRng::derive(7, &["test"]);
        let (train, val) = split_validation(&items, 0.1, 20, &mut rng).unwrap();
        assert_eq!(train.len(), 18);
        assert_eq!(val.len(), 2);

        let items: Vec<usize> = (0..19).collect();
        let mut rng = SeededRng::derive(7, &["test"]);
        let (train, val) = split_validation(&items, 0.1, 20, &mut rng).unwrap();
        assert_eq!(train.len(), 19);
        assert!(val.is_empty());
    }

    #[test]
    fn presets_round_trip() {
        for name in ["fix1", "fix2", "fix3", "var"] {
            assert_eq!(Preset::parse(name).unwrap().name(), name);
        }
        assert!(Preset::parse("fix4").is_err());
    }
}
