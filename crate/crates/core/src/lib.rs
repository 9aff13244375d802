//! Training and evaluation toolkit for tensor-based word meaning.
//!
//! Relational words act on their arguments: an attributive adjective is a
//! square matrix applied to a noun vector, a transitive verb is a
//! third-order tensor contracted with subject and object vectors. This
//! crate learns those tensors from (argument vectors, observed phrase
//! vector) pairs, optionally letting distributionally similar words train
//! collaboratively — blending neighbour tensors into predictions and
//! pulling parameters toward neighbours — so that words with little or no
//! phrase data still end up with usable tensors.
//!
//! The pieces:
//! - [`tensor`]: dense and low-rank parameter shapes and their actions;
//! - [`graph`]: word identities, embedding tables, similarity neighbours;
//! - [`objective`]: losses, blending, penalties, exact gradients;
//! - [`train`]: ADADELTA fitting with per-word early stopping;
//! - [`glf`]: a tensor that predicts adjective matrices from embeddings;
//! - [`io`]: file formats, loaders, and bit-exact model archives;
//! - [`eval`]: rank correlation, significance, and dataset scoring;
//! - [`rng`]: seeded, platform-independent randomness;
//! - [`error`]: one error type for the whole crate.
//!
//! Everything is deterministic: equal inputs and seeds give bit-identical
//! models at any thread count.

pub mod error;
pub mod eval;
pub mod glf;
pub mod graph;
pub mod io;
pub mod objective;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use eval::{
    additive_score, average_ranks, max_abs_table, model_score, nearest_neighbors, score_dataset,
    score_dataset_additive, spearman, spearman_rho, spearman_t_approx, ScoreMode, ScoredDataset,
    ScoredRow, DEFAULT_PERMUTATIONS, SIGNIFICANCE_LEVEL,
};
pub use glf::{
    glf_gradient, glf_loss, glf_predict, glf_train, GlfConfig, GlfReport, GlfTensor,
    GLF_MAX_ITERATIONS, GLF_MIN_TUPLES,
};
pub use graph::{
    build_graph, EmbeddingTable, NeighborGraph, Pos, PrecomputedPhi, SimilaritySource, WordId,
};
pub use io::{
    config_digest, load_counts, load_embeddings, load_eval_dataset, load_glf, load_model,
    load_phi_matrix, load_tuples, save_glf, save_model, ArchiveKind, DatasetShape, EvalItem,
    ModelMeta, ARCHIVE_HEADER, P_MIN, Q_MIN, TUPLE_CAP,
};
pub use objective::{
    blend_divisor, combined_loss, example_loss, ft_penalty, gradients, ps_effective_params,
    ps_example_loss, ps_mixture_store, total_loss, ExampleArgs, GradientSet, LossForm,
    ObjectiveConfig, Params, ParamsStore, Representation, ResolvedExample, FT_SUBGRADIENT_EPS,
    L2_LAMBDA_FULL, L2_LAMBDA_LOW_RANK,
};
pub use rng::SeededRng;
pub use tensor::{cosine, DenseMatrix, DenseTensor3, LowRankMatrix, LowRankTensor3, Vector};
pub use train::{
    ablate_tuples, ablate_words, alpha_schedule_var, fit, init_params, split_validation,
    AdadeltaState, AlphaSchedule, BatchMode, Preset, StopReason, TrainConfig, TrainRecord,
    TrainReport, TrainingTuple, TupleArgs, ADADELTA_EPSILON, ADADELTA_RHO, ALPHA_GRID, BETA_GRID,
    MAX_ITERATIONS, PATIENCE, STAGNATION_TOLERANCE, VALIDATION_FRACTION, VALIDATION_MIN_POINTS,
    VAR_ALPHA_MAX, VAR_M_FULL,
};
