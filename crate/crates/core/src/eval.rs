//! Evaluation against human-rated similarity datasets: Spearman rank
//! correlation with a seeded permutation test, composed-vs-unfurled model
//! scoring, an additive word-vector baseline, and nearest-neighbour
//! inspection of learned parameters.

use std::collections::BTreeMap;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::graph::{EmbeddingTable, WordId};
use crate::io::EvalItem;
use crate::objective::{ExampleArgs, Params, ParamsStore};
use crate::rng::SeededRng;
use crate::tensor::cosine;

/// Permutation count for the significance test.
pub const DEFAULT_PERMUTATIONS: usize = 10_000;
/// Two-sided p-value threshold below which a correlation is reported as
/// significant.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// Comparisons with `|rho_perm| >= |rho_obs| - RHO_COMPARE_EPS` count as
/// at-least-as-extreme, so ties in the permutation distribution are not
/// lost to rounding.
const RHO_COMPARE_EPS: f64 = 1e-12;

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .expect("rank inputs are validated finite")
    });
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share the average of ranks i+1..=j+1
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn check_paired(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            context: "rank correlation".into(),
            expected: xs.len(),
            actual: ys.len(),
        });
    }
    if xs.len() < 3 {
        return Err(Error::UndefinedCorrelation(format!(
            "need at least 3 paired observations, got {}",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::RejectedInput(
            "correlation inputs must be finite".into(),
        ));
    }
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if constant(xs) || constant(ys) {
        return Err(Error::UndefinedCorrelation(
            "scores on one side are constant; ranks carry no information".into(),
        ));
    }
    Ok(())
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    // sqrt of the product, not the product of sqrts: when vx == vy the
    // denominator is then exactly vx, so perfectly monotone data scores
    // exactly +/-1.
    cov / (vx * vy).sqrt()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_paired(xs, ys)?;
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    Ok(pearson(&rx, &ry))
}

/// Spearman correlation plus a two-sided permutation p-value.
///
/// One side's ranks are shuffled `n_perms` times with a seeded generator;
/// the p-value is `(k + 1) / (n_perms + 1)` where `k` counts permutations
/// whose absolute correlation reaches the observed one. Identical inputs
/// and seed give an identical p-value.
pub fn spearman(xs: &[f64], ys: &[f64], n_perms: usize, seed: u64) -> Result<(f64, f64)> {
    check_paired(xs, ys)?;
    if n_perms == 0 {
        return Err(Error::RejectedInput(
            "permutation count must be positive".into(),
        ));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let rho = pearson(&rx, &ry);
    // Ranking a permuted sequence permutes its ranks, so shuffling the
    // precomputed ranks reproduces rank(shuffled ys) exactly.
    let mut rng = SeededRng::derive(seed, &["spearman-permutation"]);
    let mut shuffled = ry;
    let mut at_least = 0usize;
    for _ in 0..n_perms {
        rng.shuffle(&mut shuffled);
        if pearson(&rx, &shuffled).abs() >= rho.abs() - RHO_COMPARE_EPS {
            at_least += 1;
        }
    }
    let p = (at_least + 1) as f64 / (n_perms + 1) as f64;
    Ok((rho, p))
}

/// Two-sided p-value for a Spearman coefficient via the t approximation
/// `t = rho * sqrt((n-2) / (1-rho^2))` with `n - 2` degrees of freedom.
/// Coarser than the permutation test on small samples; offered for
/// comparison with conventionally reported figures.
pub fn spearman_t_approx(rho: f64, n: usize) -> Result<f64> {
    if n < 4 {
        return Err(Error::UndefinedCorrelation(format!(
            "the t approximation needs at least 4 observations, got {n}"
        )));
    }
    if !rho.is_finite() || rho.abs() > 1.0 {
        return Err(Error::RejectedInput(format!(
            "'{rho}' is not a correlation coefficient"
        )));
    }
    if (rho.abs() - 1.0).abs() < 1e-15 {
        return Ok(0.0);
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::NumericalFailure(format!("t distribution: {e}")))?;
    Ok(2.0 * (1.0 - dist.cdf(t.abs())))
}

/// How a model turns an evaluation item into a similarity score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    /// Apply each side's parameters to its argument vectors and take the
    /// cosine of the two composed phrase vectors. For phrase datasets.
    Compose,
    /// Cosine between the two words' unfurled parameter tensors. For
    /// word-pair datasets over the trained category.
    Unfurl,
}

impl ScoreMode {
    pub fn parse(name: &str) -> Result<ScoreMode> {
        match name {
            "compose" => Ok(ScoreMode::Compose),
            "unfurl" => Ok(ScoreMode::Unfurl),
            other => Err(Error::RejectedInput(format!(
                "unknown scoring mode '{other}' (expected compose or unfurl)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ScoreMode::Compose => "compose",
            ScoreMode::Unfurl => "unfurl",
        }
    }
}

fn store_params<'a>(store: &'a ParamsStore, surface: &str) -> Result<&'a Params> {
    let pos = store
        .keys()
        .next()
        .ok_or_else(|| Error::EmptyEvaluation("the parameter store is empty".into()))?
        .pos();
    let word = WordId::new(surface, pos)?;
    store
        .get(&word)
        .ok_or_else(|| Error::MissingWord(surface.to_string()))
}

fn composed(
    store: &ParamsStore,
    arg_vectors: &EmbeddingTable,
    head: &str,
    args: &[&str],
) -> Result<crate::tensor::Vector> {
    let params = store_params(store, head)?;
    let resolved = match *args {
        [noun] => ExampleArgs::Unary(arg_vectors.require(noun)?.clone()),
        [subj, obj] => ExampleArgs::Binary(
            arg_vectors.require(subj)?.clone(),
            arg_vectors.require(obj)?.clone(),
        ),
        _ => unreachable!("items carry one or two argument words"),
    };
    params.apply(&resolved)
}

/// Model similarity score for one item.
///
/// `Compose` handles phrase items and needs `arg_vectors` for the nouns;
/// `Unfurl` handles word-pair items from the store's own category. A
/// missing head word or argument vector surfaces as [`Error::MissingWord`]
/// so callers can drop and count the item; a shape/mode mismatch is a hard
/// error.
pub fn model_score(
    store: &ParamsStore,
    arg_vectors: Option<&EmbeddingTable>,
    item: &EvalItem,
    mode: ScoreMode,
) -> Result<f64> {
    match (mode, item) {
        (ScoreMode::Compose, EvalItem::AnPair { left, right, .. }) => {
            let vectors = arg_vectors.ok_or_else(|| {
                Error::RejectedInput("compose scoring needs argument word vectors".into())
            })?;
            let a = composed(store, vectors, &left.0, &[&left.1])?;
            let b = composed(store, vectors, &right.0, &[&right.1])?;
            cosine(&a, &b)
        }
        (ScoreMode::Compose, EvalItem::SvoPair { left, right, .. }) => {
            let vectors = arg_vectors.ok_or_else(|| {
                Error::RejectedInput("compose scoring needs argument word vectors".into())
            })?;
            let a = composed(store, vectors, &left.1, &[&left.0, &left.2])?;
            let b = composed(store, vectors, &right.1, &[&right.0, &right.2])?;
            cosine(&a, &b)
        }
        (ScoreMode::Unfurl, EvalItem::WordPair { left, right, .. }) => {
            let a = store_params(store, left)?.unfurl();
            let b = store_params(store, right)?.unfurl();
            cosine(&a, &b)
        }
        (mode, item) => Err(Error::RejectedInput(format!(
            "{} scoring does not apply to {} items",
            mode.as_str(),
            item.shape().as_str()
        ))),
    }
}

/// Baseline similarity: sum the plain word vectors on each side and take
/// the cosine of the sums. A word pair reduces to plain vector cosine.
pub fn additive_score(word_vectors: &EmbeddingTable, item: &EvalItem) -> Result<f64> {
    let side = |words: &[&str]| -> Result<crate::tensor::Vector> {
        let mut sum = vec![0.0; word_vectors.dim()];
        for w in words {
            for (acc, v) in sum.iter_mut().zip(word_vectors.require(w)?.values()) {
                *acc += v;
            }
        }
        crate::tensor::Vector::new(sum)
    };
    let (a, b) = match item {
        EvalItem::WordPair { left, right, .. } => (side(&[left])?, side(&[right])?),
        EvalItem::AnPair { left, right, .. } => (
            side(&[&left.0, &left.1])?,
            side(&[&right.0, &right.1])?,
        ),
        EvalItem::SvoPair { left, right, .. } => (
            side(&[&left.0, &left.1, &left.2])?,
            side(&[&right.0, &right.1, &right.2])?,
        ),
    };
    cosine(&a, &b)
}

/// One surviving evaluation item with its model and gold scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRow {
    pub item: EvalItem,
    pub model: f64,
    pub gold: f64,
}

/// A scored dataset: surviving rows, how many items were dropped for
/// missing words, and the rank correlation with its permutation p-value.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDataset {
    pub rows: Vec<ScoredRow>,
    pub dropped: usize,
    pub rho: f64,
    pub p_value: f64,
}

impl ScoredDataset {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn significant(&self) -> bool {
        self.p_value < SIGNIFICANCE_LEVEL
    }

    /// The one-line summary: `dataset TAB mode TAB n TAB dropped TAB rho
    /// TAB p_value`.
    pub fn report_line(&self, dataset: &str, mode: &str) -> String {
        format!(
            "{dataset}\t{mode}\t{}\t{}\t{:.9e}\t{:.9e}",
            self.n(),
            self.dropped,
            self.rho,
            self.p_value
        )
    }

    /// Per-item CSV with a header, item texts quoted.
    pub fn per_item_csv(&self) -> String {
        let mut out = String::from("item,model,gold\n");
        for row in &self.rows {
            let text = row.item.describe().replace('"', "\"\"");
            out.push_str(&format!("\"{text}\",{:.9e},{:.9e}\n", row.model, row.gold));
        }
        out
    }
}

fn collect_scores<F>(items: &[EvalItem], mut score: F) -> Result<(Vec<ScoredRow>, usize)>
where
    F: FnMut(&EvalItem) -> Result<f64>,
{
    let mut rows = Vec::with_capacity(items.len());
    let mut dropped = 0usize;
    for item in items {
        match score(item) {
            Ok(model) => rows.push(ScoredRow {
                item: item.clone(),
                model,
                gold: item.gold(),
            }),
            Err(Error::MissingWord(_)) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyEvaluation(format!(
            "all {} items were dropped for missing words",
            items.len()
        )));
    }
    Ok((rows, dropped))
}

fn correlate(rows: Vec<ScoredRow>, dropped: usize, n_perms: usize, seed: u64) -> Result<ScoredDataset> {
    let models: Vec<f64> = rows.iter().map(|r| r.model).collect();
    let golds: Vec<f64> = rows.iter().map(|r| r.gold).collect();
    let (rho, p_value) = spearman(&models, &golds, n_perms, seed)?;
    Ok(ScoredDataset {
        rows,
        dropped,
        rho,
        p_value,
    })
}

/// Score a whole dataset with a model. Items whose head word or argument
/// vectors are unknown are dropped and counted; dropping everything is an
/// error.
pub fn score_dataset(
    store: &ParamsStore,
    arg_vectors: Option<&EmbeddingTable>,
    items: &[EvalItem],
    mode: ScoreMode,
    n_perms: usize,
    seed: u64,
) -> Result<ScoredDataset> {
    if items.is_empty() {
        return Err(Error::EmptyEvaluation("the dataset holds no items".into()));
    }
    let (rows, dropped) = collect_scores(items, |item| model_score(store, arg_vectors, item, mode))?;
    correlate(rows, dropped, n_perms, seed)
}

/// Score a whole dataset with the additive word-vector baseline.
pub fn score_dataset_additive(
    word_vectors: &EmbeddingTable,
    items: &[EvalItem],
    n_perms: usize,
    seed: u64,
) -> Result<ScoredDataset> {
    if items.is_empty() {
        return Err(Error::EmptyEvaluation("the dataset holds no items".into()));
    }
    let (rows, dropped) = collect_scores(items, |item| additive_score(word_vectors, item))?;
    correlate(rows, dropped, n_perms, seed)
}

/// The `top_n` words most similar to `word` by cosine between unfurled
/// parameter tensors, descending; exact ties break lexicographically.
/// Only words in the store (necessarily the same category) are candidates.
pub fn nearest_neighbors(
    store: &ParamsStore,
    word: &WordId,
    top_n: usize,
) -> Result<Vec<(WordId, f64)>> {
    let params = store
        .get(word)
        .ok_or_else(|| Error::MissingWord(word.surface().to_string()))?;
    let anchor = params.unfurl();
    let mut scored: Vec<(WordId, f64)> = Vec::new();
    for (other, other_params) in store {
        if other == word {
            continue;
        }
        scored.push((other.clone(), cosine(&anchor, &other_params.unfurl())?));
    }
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("cosines are finite")
            .then_with(|| a.0.cmp(&b.0))
    });
    scored.truncate(top_n);
    Ok(scored)
}

/// Per-word diagnostic table: largest absolute parameter entry, one line
/// per word (`word TAB max_abs`), flagging runaway parameters at a glance.
pub fn max_abs_table(store: &ParamsStore) -> BTreeMap<WordId, f64> {
    store
        .iter()
        .map(|(w, p)| (w.clone(), p.max_abs_entry()))
        .collect()
}
