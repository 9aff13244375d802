//! Word identities, embedding tables, and the neighbour graph.
//!
//! Collaborative training needs, for every word, a fixed list of its top-K
//! most similar words of the same part of speech, each with a similarity
//! weight phi. The weights come either from cosine over an embedding table or
//! from a precomputed similarity matrix. Graphs are fully deterministic:
//! candidates are ranked by weight with ties broken by lexicographic surface
//! order, and the serialized form is byte-stable for a given source,
//! vocabulary set, and K.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{cosine, Vector};

/// Part-of-speech category. Neighbour relations never cross categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Pos {
    Adjective,
    Verb,
    Noun,
}

impl Pos {
    pub fn as_str(&self) -> &'static str {
        match self {
            Pos::Adjective => "adjective",
            Pos::Verb => "verb",
            Pos::Noun => "noun",
        }
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A word key: lowercase lemma surface plus part of speech.
///
/// Ordering is by surface first, then category, which fixes every iteration
/// order in the library.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WordId {
    surface: String,
    pos: Pos,
}

impl WordId {
    /// Build a word id. The surface is trimmed and lowercased; surfaces
    /// that are empty (or whitespace only) are rejected.
    pub fn new(surface: &str, pos: Pos) -> Result<Self> {
        let surface = surface.trim();
        if surface.is_empty() {
            return Err(Error::RejectedInput("word surface must be non-empty".into()));
        }
        Ok(WordId {
            surface: surface.to_lowercase(),
            pos,
        })
    }

    pub fn surface(&self) -> &str {
        &self.surface
    }

    pub fn pos(&self) -> Pos {
        self.pos
    }
}

impl fmt::Display for WordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.surface)
    }
}

/// A table of fixed-dimension word vectors keyed by surface string.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    entries: BTreeMap<String, Vector>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::RejectedInput("embedding dimension must be positive".into()));
        }
        Ok(EmbeddingTable {
            dim,
            entries: BTreeMap::new(),
        })
    }

    /// Insert a vector. Rejects dimension mismatches and duplicate keys.
    pub fn insert(&mut self, key: &str, vector: Vector) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: format!("embedding for '{key}'"),
                expected: self.dim,
                actual: vector.len(),
            });
        }
        let key = key.to_lowercase();
        if self.entries.contains_key(&key) {
            return Err(Error::RejectedInput(format!("duplicate embedding key '{key}'")));
        }
        self.entries.insert(key, vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&Vector> {
        self.entries.get(key)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Lookup that fails with a missing-word error instead of `None`.
    pub fn require(&self, key: &str) -> Result<&Vector> {
        self.entries
            .get(key)
            .ok_or_else(|| Error::MissingWord(key.to_string()))
    }
}

/// Symmetric precomputed similarity scores over a closed word set.
///
/// Pairs not listed in the input are treated as negative infinity, so they
/// can never be selected as neighbours while any scored pair remains.
#[derive(Debug, Clone)]
pub struct PrecomputedPhi {
    scores: BTreeMap<(String, String), f64>,
    words: BTreeSet<String>,
}

fn ordered_pair(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl PrecomputedPhi {
    /// Build from `(word1, word2, score)` triples.
    ///
    /// Both orientations of a pair may appear, but their scores must agree
    /// exactly; a contradiction is rejected. Scores must be finite.
    pub fn from_pairs(pairs: &[(String, String, f64)]) -> Result<Self> {
        let mut scores = BTreeMap::new();
        let mut words = BTreeSet::new();
        for (a, b, score) in pairs {
            if !score.is_finite() {
                return Err(Error::RejectedInput(format!(
                    "similarity score for ({a}, {b}) must be finite, got {score}"
                )));
            }
            let a_norm = a.to_lowercase();
            let b_norm = b.to_lowercase();
            words.insert(a_norm.clone());
            words.insert(b_norm.clone());
            let key = ordered_pair(&a_norm, &b_norm);
            if let Some(prev) = scores.insert(key, *score) {
                if prev != *score {
                    return Err(Error::RejectedInput(format!(
                        "conflicting similarity scores for ({a_norm}, {b_norm}): {prev} vs {score}"
                    )));
                }
            }
        }
        Ok(PrecomputedPhi { scores, words })
    }

    fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    fn score(&self, a: &str, b: &str) -> f64 {
        self.scores
            .get(&ordered_pair(a, b))
            .copied()
            .unwrap_or(f64::NEG_INFINITY)
    }
}

/// Where neighbour weights come from.
pub enum SimilaritySource {
    /// Cosine similarity between rows of an embedding table.
    EmbeddingCosine(EmbeddingTable),
    /// Scores read from a precomputed similarity matrix.
    Precomputed(PrecomputedPhi),
}

impl SimilaritySource {
    /// Similarity weight between two words of the same category.
    ///
    /// Symmetric by construction. Both words must be known to the source;
    /// for the precomputed variant an unknown *pair* of known words scores
    /// negative infinity rather than erroring.
    pub fn phi(&self, a: &WordId, b: &WordId) -> Result<f64> {
        if a.pos() != b.pos() {
            return Err(Error::RejectedInput(format!(
                "similarity crosses categories: {} is {}, {} is {}",
                a,
                a.pos(),
                b,
                b.pos()
            )));
        }
        match self {
            SimilaritySource::EmbeddingCosine(table) => {
                let va = table.require(a.surface())?;
                let vb = table.require(b.surface())?;
                cosine(va, vb)
            }
            SimilaritySource::Precomputed(phi) => {
                for w in [a, b] {
                    if !phi.contains(w.surface()) {
                        return Err(Error::MissingWord(w.surface().to_string()));
                    }
                }
                Ok(phi.score(a.surface(), b.surface()))
            }
        }
    }
}

/// Top-K neighbour lists with similarity weights, one list per word.
#[derive(Debug, Clone)]
pub struct NeighborGraph {
    k: usize,
    neighbors: BTreeMap<WordId, Vec<(WordId, f64)>>,
}

impl NeighborGraph {
    /// The configured K (lists may be shorter when the vocabulary is small).
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn words(&self) -> impl Iterator<Item = &WordId> {
        self.neighbors.keys()
    }

    /// Neighbour list of `word`, ranked by descending weight.
    pub fn neighbors(&self, word: &WordId) -> Option<&[(WordId, f64)]> {
        self.neighbors.get(word).map(|v| v.as_slice())
    }

    /// Serialize as `word TAB neighbor TAB phi` lines, words in lexicographic
    /// order, neighbours in rank order. Byte-stable.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (word, list) in &self.neighbors {
            for (neighbor, phi) in list {
                out.push_str(&format!("{}\t{}\t{:.17e}\n", word, neighbor, phi));
            }
        }
        out
    }
}

/// Build the top-K neighbour graph over `vocab`.
///
/// Every vocabulary word must be known to the similarity source, all words
/// must share one part of speech, the vocabulary (after deduplication) must
/// have at least two words, and `k` must be at least 1. A word is never its
/// own neighbour. Candidates are ranked by weight, ties broken by
/// lexicographic surface order; when `clamp_phi_nonnegative` is set, negative
/// weights are clamped to zero before ranking and storage.
pub fn build_graph(
    source: &SimilaritySource,
    vocab: &[WordId],
    k: usize,
    clamp_phi_nonnegative: bool,
) -> Result<NeighborGraph> {
    if k == 0 {
        return Err(Error::RejectedInput("neighbour count k must be at least 1".into()));
    }
    let unique: BTreeSet<WordId> = vocab.iter().cloned().collect();
    if unique.len() < 2 {
        return Err(Error::RejectedInput(format!(
            "neighbour graph needs at least 2 distinct words, got {}",
            unique.len()
        )));
    }
    let first_pos = unique.iter().next().expect("non-empty").pos();
    if let Some(stray) = unique.iter().find(|w| w.pos() != first_pos) {
        return Err(Error::RejectedInput(format!(
            "vocabulary mixes categories: '{}' is {}, expected {}",
            stray,
            stray.pos(),
            first_pos
        )));
    }

    let words: Vec<&WordId> = unique.iter().collect();
    let mut neighbors = BTreeMap::new();
    for word in &words {
        let mut scored: Vec<(WordId, f64)> = Vec::with_capacity(words.len() - 1);
        for other in &words {
            if word == other {
                continue;
            }
            let mut phi = source.phi(word, other)?;
            if clamp_phi_nonnegative && phi < 0.0 {
                phi = 0.0;
            }
            scored.push(((*other).clone(), phi));
        }
        scored.sort_by(|(wa, pa), (wb, pb)| {
            pb.partial_cmp(pa)
                .expect("phi is never NaN")
                .then_with(|| wa.surface().cmp(wb.surface()))
        });
        scored.truncate(k);
        neighbors.insert((*word).clone(), scored);
    }
    Ok(NeighborGraph { k, neighbors })
}
