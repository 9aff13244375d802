//! Neighbour-graph construction: hand-checked similarities, ordering and
//! tie-breaking, the clamping switch, and insensitivity to vocabulary
//! order.

use lexfun::{
    build_graph, EmbeddingTable, Pos, PrecomputedPhi, SimilaritySource, Vector, WordId,
};

fn adj(surface: &str) -> WordId {
    WordId::new(surface, Pos::Adjective).unwrap()
}

fn table(entries: &[(&str, &[f64])]) -> EmbeddingTable {
    let mut t = EmbeddingTable::new(entries[0].1.len()).unwrap();
    for (key, values) in entries {
        t.insert(key, Vector::new(values.to_vec()).unwrap()).unwrap();
    }
    t
}

#[test]
fn neighbours_are_ranked_by_hand_checked_cosines() {
    // phi(a,b)=1, phi(a,c)=0, phi(a,d)=-1 by construction.
    let embeddings = table(&[
        ("apt", &[1.0, 0.0]),
        ("big", &[2.0, 0.0]),
        ("coy", &[0.0, 1.0]),
        ("dim", &[-1.0, 0.0]),
    ]);
    let vocab = vec![adj("apt"), adj("big"), adj("coy"), adj("dim")];
    let source = SimilaritySource::EmbeddingCosine(embeddings);
    let graph = build_graph(&source, &vocab, 2, false).unwrap();

    let neighbours = graph.neighbors(&adj("apt")).unwrap();
    assert_eq!(neighbours.len(), 2);
    assert_eq!(neighbours[0].0, adj("big"));
    assert!((neighbours[0].1 - 1.0).abs() < 1e-12);
    assert_eq!(neighbours[1].0, adj("coy"));
    assert!(neighbours[1].1.abs() < 1e-12);
}

#[test]
fn clamping_floors_negative_similarities_at_zero() {
    let embeddings = table(&[
        ("apt", &[1.0, 0.0]),
        ("dim", &[-1.0, 0.0]),
        ("coy", &[0.0, 1.0]),
    ]);
    let vocab = vec![adj("apt"), adj("dim"), adj("coy")];
    let source = SimilaritySource::EmbeddingCosine(embeddings);

    let raw = build_graph(&source, &vocab, 2, false).unwrap();
    let raw_scores: Vec<f64> = raw.neighbors(&adj("apt")).unwrap().iter().map(|(_, p)| *p).collect();
    assert!(raw_scores.contains(&-1.0));

    let clamped = build_graph(&source, &vocab, 2, true).unwrap();
    for (_, phi) in clamped.neighbors(&adj("apt")).unwrap() {
        assert!(*phi >= 0.0);
    }
    // with both scores clamped to 0, order falls back to the surface
    let clamped_words: Vec<&str> = clamped
        .neighbors(&adj("apt"))
        .unwrap()
        .iter()
        .map(|(w, _)| w.surface())
        .collect();
    assert_eq!(clamped_words, vec!["coy", "dim"]);
}

#[test]
fn exact_ties_break_lexicographically() {
    // "big" and "coy" tie at phi = 0 with "apt".
    let embeddings = table(&[
        ("apt", &[1.0, 0.0]),
        ("coy", &[0.0, 1.0]),
        ("big", &[0.0, 2.0]),
    ]);
    let vocab = vec![adj("apt"), adj("coy"), adj("big")];
    let source = SimilaritySource::EmbeddingCosine(embeddings);
    let graph = build_graph(&source, &vocab, 2, false).unwrap();
    let words: Vec<&str> = graph
        .neighbors(&adj("apt"))
        .unwrap()
        .iter()
        .map(|(w, _)| w.surface())
        .collect();
    assert_eq!(words, vec!["big", "coy"]);
}

#[test]
fn graph_does_not_depend_on_vocabulary_order() {
    let entries: &[(&str, &[f64])] = &[
        ("apt", &[1.0, 0.2, -0.3]),
        ("big", &[0.4, 0.9, 0.1]),
        ("coy", &[-0.2, 0.5, 0.8]),
        ("dim", &[0.7, -0.6, 0.2]),
        ("elder", &[0.1, 0.1, 0.9]),
    ];
    let vocab: Vec<WordId> = entries.iter().map(|(w, _)| adj(w)).collect();
    let mut reversed = vocab.clone();
    reversed.reverse();

    let source = SimilaritySource::EmbeddingCosine(table(entries));
    let a = build_graph(&source, &vocab, 3, false).unwrap();
    let b = build_graph(&source, &reversed, 3, false).unwrap();
    assert_eq!(a.to_tsv(), b.to_tsv());
}

#[test]
fn self_similarity_is_excluded_and_k_truncates() {
    let embeddings = table(&[
        ("apt", &[1.0, 0.0]),
        ("big", &[1.0, 0.1]),
        ("coy", &[1.0, 0.2]),
        ("dim", &[1.0, 0.3]),
    ]);
    let vocab = vec![adj("apt"), adj("big"), adj("coy"), adj("dim")];
    let source = SimilaritySource::EmbeddingCosine(embeddings);
    let graph = build_graph(&source, &vocab, 2, false).unwrap();
    for word in &vocab {
        let neighbours = graph.neighbors(word).unwrap();
        assert_eq!(neighbours.len(), 2, "k must truncate the list");
        assert!(neighbours.iter().all(|(w, _)| w != word), "no self edges");
    }
}

#[test]
fn precomputed_scores_drive_the_graph() {
    let pairs = vec![
        ("walk".to_string(), "run".to_string(), 0.9),
        ("walk".to_string(), "sit".to_string(), 0.2),
        ("run".to_string(), "sit".to_string(), 0.1),
    ];
    let phi = PrecomputedPhi::from_pairs(&pairs).unwrap();
    let verb = |s: &str| WordId::new(s, Pos::Verb).unwrap();
    let vocab = vec![verb("walk"), verb("run"), verb("sit")];
    let graph = build_graph(&SimilaritySource::Precomputed(phi), &vocab, 1, false).unwrap();
    let top = graph.neighbors(&verb("walk")).unwrap();
    assert_eq!(top.len(), 1);
    assert_eq!(top[0].0, verb("run"));
    assert!((top[0].1 - 0.9).abs() < 1e-12);
}

#[test]
fn degenerate_vocabularies_are_rejected() {
    let embeddings = table(&[("apt", &[1.0, 0.0]), ("big", &[0.0, 1.0])]);
    let source = SimilaritySource::EmbeddingCosine(embeddings);

    // k = 0
    assert!(build_graph(&source, &[adj("apt"), adj("big")], 0, false).is_err());
    // fewer than two distinct words
    assert!(build_graph(&source, &[adj("apt")], 2, false).is_err());
    assert!(build_graph(&source, &[adj("apt"), adj("apt")], 2, false).is_err());
    // mixed categories
    let mixed = vec![adj("apt"), WordId::new("walk", Pos::Verb).unwrap()];
    assert!(build_graph(&source, &mixed, 1, false).is_err());
}

#[test]
fn word_identities_normalize_and_validate() {
    let w = WordId::new("Red", Pos::Adjective).unwrap();
    assert_eq!(w.surface(), "red");
    assert_eq!(w, adj("red"));
    assert!(WordId::new("", Pos::Adjective).is_err());
    assert!(WordId::new("   ", Pos::Adjective).is_err());
}
