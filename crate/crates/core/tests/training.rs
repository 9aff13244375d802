//! End-to-end trainer behaviour: optimizer scale-freeness, planted-model
//! recovery, isolation at zero blending, zero-data freeze-vs-pull,
//! divergence detection, deterministic reruns, and ablation arithmetic.

use std::collections::BTreeMap;

use lexfun::{
    ablate_tuples, ablate_words, build_graph, fit, AdadeltaState, BatchMode, EmbeddingTable,
    NeighborGraph, ObjectiveConfig, Params, Pos, Representation, SeededRng, SimilaritySource,
    StopReason, TrainConfig, TrainingTuple, TupleArgs, Vector, WordId,
};

fn adj(surface: &str) -> WordId {
    WordId::new(surface, Pos::Adjective).unwrap()
}

fn random_vector(rng: &mut SeededRng, n: usize) -> Vector {
    Vector::new((0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

/// A noiseless planted adjective problem: every word has a hidden true
/// matrix, nouns are random, targets are exact images of the nouns.
struct Planted {
    vocab: Vec<WordId>,
    tuples: BTreeMap<WordId, Vec<TrainingTuple>>,
    graph: NeighborGraph,
    arg_vectors: EmbeddingTable,
    holistic: EmbeddingTable,
    true_mats: BTreeMap<WordId, lexfun::DenseMatrix>,
}

fn planted_adjectives(seed: u64, n: usize, words: usize, tuples_per_word: usize) -> Planted {
    let mut rng = SeededRng::derive(seed, &["planted"]);
    let vocab: Vec<WordId> = (0..words).map(|i| adj(&format!("w{i}"))).collect();

    let mut word_emb = EmbeddingTable::new(4).unwrap();
    for w in &vocab {
        word_emb.insert(w.surface(), random_vector(&mut rng, 4)).unwrap();
    }
    let graph = build_graph(
        &SimilaritySource::EmbeddingCosine(word_emb),
        &vocab,
        2.min(words - 1),
        false,
    )
    .unwrap();

    let mut arg_vectors = EmbeddingTable::new(n).unwrap();
    let mut holistic = EmbeddingTable::new(n).unwrap();
    let mut tuples: BTreeMap<WordId, Vec<TrainingTuple>> = BTreeMap::new();
    let mut true_mats = BTreeMap::new();
    for w in &vocab {
        let true_mat = lexfun::DenseMatrix::new(
            n,
            n,
            (0..n * n).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let mut rows = Vec::new();
        for t in 0..tuples_per_word {
            let noun_key = format!("{}_noun{t}", w.surface());
            let noun = random_vector(&mut rng, n);
            let target = true_mat.matvec(&noun).unwrap();
            let phrase_key = format!("{}_{noun_key}", w.surface());
            arg_vectors.insert(&noun_key, noun).unwrap();
            holistic.insert(&phrase_key, target).unwrap();
            rows.push(TrainingTuple {
                head: w.clone(),
                args: TupleArgs::Noun(noun_key),
                holistic_key: phrase_key,
                occurrence_count: 10,
            });
        }
        tuples.insert(w.clone(), rows);
        true_mats.insert(w.clone(), true_mat);
    }
    Planted {
        vocab,
        tuples,
        graph,
        arg_vectors,
        holistic,
        true_mats,
    }
}

fn isolated_config(seed: u64) -> TrainConfig {
    let mut objective = ObjectiveConfig::new(0.0, 0.0, 2, Representation::Full).unwrap();
    objective.l2_lambda = 0.0;
    let mut config = TrainConfig::new(objective, seed);
    config.batch_mode = BatchMode::Minibatch(20);
    config
}

fn rel_err(learned: &Params, truth: &lexfun::DenseMatrix) -> f64 {
    let flat = learned.to_flat();
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in flat.iter().zip(truth.values()) {
        num += (a - b) * (a - b);
        den += b * b;
    }
    (num / den).sqrt()
}

#[test]
fn adadelta_steps_are_scale_free() {
    // The first step's magnitude is nearly independent of the gradient's
    // scale — the hallmark of the update rule.
    let step_for = |g: f64| {
        let mut state = AdadeltaState::new(0.95, 1e-6, 1).unwrap();
        state.step(&[g]).unwrap()[0].abs()
    };
    let s100 = step_for(100.0);
    let s1000 = step_for(1000.0);
    assert!(
        (s100 / s1000 - 1.0).abs() < 1e-8,
        "steps differ: {s100} vs {s1000}"
    );
}

#[test]
fn planted_matrices_are_recovered() {
    let planted = planted_adjectives(41, 6, 3, 60);
    let config = isolated_config(41);
    let (store, report) = fit(
        &planted.vocab,
        &planted.tuples,
        &planted.graph,
        &planted.arg_vectors,
        &planted.holistic,
        &config,
    )
    .unwrap();

    for w in &planted.vocab {
        let err = rel_err(store.get(w).unwrap(), &planted.true_mats[w]);
        assert!(err < 0.05, "'{w}' recovered with relative error {err}");
        let record = report.records.get(w).unwrap();
        assert!(record.final_train_loss.unwrap() < 1e-3);
        assert!(record.iterations <= 200);
    }
}

#[test]
fn training_loss_trends_downward() {
    let planted = planted_adjectives(43, 5, 3, 30);
    let config = isolated_config(43);
    let (_, report) = fit(
        &planted.vocab,
        &planted.tuples,
        &planted.graph,
        &planted.arg_vectors,
        &planted.holistic,
        &config,
    )
    .unwrap();
    for (w, record) in &report.records {
        let history = &record.train_loss_history;
        assert!(history.len() >= 2, "'{w}' must log its loss trajectory");
        let first = history[0];
        let last = *history.last().unwrap();
        assert!(
            last < first * 0.5,
            "'{w}' loss went {first} -> {last}; expected clear descent"
        );
    }
}

/// With blending disabled a word's trajectory is a function of its own
/// data and seed alone: retraining next to a completely different
/// companion yields bit-identical parameters.
#[test]
fn zero_blending_isolates_words() {
    let n = 4;
    let seed = 47;
    let mut rng = SeededRng::derive(seed, &["isolation"]);

    // shared word "anchor" with fixed data
    let anchor = adj("anchor");
    let mut arg_vectors = EmbeddingTable::new(n).unwrap();
    let mut holistic = EmbeddingTable::new(n).unwrap();
    let mut anchor_rows = Vec::new();
    for t in 0..25 {
        let noun_key = format!("anchor_noun{t}");
        let noun = random_vector(&mut rng, n);
        let target = random_vector(&mut rng, n);
        let phrase_key = format!("anchor_{t}");
        arg_vectors.insert(&noun_key, noun).unwrap();
        holistic.insert(&phrase_key, target).unwrap();
        anchor_rows.push(TrainingTuple {
            head: anchor.clone(),
            args: TupleArgs::Noun(noun_key),
            holistic_key: phrase_key,
            occurrence_count: 5,
        });
    }

    let run = |companion: &str,
               companion_scale: f64,
               arg_vectors: &mut EmbeddingTable,
               holistic: &mut EmbeddingTable,
               rng: &mut SeededRng| {
        let comp = adj(companion);
        let mut comp_rows = Vec::new();
        for t in 0..10 {
            let noun_key = format!("{companion}_noun{t}");
            let noun = random_vector(rng, n);
            let target = Vector::new(
                random_vector(rng, n)
                    .values()
                    .iter()
                    .map(|v| v * companion_scale)
                    .collect(),
            )
            .unwrap();
            let phrase_key = format!("{companion}_{t}");
            arg_vectors.insert(&noun_key, noun).unwrap();
            holistic.insert(&phrase_key, target).unwrap();
            comp_rows.push(TrainingTuple {
                head: comp.clone(),
                args: TupleArgs::Noun(noun_key),
                holistic_key: phrase_key,
                occurrence_count: 5,
            });
        }

        let vocab = vec![anchor.clone(), comp.clone()];
        let mut word_emb = EmbeddingTable::new(2).unwrap();
        word_emb.insert("anchor", Vector::new(vec![1.0, 0.0]).unwrap()).unwrap();
        word_emb.insert(companion, Vector::new(vec![0.0, 1.0]).unwrap()).unwrap();
        let graph = build_graph(
            &SimilaritySource::EmbeddingCosine(word_emb),
            &vocab,
            1,
            false,
        )
        .unwrap();

        let mut tuples = BTreeMap::new();
        tuples.insert(anchor.clone(), anchor_rows.clone());
        tuples.insert(comp.clone(), comp_rows);

        let mut config = isolated_config(seed);
        config.max_iterations = 30;
        let (store, _) = fit(&vocab, &tuples, &graph, arg_vectors, holistic, &config).unwrap();
        store.get(&anchor).unwrap().to_flat()
    };

    let first = run("buddy", 1.0, &mut arg_vectors.clone(), &mut holistic.clone(), &mut rng.clone());
    let second = run("other", 3.0, &mut arg_vectors, &mut holistic, &mut rng);
    assert_eq!(
        first, second,
        "anchor parameters must not depend on the companion when alpha = 0"
    );
}

/// A zero-data word with no penalty term has nothing pulling on it: its
/// parameters stay bit-identical to their seeded initialization. With the
/// penalty switched on the same word is pulled toward its neighbours.
#[test]
fn zero_data_words_freeze_without_penalty_and_move_with_it() {
    let planted = planted_adjectives(53, 4, 3, 20);
    let lonely = adj("w2");
    let mut tuples = planted.tuples.clone();
    tuples.insert(lonely.clone(), Vec::new());

    let init = lexfun::init_params(&lonely, Representation::Full, 4, 4, 53).unwrap();

    // beta = 0: frozen at initialization.
    let mut config = isolated_config(53);
    config.max_iterations = 15;
    let (store, report) = fit(
        &planted.vocab,
        &tuples,
        &planted.graph,
        &planted.arg_vectors,
        &planted.holistic,
        &config,
    )
    .unwrap();
    assert_eq!(store.get(&lonely).unwrap().to_flat(), init.to_flat());
    let record = report.records.get(&lonely).unwrap();
    assert_eq!(record.final_train_loss, None, "no data, no training loss");
    assert_eq!(record.stop_reason, StopReason::MaxIters);

    // beta > 0: the penalty pulls the word off its initialization.
    let mut objective = ObjectiveConfig::new(0.0, 0.1, 2, Representation::Full).unwrap();
    objective.l2_lambda = 0.0;
    let mut config = TrainConfig::new(objective, 53);
    config.batch_mode = BatchMode::Minibatch(20);
    config.max_iterations = 15;
    let (store, _) = fit(
        &planted.vocab,
        &tuples,
        &planted.graph,
        &planted.arg_vectors,
        &planted.holistic,
        &config,
    )
    .unwrap();
    assert_ne!(store.get(&lonely).unwrap().to_flat(), init.to_flat());
}

#[test]
fn diverging_losses_are_reported_not_propagated() {
    // Targets around 1e200 overflow the squared error to infinity on the
    // very first epoch; training must fail loudly with a numerical error.
    let n = 3;
    let vocab = vec![adj("w0"), adj("w1")];
    let mut word_emb = EmbeddingTable::new(2).unwrap();
    word_emb.insert("w0", Vector::new(vec![1.0, 0.0]).unwrap()).unwrap();
    word_emb.insert("w1", Vector::new(vec![0.0, 1.0]).unwrap()).unwrap();
    let graph = build_graph(
        &SimilaritySource::EmbeddingCosine(word_emb),
        &vocab,
        1,
        false,
    )
    .unwrap();

    let mut arg_vectors = EmbeddingTable::new(n).unwrap();
    let mut holistic = EmbeddingTable::new(n).unwrap();
    let mut tuples: BTreeMap<WordId, Vec<TrainingTuple>> = BTreeMap::new();
    for w in &vocab {
        let noun_key = format!("{}_noun", w.surface());
        let phrase_key = format!("{}_phrase", w.surface());
        arg_vectors
            .insert(&noun_key, Vector::new(vec![1.0, 0.5, -0.5]).unwrap())
            .unwrap();
        holistic
            .insert(&phrase_key, Vector::new(vec![1e200, -1e200, 1e200]).unwrap())
            .unwrap();
        tuples.insert(
            w.clone(),
            vec![TrainingTuple {
                head: w.clone(),
                args: TupleArgs::Noun(noun_key),
                holistic_key: phrase_key,
                occurrence_count: 5,
            }],
        );
    }

    let config = isolated_config(11);
    let err = fit(&vocab, &tuples, &graph, &arg_vectors, &holistic, &config).unwrap_err();
    assert_eq!(err.category(), "numerical", "got: {err}");
}

#[test]
fn reruns_and_thread_counts_are_bit_identical() {
    let planted = planted_adjectives(59, 4, 4, 15);
    let mut objective = ObjectiveConfig::new(0.5, 0.05, 2, Representation::Full).unwrap();
    objective.l2_lambda = 0.0;
    let mut config = TrainConfig::new(objective, 59);
    config.batch_mode = BatchMode::Minibatch(8);
    config.max_iterations = 10;

    let run = |threads: usize| {
        let mut c = config.clone();
        c.threads = threads;
        let (store, _) = fit(
            &planted.vocab,
            &planted.tuples,
            &planted.graph,
            &planted.arg_vectors,
            &planted.holistic,
            &c,
        )
        .unwrap();
        store
            .iter()
            .map(|(w, p)| (w.clone(), p.to_flat()))
            .collect::<Vec<_>>()
    };

    let once = run(1);
    let again = run(1);
    assert_eq!(once, again, "identical runs must agree bit for bit");
    let threaded = run(4);
    assert_eq!(once, threaded, "thread count must not change results");
}

#[test]
fn tuple_ablation_keeps_ceil_percent_with_floor_one() {
    let mk_rows = |w: &WordId, count: usize| -> Vec<TrainingTuple> {
        (0..count)
            .map(|t| TrainingTuple {
                head: w.clone(),
                args: TupleArgs::Noun(format!("n{t}")),
                holistic_key: format!("{}_{t}", w.surface()),
                occurrence_count: 5,
            })
            .collect()
    };

    let w0 = adj("w0");
    let w1 = adj("w1");
    let w2 = adj("w2");
    let mut map = BTreeMap::new();
    map.insert(w0.clone(), mk_rows(&w0, 500));
    map.insert(w1.clone(), mk_rows(&w1, 1));
    map.insert(w2.clone(), mk_rows(&w2, 297));

    let thinned = ablate_tuples(&map, 5.0, 7).unwrap();
    assert_eq!(thinned[&w0].len(), 25); // ceil(0.05 * 500)
    assert_eq!(thinned[&w1].len(), 1); // floor of one tuple
    assert_eq!(thinned[&w2].len(), 15); // ceil(0.05 * 297) = ceil(14.85)

    let one_percent = ablate_tuples(&map, 1.0, 7).unwrap();
    assert_eq!(one_percent[&w0].len(), 5);
    assert_eq!(one_percent[&w1].len(), 1);
    assert_eq!(one_percent[&w2].len(), 3); // ceil(2.97)

    let full = ablate_tuples(&map, 100.0, 7).unwrap();
    assert_eq!(full[&w0].len(), 500);

    // kept tuples are a subset of the originals
    for (w, rows) in &one_percent {
        for row in rows {
            assert!(map[w].contains(row));
        }
    }

    assert!(ablate_tuples(&map, 0.0, 7).is_err());
    assert!(ablate_tuples(&map, 101.0, 7).is_err());
}

#[test]
fn word_ablation_empties_words_but_keeps_them() {
    let mk_rows = |w: &WordId| -> Vec<TrainingTuple> {
        vec![TrainingTuple {
            head: w.clone(),
            args: TupleArgs::Noun("n0".into()),
            holistic_key: format!("{}_0", w.surface()),
            occurrence_count: 5,
        }]
    };
    let mut map = BTreeMap::new();
    for i in 0..10 {
        let w = adj(&format!("w{i}"));
        map.insert(w.clone(), mk_rows(&w));
    }

    let thinned = ablate_words(&map, 30.0, 7).unwrap();
    assert_eq!(thinned.len(), 10, "every word stays in the vocabulary");
    let with_data = thinned.values().filter(|rows| !rows.is_empty()).count();
    assert_eq!(with_data, 3); // ceil(0.3 * 10)

    // determinism
    let again = ablate_words(&map, 30.0, 7).unwrap();
    assert_eq!(thinned, again);
    let different = ablate_words(&map, 30.0, 8).unwrap();
    assert_ne!(thinned, different, "a different seed picks different words");
}

#[test]
fn verb_training_fits_a_planted_tensor() {
    let s_dim = 3;
    let n = 4;
    let mut rng = SeededRng::derive(61, &["planted-verb"]);
    let vocab = vec![
        WordId::new("v0", Pos::Verb).unwrap(),
        WordId::new("v1", Pos::Verb).unwrap(),
    ];
    let mut word_emb = EmbeddingTable::new(2).unwrap();
    word_emb.insert("v0", Vector::new(vec![1.0, 0.0]).unwrap()).unwrap();
    word_emb.insert("v1", Vector::new(vec![0.0, 1.0]).unwrap()).unwrap();
    let graph = build_graph(
        &SimilaritySource::EmbeddingCosine(word_emb),
        &vocab,
        1,
        false,
    )
    .unwrap();

    let mut arg_vectors = EmbeddingTable::new(n).unwrap();
    let mut holistic = EmbeddingTable::new(s_dim).unwrap();
    let mut tuples: BTreeMap<WordId, Vec<TrainingTuple>> = BTreeMap::new();
    let mut truths = BTreeMap::new();
    for w in &vocab {
        let truth = lexfun::DenseTensor3::new(
            s_dim,
            n,
            (0..s_dim * n * n).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let mut rows = Vec::new();
        for t in 0..80 {
            let subj_key = format!("{}_s{t}", w.surface());
            let obj_key = format!("{}_o{t}", w.surface());
            let subj = random_vector(&mut rng, n);
            let obj = random_vector(&mut rng, n);
            let target = truth.bilinear_apply(&subj, &obj).unwrap();
            let phrase_key = format!("{}_p{t}", w.surface());
            arg_vectors.insert(&subj_key, subj).unwrap();
            arg_vectors.insert(&obj_key, obj).unwrap();
            holistic.insert(&phrase_key, target).unwrap();
            rows.push(TrainingTuple {
                head: w.clone(),
                args: TupleArgs::SubjectObject(subj_key, obj_key),
                holistic_key: phrase_key,
                occurrence_count: 5,
            });
        }
        tuples.insert(w.clone(), rows);
        truths.insert(w.clone(), truth);
    }

    let mut objective = ObjectiveConfig::new(0.0, 0.0, 1, Representation::Full).unwrap();
    objective.l2_lambda = 0.0;
    let mut config = TrainConfig::new(objective, 61);
    config.batch_mode = BatchMode::Minibatch(20);

    let (store, report) = fit(&vocab, &tuples, &graph, &arg_vectors, &holistic, &config).unwrap();
    for w in &vocab {
        let flat = store.get(w).unwrap().to_flat();
        let truth = &truths[w];
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, b) in flat.iter().zip(truth.values()) {
            num += (a - b) * (a - b);
            den += b * b;
        }
        let err = (num / den).sqrt();
        assert!(err < 0.10, "'{w}' recovered with relative error {err}");
        // verbs carve out a validation split when they have enough tuples
        let record = report.records.get(w).unwrap();
        assert!(record.final_val_loss.is_some(), "80 tuples warrant a validation split");
    }
}

#[test]
fn reports_render_as_tsv() {
    let planted = planted_adjectives(67, 3, 2, 10);
    let mut config = isolated_config(67);
    config.max_iterations = 5;
    let (_, report) = fit(
        &planted.vocab,
        &planted.tuples,
        &planted.graph,
        &planted.arg_vectors,
        &planted.holistic,
        &config,
    )
    .unwrap();
    let tsv = report.to_tsv();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines.len(), planted.vocab.len(), "one line per word");
    for line in &lines {
        assert_eq!(line.split('\t').count(), 5);
    }
}
