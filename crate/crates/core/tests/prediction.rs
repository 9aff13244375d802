//! Matrix-prediction tensor behaviour: linearity, gradient correctness,
//! slice selection by basis vectors, and planted-tensor recovery with
//! held-out generalization.

use std::collections::BTreeMap;

use lexfun::{
    glf_gradient, glf_loss, glf_predict, glf_train, DenseMatrix, EmbeddingTable, GlfConfig,
    GlfTensor, Pos, SeededRng, Vector, WordId,
};

fn adj(surface: &str) -> WordId {
    WordId::new(surface, Pos::Adjective).unwrap()
}

fn random_vector(rng: &mut SeededRng, n: usize) -> Vector {
    Vector::new((0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

fn random_tensor(rng: &mut SeededRng, n: usize, d: usize) -> GlfTensor {
    GlfTensor::new(
        n,
        d,
        (0..n * n * d).map(|_| rng.uniform(-1.0, 1.0)).collect(),
    )
    .unwrap()
}

#[test]
fn prediction_is_linear_in_the_embedding() {
    let mut rng = SeededRng::derive(201, &["linearity"]);
    for _ in 0..20 {
        let g = random_tensor(&mut rng, 4, 5);
        let a = random_vector(&mut rng, 5);
        let b = random_vector(&mut rng, 5);
        let (ca, cb) = (rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0));
        let mixed = Vector::new(
            a.values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| ca * x + cb * y)
                .collect(),
        )
        .unwrap();
        let lhs = glf_predict(&g, &mixed).unwrap();
        let ga = glf_predict(&g, &a).unwrap();
        let gb = glf_predict(&g, &b).unwrap();
        for ((l, x), y) in lhs.values().iter().zip(ga.values()).zip(gb.values()) {
            assert!((l - (ca * x + cb * y)).abs() < 1e-10);
        }
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = SeededRng::derive(203, &["glf-fd"]);
    let n = 3;
    let d = 4;
    let mut adj_vectors = EmbeddingTable::new(d).unwrap();
    let mut pretrained = BTreeMap::new();
    for i in 0..5 {
        let word = adj(&format!("a{i}"));
        adj_vectors.insert(word.surface(), random_vector(&mut rng, d)).unwrap();
        pretrained.insert(
            word,
            DenseMatrix::new(n, n, (0..n * n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap(),
        );
    }
    let g = random_tensor(&mut rng, n, d);
    let analytic = glf_gradient(&g, &pretrained, &adj_vectors).unwrap();

    let h = 1e-5;
    for coord in 0..g.values().len() {
        let mut plus = g.values().to_vec();
        plus[coord] += h;
        let mut minus = g.values().to_vec();
        minus[coord] -= h;
        let lp = glf_loss(&GlfTensor::new(n, d, plus).unwrap(), &pretrained, &adj_vectors).unwrap();
        let lm = glf_loss(&GlfTensor::new(n, d, minus).unwrap(), &pretrained, &adj_vectors).unwrap();
        let fd = (lp - lm) / (2.0 * h);
        let rel = (analytic[coord] - fd).abs() / analytic[coord].abs().max(fd.abs()).max(1.0);
        assert!(rel < 1e-4, "coordinate {coord}: analytic {} vs fd {fd}", analytic[coord]);
    }
}

#[test]
fn zero_targets_stay_exactly_zero() {
    let d = 3;
    let n = 4;
    let mut adj_vectors = EmbeddingTable::new(d).unwrap();
    let mut pretrained = BTreeMap::new();
    let mut rng = SeededRng::derive(207, &["zero"]);
    for i in 0..4 {
        let word = adj(&format!("a{i}"));
        adj_vectors.insert(word.surface(), random_vector(&mut rng, d)).unwrap();
        pretrained.insert(word, DenseMatrix::zeros(n, n).unwrap());
    }
    let (g, report) = glf_train(&pretrained, &adj_vectors, &GlfConfig::default()).unwrap();
    let frob: f64 = g.values().iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(frob < 1e-6, "zero targets from a zero start must stay zero");
    assert_eq!(report.final_loss, 0.0);

    // predictions from the zero tensor are zero matrices
    let predicted = glf_predict(&g, &random_vector(&mut rng, d)).unwrap();
    assert!(predicted.values().iter().all(|v| *v == 0.0));
}

#[test]
fn basis_vectors_select_their_own_slices() {
    // two adjectives whose embeddings are e1 and e2: the loss separates
    // per slice, so training recovers each matrix in its own slice.
    let n = 2;
    let d = 2;
    let mut adj_vectors = EmbeddingTable::new(d).unwrap();
    adj_vectors.insert("first", Vector::new(vec![1.0, 0.0]).unwrap()).unwrap();
    adj_vectors.insert("second", Vector::new(vec![0.0, 1.0]).unwrap()).unwrap();
    let m1 = DenseMatrix::new(n, n, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let m2 = DenseMatrix::new(n, n, vec![-1.0, 0.5, 0.25, -2.0]).unwrap();
    let mut pretrained = BTreeMap::new();
    pretrained.insert(adj("first"), m1.clone());
    pretrained.insert(adj("second"), m2.clone());

    let config = GlfConfig {
        max_iterations: 3000,
        ..GlfConfig::default()
    };
    let (g, _) = glf_train(&pretrained, &adj_vectors, &config).unwrap();

    let p1 = glf_predict(&g, &Vector::new(vec![1.0, 0.0]).unwrap()).unwrap();
    let p2 = glf_predict(&g, &Vector::new(vec![0.0, 1.0]).unwrap()).unwrap();
    for (p, t) in p1.values().iter().zip(m1.values()) {
        assert!((p - t).abs() < 1e-3, "slice 1: {p} vs {t}");
    }
    for (p, t) in p2.values().iter().zip(m2.values()) {
        assert!((p - t).abs() < 1e-3, "slice 2: {p} vs {t}");
    }
}

#[test]
fn planted_tensor_generalizes_to_held_out_adjectives() {
    let n = 6;
    let d = 8;
    let mut rng = SeededRng::derive(211, &["planted-glf"]);
    let truth = random_tensor(&mut rng, n, d);

    let mut adj_vectors = EmbeddingTable::new(d).unwrap();
    let mut pretrained = BTreeMap::new();
    for i in 0..50 {
        let word = adj(&format!("train{i}"));
        let a = random_vector(&mut rng, d);
        let target = glf_predict(&truth, &a).unwrap();
        adj_vectors.insert(word.surface(), a).unwrap();
        pretrained.insert(word, target);
    }

    let config = GlfConfig {
        max_iterations: 4000,
        ..GlfConfig::default()
    };
    let (g, report) = glf_train(&pretrained, &adj_vectors, &config).unwrap();
    assert!(report.final_loss < report.loss_history[0]);

    // held-out adjectives the trainer never saw
    for _ in 0..10 {
        let a = random_vector(&mut rng, d);
        let predicted = glf_predict(&g, &a).unwrap();
        let expected = glf_predict(&truth, &a).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for (p, t) in predicted.values().iter().zip(expected.values()) {
            num += (p - t) * (p - t);
            den += t * t;
        }
        let rel = (num / den).sqrt();
        assert!(rel < 5e-2, "held-out relative error {rel}");
    }
}

#[test]
fn degenerate_prediction_inputs_are_rejected() {
    let d = 3;
    let mut adj_vectors = EmbeddingTable::new(d).unwrap();
    let mut rng = SeededRng::derive(213, &["degenerate"]);
    adj_vectors.insert("solo", random_vector(&mut rng, d)).unwrap();

    // fewer than two pretrained matrices
    let mut single = BTreeMap::new();
    single.insert(adj("solo"), DenseMatrix::zeros(2, 2).unwrap());
    assert!(glf_train(&single, &adj_vectors, &GlfConfig::default()).is_err());

    // a verb sneaking into the pretrained set
    adj_vectors.insert("other", random_vector(&mut rng, d)).unwrap();
    let mut mixed = BTreeMap::new();
    mixed.insert(adj("solo"), DenseMatrix::zeros(2, 2).unwrap());
    mixed.insert(
        WordId::new("other", Pos::Verb).unwrap(),
        DenseMatrix::zeros(2, 2).unwrap(),
    );
    assert!(glf_train(&mixed, &adj_vectors, &GlfConfig::default()).is_err());

    // missing embedding for a pretrained word
    let mut missing = BTreeMap::new();
    missing.insert(adj("solo"), DenseMatrix::zeros(2, 2).unwrap());
    missing.insert(adj("ghost"), DenseMatrix::zeros(2, 2).unwrap());
    assert!(glf_train(&missing, &adj_vectors, &GlfConfig::default()).is_err());

    // non-square or inconsistent matrix dimensions
    let mut ragged = BTreeMap::new();
    ragged.insert(adj("solo"), DenseMatrix::zeros(2, 3).unwrap());
    ragged.insert(adj("other"), DenseMatrix::zeros(2, 2).unwrap());
    assert!(glf_train(&ragged, &adj_vectors, &GlfConfig::default()).is_err());

    // predict with the wrong embedding width
    let g = GlfTensor::zeros(2, 3).unwrap();
    assert!(glf_predict(&g, &Vector::new(vec![1.0, 2.0]).unwrap()).is_err());
}
