//! Parameter-shape behaviour: hand-checked values, independent
//! reconstruction oracles, and algebraic invariants.

use lexfun::{
    cosine, DenseMatrix, DenseTensor3, LowRankMatrix, LowRankTensor3, SeededRng, Vector,
};
use proptest::prelude::*;

fn random_vector(rng: &mut SeededRng, n: usize) -> Vector {
    Vector::new((0..n).map(|_| rng.uniform(-2.0, 2.0)).collect()).unwrap()
}

fn random_matrix(rng: &mut SeededRng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::new(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.uniform(-1.0, 1.0)).collect(),
    )
    .unwrap()
}

#[test]
fn matvec_matches_hand_value() {
    let m = DenseMatrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let y = m.matvec(&Vector::new(vec![1.0, 1.0]).unwrap()).unwrap();
    assert_eq!(y.values(), &[3.0, 7.0]);
}

#[test]
fn bilinear_contraction_matches_hand_value() {
    // V[k,i,j] = 1..8 in (k,i,j) order, s=(1,2), o=(3,4):
    // result[k] = sum_ij V[k,i,j] * s_i * o_j -> (61, 145) by hand.
    let t = DenseTensor3::new(2, 2, (1..=8).map(f64::from).collect()).unwrap();
    let s = Vector::new(vec![1.0, 2.0]).unwrap();
    let o = Vector::new(vec![3.0, 4.0]).unwrap();
    let y = t.bilinear_apply(&s, &o).unwrap();
    assert_eq!(y.values(), &[61.0, 145.0]);
}

#[test]
fn frobenius_distance_matches_hand_value() {
    let a = DenseMatrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let b = DenseMatrix::zeros(2, 2).unwrap();
    assert!((a.frobenius_distance(&b).unwrap() - 30f64.sqrt()).abs() < 1e-15);
    assert_eq!(a.frobenius_norm_sq(), 30.0);
}

#[test]
fn cosine_conventions() {
    let a = Vector::new(vec![1.0, 0.0]).unwrap();
    let b = Vector::new(vec![2.0, 0.0]).unwrap();
    let z = Vector::new(vec![0.0, 0.0]).unwrap();
    let neg = Vector::new(vec![-3.0, 0.0]).unwrap();
    assert_eq!(cosine(&a, &b).unwrap(), 1.0);
    assert_eq!(cosine(&a, &z).unwrap(), 0.0);
    assert_eq!(cosine(&a, &neg).unwrap(), -1.0);
    assert!(cosine(&a, &Vector::new(vec![1.0]).unwrap()).is_err());
}

#[test]
fn unfurl_is_row_major() {
    let m = DenseMatrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    assert_eq!(m.unfurl().values(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
}

#[test]
fn low_rank_matrix_action_matches_hand_value() {
    // U = I, V = diag(2,3): action is U^T (V n) = (2 n1, 3 n2).
    let u = DenseMatrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let v = DenseMatrix::new(2, 2, vec![2.0, 0.0, 0.0, 3.0]).unwrap();
    let m = LowRankMatrix::new(u, v).unwrap();
    let y = m.apply(&Vector::new(vec![1.0, 1.0]).unwrap()).unwrap();
    assert_eq!(y.values(), &[2.0, 3.0]);
}

#[test]
fn low_rank_tensor_reconstruction_matches_independent_triple_loop() {
    let mut rng = SeededRng::derive(31, &["reconstruct-oracle"]);
    for (rank, s_dim, n_dim) in [(1, 2, 3), (2, 3, 2), (3, 4, 4)] {
        let p = random_matrix(&mut rng, rank, s_dim);
        let q = random_matrix(&mut rng, rank, n_dim);
        let r = random_matrix(&mut rng, rank, n_dim);
        let t = LowRankTensor3::new(p.clone(), q.clone(), r.clone()).unwrap();
        let dense = t.reconstruct();
        for k in 0..s_dim {
            for i in 0..n_dim {
                for j in 0..n_dim {
                    let mut expect = 0.0;
                    for rr in 0..rank {
                        expect += p.get(rr, k) * q.get(rr, i) * r.get(rr, j);
                    }
                    assert!(
                        (dense.get(k, i, j) - expect).abs() < 1e-12,
                        "entry ({k},{i},{j}) diverges from the independent sum"
                    );
                }
            }
        }
    }
}

#[test]
fn low_rank_matrix_reconstruction_matches_independent_double_loop() {
    let mut rng = SeededRng::derive(32, &["reconstruct-oracle"]);
    let u = random_matrix(&mut rng, 3, 4);
    let v = random_matrix(&mut rng, 3, 4);
    let m = LowRankMatrix::new(u.clone(), v.clone()).unwrap();
    let dense = m.reconstruct();
    for i in 0..4 {
        for j in 0..4 {
            let mut expect = 0.0;
            for r in 0..3 {
                expect += u.get(r, i) * v.get(r, j);
            }
            assert!((dense.get(i, j) - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn low_rank_actions_match_dense_reconstructions() {
    let mut rng = SeededRng::derive(33, &["equivalence"]);
    for trial in 0..20 {
        let rank = 1 + trial % 3;
        let n_dim = 2 + trial % 4;
        let s_dim = 2 + trial % 3;

        let m = LowRankMatrix::new(
            random_matrix(&mut rng, rank, n_dim),
            random_matrix(&mut rng, rank, n_dim),
        )
        .unwrap();
        let noun = random_vector(&mut rng, n_dim);
        let lr = m.apply(&noun).unwrap();
        let dense = m.reconstruct().matvec(&noun).unwrap();
        for (a, b) in lr.values().iter().zip(dense.values()) {
            assert!((a - b).abs() < 1e-10);
        }

        let t = LowRankTensor3::new(
            random_matrix(&mut rng, rank, s_dim),
            random_matrix(&mut rng, rank, n_dim),
            random_matrix(&mut rng, rank, n_dim),
        )
        .unwrap();
        let subj = random_vector(&mut rng, n_dim);
        let obj = random_vector(&mut rng, n_dim);
        let lr = t.apply(&subj, &obj).unwrap();
        let dense = t.reconstruct().bilinear_apply(&subj, &obj).unwrap();
        for (a, b) in lr.values().iter().zip(dense.values()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn parameter_counts() {
    let mk = |rows, cols| DenseMatrix::zeros(rows, cols).unwrap();
    let m = LowRankMatrix::new(mk(3, 7), mk(3, 7)).unwrap();
    assert_eq!(m.param_count(), 2 * 7 * 3);
    let t = LowRankTensor3::new(mk(3, 5), mk(3, 7), mk(3, 7)).unwrap();
    assert_eq!(t.param_count(), 3 * (5 + 2 * 7));
}

#[test]
fn constructors_reject_bad_input() {
    assert!(Vector::new(vec![]).is_err());
    assert!(Vector::new(vec![f64::NAN]).is_err());
    assert!(Vector::new(vec![f64::INFINITY, 0.0]).is_err());
    assert!(DenseMatrix::new(2, 2, vec![1.0; 3]).is_err());
    assert!(DenseMatrix::new(0, 2, vec![]).is_err());
    assert!(DenseTensor3::new(2, 2, vec![1.0; 7]).is_err());
    // factor shape mismatch: U and V must agree on rank and width
    let u = DenseMatrix::zeros(2, 3).unwrap();
    let v = DenseMatrix::zeros(3, 3).unwrap();
    assert!(LowRankMatrix::new(u, v).is_err());
    // Q and R must share the noun dimension
    let p = DenseMatrix::zeros(2, 4).unwrap();
    let q = DenseMatrix::zeros(2, 3).unwrap();
    let r = DenseMatrix::zeros(2, 5).unwrap();
    assert!(LowRankTensor3::new(p, q, r).is_err());
}

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-5.0..5.0f64, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cosine_is_symmetric_and_bounded(
        a in finite_vec(6),
        b in finite_vec(6),
    ) {
        let va = Vector::new(a).unwrap();
        let vb = Vector::new(b).unwrap();
        let ab = cosine(&va, &vb).unwrap();
        let ba = cosine(&vb, &va).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!(ab.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn matvec_is_linear(
        m_vals in finite_vec(12),
        x in finite_vec(4),
        y in finite_vec(4),
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
    ) {
        let m = DenseMatrix::new(3, 4, m_vals).unwrap();
        let vx = Vector::new(x.clone()).unwrap();
        let vy = Vector::new(y.clone()).unwrap();
        let mixed: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| a * xi + b * yi).collect();
        let lhs = m.matvec(&Vector::new(mixed).unwrap()).unwrap();
        let mx = m.matvec(&vx).unwrap();
        let my = m.matvec(&vy).unwrap();
        for ((l, gx), gy) in lhs.values().iter().zip(mx.values()).zip(my.values()) {
            prop_assert!((l - (a * gx + b * gy)).abs() < 1e-9);
        }
    }

    #[test]
    fn contraction_is_bilinear_in_each_argument(
        t_vals in finite_vec(2 * 3 * 3),
        s1 in finite_vec(3),
        s2 in finite_vec(3),
        o in finite_vec(3),
        c in -3.0..3.0f64,
    ) {
        let t = DenseTensor3::new(2, 3, t_vals).unwrap();
        let vo = Vector::new(o).unwrap();
        let mixed: Vec<f64> = s1.iter().zip(&s2).map(|(a, b)| a + c * b).collect();
        let lhs = t.bilinear_apply(&Vector::new(mixed).unwrap(), &vo).unwrap();
        let y1 = t.bilinear_apply(&Vector::new(s1).unwrap(), &vo).unwrap();
        let y2 = t.bilinear_apply(&Vector::new(s2).unwrap(), &vo).unwrap();
        for ((l, a), b) in lhs.values().iter().zip(y1.values()).zip(y2.values()) {
            prop_assert!((l - (a + c * b)).abs() < 1e-9);
        }
    }

    #[test]
    fn unfurled_length_matches_entry_count(
        s_dim in 1usize..4,
        n_dim in 1usize..4,
    ) {
        let t = DenseTensor3::zeros(s_dim, n_dim).unwrap();
        prop_assert_eq!(t.unfurl().len(), s_dim * n_dim * n_dim);
    }
}
