mod common;

use common::*;
use diaf::dense::DenseMatrix;
use diaf::factor::{diaf_q, diaf_q_scaled, diaf_s, stabilize_column, StabilizationPolicy};
use diaf::preprocess::{block_pattern, BlockStructure, PatternShape};
use diaf::sparse::{SparseMatrix, SubspacePattern};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use rand::Rng;

const OFF: StabilizationPolicy = StabilizationPolicy {
    enabled: false,
    threshold: 1e-2,
    r: 2.0,
};

fn assert_bounds(a: &SparseMatrix, w: &SparseMatrix, v: &SparseMatrix, nrm: f64) {
    if let Some(b) = norm_bounds(a, w, v, nrm) {
        assert!(b.holds(1e-10), "norm bounds violated: {b:?}");
    }
}

#[test]
fn diaf_q_columns_maximize_m_j() {
    let mut rng = rng(11);
    for _ in 0..5 {
        let n = 15;
        let a = random_sparse_nonsingular(n, 3, &mut rng);
        let wp = random_pattern(n, 2, &mut rng);
        let vp = random_pattern(n, 3, &mut rng);
        let f = diaf_q(&a, &wp, &vp, &OFF).unwrap();
        let ad = to_na(&a);
        for j in 0..n {
            let q = range_basis(&dense_columns(&ad, wp.col(j)));
            let pos = vp.col(j);
            let m = dense_rows(&q, pos).transpose();
            let vj: Vec<f64> = pos.iter().map(|&i| f.v.get(i, j)).collect();
            let best = norm_of(&m, &vj);
            assert!((best - spectral_norm(&m)).abs() < 1e-12);
            for _ in 0..50 {
                let u = random_unit(pos.len(), &mut rng);
                assert!(norm_of(&m, &u) <= best + 1e-12);
            }
        }
        assert_bounds(&a, &f.w, &f.v, f.nrm);
    }
}

#[test]
fn diaf_s_columns_minimize_reduced_block() {
    let mut rng = rng(12);
    for _ in 0..5 {
        let n = 15;
        let a = random_sparse_nonsingular(n, 3, &mut rng);
        let wp = random_pattern(n, 2, &mut rng);
        let vp = random_pattern(n, 1, &mut rng);
        let f = diaf_s(&a, &wp, &vp).unwrap();
        let ad = to_na(&a);
        for j in 0..n {
            let aj = dense_columns(&ad, wp.col(j));
            let kept: Vec<usize> = (0..n).filter(|i| vp.col(j).binary_search(i).is_err()).collect();
            let ahat = dense_rows(&aj, &kept);
            let wj: Vec<f64> = wp.col(j).iter().map(|&i| f.w.get(i, j)).collect();
            let got = norm_of(&ahat, &wj);
            assert!((got - smallest_singular_value(&ahat)).abs() < 1e-12);
            for _ in 0..50 {
                let u = random_unit(wj.len(), &mut rng);
                assert!(norm_of(&ahat, &u) >= got - 1e-12);
            }
            assert!((wj.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-13);
            // sign convention
            let awj: f64 = wp.col(j).iter().map(|&c| a.get(j, c) * f.w.get(c, j)).sum();
            assert!(awj >= 0.0 || awj.abs() < 1e-15);
        }
        assert_bounds(&a, &f.w, &f.v, f.nrm);
    }
}

#[test]
fn orthogonal_matrix_is_recovered_exactly() {
    let mut rng = rng(13);
    let a = random_orthogonal(10, &mut rng);
    let wp = SubspacePattern::from_matrix(&a.transpose());
    let f = diaf_q(&a, &wp, &SubspacePattern::diagonal(10), &OFF).unwrap();
    let prod = to_na(&a) * w_vinv(&f.w, &f.v).unwrap();
    assert!((prod - DMatrix::<f64>::identity(10, 10)).norm() < 1e-12);
    assert!(f.nrm < 1e-12);
}

#[test]
fn full_single_block_patterns_are_exact() {
    let mut rng = rng(14);
    for n in 1..=6 {
        let a = random_dense_nonsingular(n, &mut rng);
        let full = SubspacePattern::full(n);
        for vp in [SubspacePattern::diagonal(n), random_pattern(n, n / 2, &mut rng)] {
            let f = diaf_q(&a, &full, &vp, &OFF).unwrap();
            assert!(f.nrm <= 1e-12, "n={n} nrm={}", f.nrm);
        }
    }
}

#[test]
fn column_targets_do_not_change_the_product() {
    let mut rng = rng(15);
    let n = 20;
    let a = random_sparse_nonsingular(n, 3, &mut rng);
    let wp = random_pattern(n, 3, &mut rng);
    let vp = random_pattern(n, 2, &mut rng);
    let targets: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..10.0)).collect();
    let f1 = diaf_q(&a, &wp, &vp, &OFF).unwrap();
    let f2 = diaf_q_scaled(&a, &wp, &vp, &OFF, &targets).unwrap();
    let p1 = w_vinv(&f1.w, &f1.v).unwrap();
    let p2 = w_vinv(&f2.w, &f2.v).unwrap();
    assert!((&p1 - &p2).norm() <= 1e-10 * p1.norm());
    for j in 0..n {
        assert!((f2.v.col(j).norm2() - targets[j]).abs() < 1e-12 * targets[j]);
    }
}

/// Global minimizer of `‖AW − V‖_F` over `‖V‖_F = 1`, computed from the
/// whole `n²`-dimensional problem. Returns `W V⁻¹` for a generic point of
/// the minimizing eigenspace.
fn global_minimizer_product(
    a: &SparseMatrix,
    wp: &SubspacePattern,
    vp: &SubspacePattern,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Option<DMatrix<f64>> {
    let n = a.n_cols();
    let ad = to_na(a);
    let kw: usize = wp.nnz();
    let kv: usize = vp.nnz();
    let mut b = DMatrix::<f64>::zeros(n * n, kw);
    let mut e = DMatrix::<f64>::zeros(n * n, kv);
    let (mut cw, mut cv) = (0, 0);
    let mut w_index = Vec::new();
    let mut v_index = Vec::new();
    for j in 0..n {
        for &c in wp.col(j) {
            for i in 0..n {
                b[(j * n + i, cw)] = ad[(i, c)];
            }
            w_index.push((c, j));
            cw += 1;
        }
        for &i in vp.col(j) {
            e[(j * n + i, cv)] = 1.0;
            v_index.push((i, j));
            cv += 1;
        }
    }
    let u = range_basis(&b);
    let resid = &e - &u * (u.transpose() * &e);
    let g = resid.transpose() * &resid;
    let eig = SymmetricEigen::new(g);
    let lmin = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let space: Vec<usize> = (0..kv).filter(|&i| eig.eigenvalues[i] <= lmin + 1e-10).collect();
    let mut x = DVector::<f64>::zeros(kv);
    for &i in &space {
        x += eig.eigenvectors.column(i) * rng.gen_range(0.5..1.5);
    }
    x /= x.norm();
    let y = b.clone().svd(true, true).solve(&(&e * &x), 1e-13).ok()?;
    let mut w = DMatrix::<f64>::zeros(n, n);
    let mut v = DMatrix::<f64>::zeros(n, n);
    for (k, &(i, j)) in w_index.iter().enumerate() {
        w[(i, j)] = y[k];
    }
    for (k, &(i, j)) in v_index.iter().enumerate() {
        v[(i, j)] = x[k];
    }
    let vinv = v.try_inverse()?;
    Some(w * vinv)
}

#[test]
fn nonsingular_global_minimizer_coincides() {
    let mut rng = rng(16);
    let mut cases: Vec<(SparseMatrix, SubspacePattern, SubspacePattern)> = Vec::new();
    for n in [3, 4, 5] {
        let a = random_dense_nonsingular(n, &mut rng);
        cases.push((a, SubspacePattern::full(n), SubspacePattern::diagonal(n)));
    }
    // block diagonal A, W spanning the blocks, V inside the blocks
    let blocks = BlockStructure::from_sizes(&[3, 3]).unwrap();
    let bd = block_pattern(&blocks, PatternShape::BlockDiagonal);
    let mut t = Vec::new();
    for j in 0..6 {
        for &i in bd.col(j) {
            t.push((i, j, rng.gen_range(-1.0..1.0) + if i == j { 3.0 } else { 0.0 }));
        }
    }
    let a = SparseMatrix::from_triplets(6, 6, &t).unwrap();
    let vp = SubspacePattern::new(6, vec![vec![0, 1], vec![1], vec![0, 2], vec![3], vec![4, 5], vec![3, 5]]).unwrap();
    cases.push((a, bd.clone(), vp));
    // upper triangular A with an upper triangular W
    let mut t = Vec::new();
    for j in 0..5 {
        for i in 0..=j {
            if i == j || rng.gen_bool(0.6) {
                t.push((i, j, rng.gen_range(-1.0..1.0) + if i == j { 2.0 } else { 0.0 }));
            }
        }
    }
    let a = SparseMatrix::from_triplets(5, 5, &t).unwrap();
    let upper = SubspacePattern::new(5, (0..5).map(|j| (0..=j).collect()).collect()).unwrap();
    cases.push((a, upper, SubspacePattern::diagonal(5)));

    for (a, wp, vp) in cases {
        let f = diaf_q(&a, &wp, &vp, &OFF).unwrap();
        let ours = w_vinv(&f.w, &f.v).unwrap();
        let global = global_minimizer_product(&a, &wp, &vp, &mut rng).expect("global minimizer is nonsingular");
        assert!((&ours - &global).norm() <= 1e-10 * global.norm().max(1.0));
        assert_bounds(&a, &f.w, &f.v, f.nrm);
    }
}

#[test]
fn stabilized_direction_does_not_depend_on_r() {
    let mut rng = rng(17);
    for _ in 0..20 {
        let (k, l) = (4, 6);
        let positions: Vec<usize> = vec![0, 1, 3, 4, 6, 7];
        let j = 6;
        let qt = na_to_dense(&random_dense(k, l, &mut rng));
        let base = stabilize_column(&qt, &positions, j, l, 1.0).unwrap();
        for r in [0.5, 2.0, 10.0] {
            let out = stabilize_column(&qt, &positions, j, l, r).unwrap();
            for (c, &p) in positions.iter().enumerate() {
                if p == j {
                    assert_eq!(out[c], r);
                } else {
                    assert_eq!(out[c], base[c]);
                }
            }
        }
        // positions after j are never used
        assert_eq!(base[5], 0.0);
        let unit: f64 = base.iter().enumerate().filter(|(c, _)| *c != 4).map(|(_, x)| x * x).sum();
        assert!((unit - 1.0).abs() < 1e-12);
    }
}

#[test]
fn stabilization_keeps_largest_admissible_columns() {
    // l_j − 1 = 1: only the largest-norm earlier column is kept
    let qt = DenseMatrix::from_rows(&[&[0.1, 0.0, 2.0, 0.3], &[0.0, 0.5, 0.0, 0.4]]);
    let out = stabilize_column(&qt, &[0, 1, 2, 5], 5, 2, 2.0).unwrap();
    assert_eq!(out, vec![0.0, 0.0, 1.0, 2.0]);
}

#[test]
fn stabilization_lifts_small_diagonals() {
    // column 1 of A points mostly off the diagonal
    let a = SparseMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (0, 1, 1.0), (1, 1, 1e-4), (2, 2, 1.0), (1, 2, 0.5)]).unwrap();
    let upper = SubspacePattern::new(3, vec![vec![0], vec![0, 1], vec![0, 1, 2]]).unwrap();
    let d = SubspacePattern::diagonal(3);
    let plain = diaf_q(&a, &d, &upper, &OFF).unwrap();
    assert!(plain.v.get(1, 1).abs() < 1e-2);
    let pol = StabilizationPolicy::enabled(1e-2, 2.0).unwrap();
    let stab = diaf_q(&a, &d, &upper, &pol).unwrap();
    assert_eq!(stab.stab_count, 1);
    assert!(stab.columns[1].stabilized);
    assert_eq!(stab.v.get(1, 1), 2.0);
    assert!((stab.v.col(1).norm2() - 5f64.sqrt()).abs() < 1e-14);
    assert_bounds(&a, &stab.w, &stab.v, stab.nrm);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let mut rng = rng(18);
    let a = random_sparse_nonsingular(60, 4, &mut rng);
    let wp = random_pattern(60, 4, &mut rng);
    let vp = random_pattern(60, 3, &mut rng);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| (diaf_q(&a, &wp, &vp, &OFF).unwrap(), diaf_s(&a, &wp, &vp).unwrap()))
    };
    let (q1, s1) = run(1);
    let (q4, s4) = run(4);
    assert_eq!(q1.w, q4.w);
    assert_eq!(q1.v, q4.v);
    assert_eq!(q1.nrm.to_bits(), q4.nrm.to_bits());
    assert_eq!(s1.w, s4.w);
    assert_eq!(s1.v, s4.v);
    assert_eq!(s1.nrm.to_bits(), s4.nrm.to_bits());
}

#[test]
fn rank_deficient_columns_are_flagged_not_fatal() {
    // columns 0 and 1 are parallel
    let a = SparseMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (1, 0, 1.0), (0, 1, 2.0), (1, 1, 2.0), (2, 2, 1.0), (1, 2, 1.0)]).unwrap();
    let wp = SubspacePattern::new(3, vec![vec![0, 1], vec![0, 1], vec![2]]).unwrap();
    let f = diaf_q(&a, &wp, &SubspacePattern::diagonal(3), &OFF).unwrap();
    assert!(f.columns[0].rank_deficient);
    assert!(f.rank_deficient_count() >= 2);
    // minimum-norm solution: equal split between the parallel columns
    let (w0, w1) = (f.w.get(0, 0), f.w.get(1, 0));
    assert!((w1 - 2.0 * w0).abs() < 1e-12);
}

#[test]
fn zero_m_falls_back_to_unit_column() {
    // column 0 of A has no entry in the rows allowed for v_0
    let a = SparseMatrix::from_triplets(2, 2, &[(1, 0, 1.0), (0, 1, 1.0)]).unwrap();
    let f = diaf_q(&a, &SubspacePattern::diagonal(2), &SubspacePattern::diagonal(2), &OFF).unwrap();
    assert!(f.columns[0].zero_m_fallback);
    assert_eq!(f.v.get(0, 0), 1.0);
    assert_eq!(f.fallback_count(), 2);
}

fn small_instance() -> impl Strategy<Value = (usize, u64)> {
    (2usize..12, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn factor_pairs_respect_patterns_and_norms((n, seed) in small_instance()) {
        let mut rng = rng(seed);
        let a = random_sparse_nonsingular(n, 2, &mut rng);
        let wp = random_pattern(n, (n / 3).min(3), &mut rng);
        let vp = random_pattern(n, (n / 4).min(2), &mut rng);

        let q = diaf_q(&a, &wp, &vp, &OFF).unwrap();
        prop_assert!(q.w.conforms_to(&wp));
        prop_assert!(q.v.conforms_to(&vp));
        for j in 0..n {
            prop_assert!((q.v.col(j).norm2() - 1.0).abs() < 1e-13);
        }
        let res: f64 = q.residuals().iter().map(|r| r * r).sum::<f64>().sqrt();
        prop_assert!((res - q.nrm).abs() <= 1e-12 * q.nrm.max(1.0));
        assert_bounds(&a, &q.w, &q.v, q.nrm);

        let s = diaf_s(&a, &wp, &vp).unwrap();
        prop_assert!(s.w.conforms_to(&wp));
        prop_assert!(s.v.conforms_to(&vp));
        for j in 0..n {
            prop_assert!((s.w.col(j).norm2() - 1.0).abs() < 1e-13);
        }
        assert_bounds(&a, &s.w, &s.v, s.nrm);

        let pol = StabilizationPolicy::enabled(0.3, 2.0).unwrap();
        let st = diaf_q(&a, &wp, &vp, &pol).unwrap();
        for j in 0..n {
            let norm = st.v.col(j).norm2();
            if st.columns[j].stabilized {
                prop_assert!(norm <= (4.0f64 + 1.0).sqrt() + 1e-12);
                prop_assert_eq!(st.v.get(j, j), 2.0);
            } else {
                prop_assert!((norm - 1.0).abs() < 1e-13);
                prop_assert!(st.v.get(j, j) >= 0.3);
            }
        }
    }
}
