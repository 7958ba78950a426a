mod common;

use common::*;
use diaf::sparse::{extract_columns, parse_matrix_market, read_matrix_market, residual_fro, write_matrix_market, SparseMatrix, SparseVec};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;

fn random_sparse(rows: usize, cols: usize, density: f64, seed: u64) -> SparseMatrix {
    let mut rng = rng(seed);
    let mut t = Vec::new();
    for j in 0..cols {
        for i in 0..rows {
            if rng.gen_bool(density) {
                t.push((i, j, rng.gen_range(-5.0..5.0)));
            }
        }
    }
    SparseMatrix::from_triplets(rows, cols, &t).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn extraction_matches_dense_columns(seed in any::<u64>(), n in 1usize..20, density in 0.05f64..0.6) {
        let a = random_sparse(n, n, density, seed);
        let mut rng = rng(seed ^ 1);
        let mut cols: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.4)).collect();
        if cols.is_empty() {
            cols.push(0);
        }
        let sub = extract_columns(&a, &cols).unwrap();
        let dense = dense_columns(&to_na(&a), &cols);
        for i in 0..n {
            match sub.row_position(i) {
                Some(r) => {
                    for c in 0..cols.len() {
                        prop_assert_eq!(sub.dense_block[(r, c)], dense[(i, c)]);
                    }
                }
                None => prop_assert!(dense.row(i).iter().all(|&x| x == 0.0)),
            }
        }
        // every active row carries a nonzero
        for (r, _) in sub.active_rows.iter().enumerate() {
            prop_assert!((0..cols.len()).any(|c| sub.dense_block[(r, c)] != 0.0));
        }
    }

    #[test]
    fn residual_matches_dense(seed in any::<u64>(), n in 1usize..25) {
        let a = random_sparse(n, n, 0.3, seed);
        let w = random_sparse(n, n, 0.2, seed.wrapping_add(7));
        let v = random_sparse(n, n, 0.2, seed.wrapping_add(13));
        let got = residual_fro(&a, &w, &v).unwrap();
        let want = (to_na(&a) * to_na(&w) - to_na(&v)).norm();
        prop_assert!((got - want).abs() <= 1e-13 * want.max(1.0));
    }

    #[test]
    fn products_match_dense(seed in any::<u64>(), m in 1usize..15, k in 1usize..15, n in 1usize..15) {
        let a = random_sparse(m, k, 0.3, seed);
        let b = random_sparse(k, n, 0.3, seed.wrapping_add(3));
        let c = a.matmul(&b).unwrap();
        prop_assert!((to_na(&c) - to_na(&a) * to_na(&b)).amax() <= 1e-12);
        let x: Vec<f64> = (0..k).map(|i| i as f64 - 2.5).collect();
        let y = a.spmv(&x);
        prop_assert!((DVector::from_vec(y) - to_na(&a) * DVector::from_vec(x.clone())).amax() <= 1e-12);
        let xs = SparseVec::from_dense(&x);
        prop_assert!((DVector::from_vec(a.mul_sparse_vec(&xs).to_dense()) - to_na(&a) * DVector::from_vec(x)).amax() <= 1e-12);
        prop_assert_eq!(to_na(&a.transpose()), to_na(&a).transpose());
    }

    #[test]
    fn matrix_market_round_trip(seed in any::<u64>(), m in 1usize..12, n in 1usize..12) {
        let a = random_sparse(m, n, 0.3, seed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.mtx");
        write_matrix_market(&a, &path).unwrap();
        let b = read_matrix_market(&path).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn symmetric_files_expand_to_both_triangles() {
    let text = "%%MatrixMarket matrix coordinate real symmetric\n% comment\n3 3 4\n1 1 2.0\n2 1 -1.0\n3 2 0.5\n3 3 1e1\n";
    let a = parse_matrix_market(text.as_bytes()).unwrap();
    assert_eq!(a.nnz(), 6);
    assert_eq!(a.get(0, 1), -1.0);
    assert_eq!(a.get(1, 0), -1.0);
    assert_eq!(a.get(2, 2), 10.0);
}

#[test]
fn missing_file_is_an_io_error() {
    let e = read_matrix_market("/nonexistent/file.mtx").unwrap_err();
    assert!(matches!(e, diaf::Error::Io { .. }));
}
