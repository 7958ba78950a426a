#![allow(dead_code)]

use diaf::dense::DenseMatrix;
use diaf::sparse::{SparseMatrix, SubspacePattern};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_na(a: &SparseMatrix) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.n_rows(), a.n_cols());
    for j in 0..a.n_cols() {
        for (i, v) in a.col_iter(j) {
            m[(i, j)] = v;
        }
    }
    m
}

pub fn dense_to_na(a: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

pub fn na_to_dense(a: &DMatrix<f64>) -> DenseMatrix {
    DenseMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

pub fn random_dense(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Singular values in decreasing order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

pub fn smallest_singular_value(m: &DMatrix<f64>) -> f64 {
    let s = singular_values(m);
    if m.nrows() < m.ncols() {
        0.0
    } else {
        s.last().copied().unwrap_or(0.0)
    }
}

/// Random sparse matrix with a nonzero diagonal and roughly `per_col`
/// extra entries per column, regenerated until well conditioned.
pub fn random_sparse_nonsingular(n: usize, per_col: usize, rng: &mut ChaCha8Rng) -> SparseMatrix {
    loop {
        let mut t = Vec::new();
        for j in 0..n {
            let mag = rng.gen_range(1.0..3.0);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            t.push((j, j, sign * mag));
            for _ in 0..per_col {
                let i = rng.gen_range(0..n);
                if i != j {
                    t.push((i, j, rng.gen_range(-1.0..1.0)));
                }
            }
        }
        let a = SparseMatrix::from_triplets(n, n, &t).unwrap();
        let s = singular_values(&to_na(&a));
        if s.last().unwrap() / s[0] > 1e-6 {
            return a;
        }
    }
}

/// Dense random nonsingular matrix as a sparse one.
pub fn random_dense_nonsingular(n: usize, rng: &mut ChaCha8Rng) -> SparseMatrix {
    loop {
        let m = random_dense(n, n, rng);
        let s = singular_values(&m);
        if s.last().unwrap() / s[0] > 1e-4 {
            return SparseMatrix::from_dense(&na_to_dense(&m));
        }
    }
}

/// Random orthogonal matrix from the QR factorization of a random one.
pub fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> SparseMatrix {
    let q = random_dense(n, n, rng).qr().q();
    SparseMatrix::from_dense(&na_to_dense(&q))
}

/// Each column: the diagonal plus `extra` random distinct rows.
pub fn random_pattern(n: usize, extra: usize, rng: &mut ChaCha8Rng) -> SubspacePattern {
    let cols = (0..n)
        .map(|j| {
            let mut others: Vec<usize> = (0..n).filter(|&i| i != j).collect();
            others.shuffle(rng);
            let mut c: Vec<usize> = others.into_iter().take(extra).collect();
            c.push(j);
            c.sort_unstable();
            c
        })
        .collect();
    SubspacePattern::new(n, cols).unwrap()
}

pub fn full_pattern_single_block(n: usize) -> SubspacePattern {
    SubspacePattern::full(n)
}

/// `W V⁻¹`, or `None` when `V` is numerically singular.
pub fn w_vinv(w: &SparseMatrix, v: &SparseMatrix) -> Option<DMatrix<f64>> {
    let vinv = to_na(v).try_inverse()?;
    Some(to_na(w) * vinv)
}

/// Outcome of checking `‖AWV⁻¹−I‖_F/‖V⁻¹‖₂ ≤ nrm ≤ ‖AWV⁻¹−I‖_F ‖V‖₂`.
#[derive(Debug, Clone, Copy)]
pub struct BoundCheck {
    pub lower: f64,
    pub nrm: f64,
    pub upper: f64,
    pub dense_nrm: f64,
    /// `‖AW‖_F`, the scale of the rounding in every quantity above.
    pub scale: f64,
}

impl BoundCheck {
    /// Both inequalities and the agreement with the dense residual, up to
    /// `rel` times the size of the terms involved.
    pub fn holds(&self, rel: f64) -> bool {
        let slack = rel * (self.nrm + self.scale);
        self.lower <= self.nrm + slack && self.nrm <= self.upper + slack && (self.nrm - self.dense_nrm).abs() <= slack
    }
}

/// Dense evaluation of both sides; `None` if `V` is singular.
pub fn norm_bounds(a: &SparseMatrix, w: &SparseMatrix, v: &SparseMatrix, nrm: f64) -> Option<BoundCheck> {
    let n = a.n_cols();
    let ad = to_na(a);
    let wd = to_na(w);
    let vd = to_na(v);
    let vinv = vd.clone().try_inverse()?;
    if !vinv.iter().all(|x| x.is_finite()) {
        return None;
    }
    let aw = &ad * &wd;
    let e = &aw * &vinv - DMatrix::<f64>::identity(n, n);
    let ef = e.norm();
    Some(BoundCheck {
        lower: ef / spectral_norm(&vinv),
        nrm,
        upper: ef * spectral_norm(&vd),
        dense_nrm: (&aw - &vd).norm(),
        scale: aw.norm(),
    })
}

/// Orthonormal basis of the range of `m` (columns of `U` above a relative
/// rank tolerance).
pub fn range_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.ncols() == 0 || m.nrows() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.unwrap();
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-12 * smax.max(1e-300) && smax > 0.0)
        .collect();
    DMatrix::from_fn(m.nrows(), keep.len(), |i, c| u[(i, keep[c])])
}

/// Columns of `a` listed in `cols`, as a dense `n × k` matrix.
pub fn dense_columns(a: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), cols.len(), |i, c| a[(i, cols[c])])
}

/// Rows of `m` listed in `rows`.
pub fn dense_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |r, c| m[(rows[r], c)])
}

pub fn random_unit(k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let u: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return u.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn norm_of(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    (m * nalgebra::DVector::from_column_slice(x)).norm()
}

/// 2D convection-diffusion on an `nx × ny` grid with the five-point stencil
/// and upwinded convection of strength `beta`.
pub fn convection_diffusion(nx: usize, ny: usize, beta: f64) -> SparseMatrix {
    let h = 1.0 / (nx + 1) as f64;
    let idx = |i: usize, j: usize| j * nx + i;
    let mut t = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let k = idx(i, j);
            let c = beta * h;
            t.push((k, k, 4.0 + c));
            if i > 0 {
                t.push((k, idx(i - 1, j), -1.0 - c));
            }
            if i + 1 < nx {
                t.push((k, idx(i + 1, j), -1.0));
            }
            if j > 0 {
                t.push((k, idx(i, j - 1), -1.0));
            }
            if j + 1 < ny {
                t.push((k, idx(i, j + 1), -1.0));
            }
        }
    }
    SparseMatrix::from_triplets(nx * ny, nx * ny, &t).unwrap()
}
