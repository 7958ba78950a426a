//! Small dense kernels: Householder QR, one-sided Jacobi SVD, QR/SVD based
//! least squares and partially pivoted LU.
//!
//! Every per-column problem of the factorization is tiny (`k_j` columns, a
//! few hundred rows at most), so these routines favour accuracy and
//! determinism over blocking. All of them are pure and reentrant.

use crate::error::{Error, Result};
use crate::sparse::{ColumnSubmatrix, SparseVec};

/// Relative tolerance below which a diagonal entry of `R` (or a singular
/// value) counts as zero, scaled by the Frobenius norm of the input.
pub const RANK_TOL: f64 = 1e-14;

/// Off-diagonal cosine below which a Jacobi rotation is skipped.
const JACOBI_TOL: f64 = 1e-14;

const JACOBI_MAX_SWEEPS: usize = 30;

/// Column-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from column-major storage.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "column-major buffer has wrong length");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Row-major nested literal, convenient in tests.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        Self::from_fn(m, n, |i, j| rows[i][j])
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            for k in 0..self.cols {
                let b = other[(k, j)];
                if b == 0.0 {
                    continue;
                }
                let src = self.col(k);
                for (o, &a) in out.col_mut(j).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        let mut y = vec![0.0; self.rows];
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            for (yi, &a) in y.iter_mut().zip(self.col(j)) {
                *yi += a * xj;
            }
        }
        y
    }

    /// `selfᵀ · x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows);
        (0..self.cols).map(|j| dot(self.col(j), x)).collect()
    }

    /// Keeps the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self::from_fn(rows.len(), self.cols, |i, j| self[(rows[i], j)])
    }

    /// Keeps the listed columns, in the given order.
    pub fn select_cols(&self, cols: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for &c in cols {
            data.extend_from_slice(self.col(c));
        }
        Self::from_col_major(self.rows, cols.len(), data)
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[j * self.rows + i]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[j * self.rows + i]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    // Scaled accumulation; entries in preprocessed systems can span many
    // orders of magnitude.
    let scale = a.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let ssq: f64 = a.iter().map(|x| (x / scale) * (x / scale)).sum();
    scale * ssq.sqrt()
}

/// Thin QR factors `M = Q R` with `Q` of size `m × k` and `R` upper
/// triangular `k × k` with nonnegative diagonal.
#[derive(Clone, Debug)]
pub struct QrFactors {
    pub q_thin: DenseMatrix,
    pub r: DenseMatrix,
    /// Number of diagonal entries of `R` above `RANK_TOL · ‖M‖_F`.
    pub rank: usize,
}

impl QrFactors {
    pub fn is_full_rank(&self) -> bool {
        self.rank == self.r.ncols()
    }
}

/// Householder QR of a tall matrix (`m ≥ k ≥ 1`).
pub fn qr_householder(m: &DenseMatrix) -> Result<QrFactors> {
    let (rows, k) = (m.nrows(), m.ncols());
    if k == 0 || rows < k {
        return Err(Error::DimensionMismatch(format!(
            "QR needs m >= k >= 1, got {rows}x{k}"
        )));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("QR input"));
    }
    let fro = m.frobenius_norm();
    let mut a = m.clone();
    let mut reflectors: Vec<Option<Vec<f64>>> = Vec::with_capacity(k);

    for j in 0..k {
        let x = &a.col(j)[j..];
        let alpha = norm2(x);
        if alpha == 0.0 {
            reflectors.push(None);
            continue;
        }
        let beta = if x[0] >= 0.0 { -alpha } else { alpha };
        let mut v = x.to_vec();
        v[0] -= beta;
        let vnorm2 = dot(&v, &v);
        if vnorm2 == 0.0 {
            reflectors.push(None);
            continue;
        }
        for c in j + 1..k {
            let col = &mut a.col_mut(c)[j..];
            let f = 2.0 * dot(&v, col) / vnorm2;
            for (ci, vi) in col.iter_mut().zip(&v) {
                *ci -= f * vi;
            }
        }
        let col = a.col_mut(j);
        col[j] = beta;
        for e in &mut col[j + 1..] {
            *e = 0.0;
        }
        reflectors.push(Some(v));
    }

    let mut r = DenseMatrix::from_fn(k, k, |i, j| if i <= j { a[(i, j)] } else { 0.0 });
    let mut q = DenseMatrix::from_fn(rows, k, |i, j| if i == j { 1.0 } else { 0.0 });
    for (j, v) in reflectors.iter().enumerate().rev() {
        let Some(v) = v else { continue };
        let vnorm2 = dot(v, v);
        for c in 0..k {
            let col = &mut q.col_mut(c)[j..];
            let f = 2.0 * dot(v, col) / vnorm2;
            if f != 0.0 {
                for (ci, vi) in col.iter_mut().zip(v) {
                    *ci -= f * vi;
                }
            }
        }
    }

    for i in 0..k {
        if r[(i, i)] < 0.0 {
            for c in i..k {
                r[(i, c)] = -r[(i, c)];
            }
            for e in q.col_mut(i) {
                *e = -*e;
            }
        }
    }

    let tol = RANK_TOL * fro;
    let rank = (0..k).filter(|&i| r[(i, i)] > tol).count();
    Ok(QrFactors { q_thin: q, r, rank })
}

/// Singular value decomposition `M = U diag(σ) V_rᵀ` of a `p × q` matrix.
///
/// `sigma` has `min(p, q)` entries in nonincreasing order and `u` is
/// `p × min(p, q)`. `v` is always a full `q × q` orthogonal matrix: its first
/// `min(p, q)` columns pair with `sigma`, the rest span the null space. Each
/// column of `v` has its largest-magnitude component nonnegative.
#[derive(Clone, Debug)]
pub struct SvdFactors {
    pub u: DenseMatrix,
    pub sigma: Vec<f64>,
    pub v: DenseMatrix,
}

impl SvdFactors {
    /// Right singular vector of the largest singular value.
    pub fn leading_right(&self) -> &[f64] {
        self.v.col(0)
    }

    /// Right singular vector of the smallest singular value (a null vector
    /// when `p < q`).
    pub fn trailing_right(&self) -> &[f64] {
        self.v.col(self.v.ncols() - 1)
    }

    /// The smallest singular value, counting the implicit zeros when `p < q`.
    pub fn min_singular_value(&self) -> f64 {
        if self.sigma.len() < self.v.ncols() {
            0.0
        } else {
            self.sigma.last().copied().unwrap_or(0.0)
        }
    }

    /// Singular values padded with zeros to length `q`.
    pub fn all_singular_values(&self) -> Vec<f64> {
        let mut s = self.sigma.clone();
        s.resize(self.v.ncols(), 0.0);
        s
    }
}

/// SVD by one-sided (Hestenes) Jacobi rotations.
pub fn svd_small(m: &DenseMatrix) -> Result<SvdFactors> {
    let (p, q) = (m.nrows(), m.ncols());
    if p == 0 || q == 0 {
        return Err(Error::DimensionMismatch(format!(
            "SVD needs a nonempty matrix, got {p}x{q}"
        )));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("SVD input"));
    }
    let mut out = if p >= q {
        let (u, sigma, v) = jacobi_tall(m)?;
        SvdFactors { u, sigma, v }
    } else {
        // M = (Mᵀ)ᵀ = (U' Σ V'ᵀ)ᵀ = V' Σ U'ᵀ
        let (u_t, sigma, v_t) = jacobi_tall(&m.transpose())?;
        let v = complete_orthonormal(&u_t, q);
        SvdFactors { u: v_t, sigma, v }
    };
    fix_signs(&mut out);
    Ok(out)
}

/// One-sided Jacobi on a `p × q` matrix with `p ≥ q`.
fn jacobi_tall(m: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>, DenseMatrix)> {
    let (p, q) = (m.nrows(), m.ncols());
    let mut u = m.clone();
    let mut v = DenseMatrix::identity(q);
    // Columns this small relative to the matrix are rounding noise; rotating
    // them against the others never settles.
    let floor = {
        let f = f64::EPSILON * m.frobenius_norm();
        f * f
    };

    let mut converged = q < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for i in 0..q - 1 {
            for j in i + 1..q {
                let alpha = dot(u.col(i), u.col(i));
                let beta = dot(u.col(j), u.col(j));
                let gamma = dot(u.col(i), u.col(j));
                if gamma == 0.0
                    || alpha <= floor
                    || beta <= floor
                    || gamma.abs() <= JACOBI_TOL * alpha.sqrt() * beta.sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_cols(&mut u, i, j, c, s);
                rotate_cols(&mut v, i, j, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::SvdNoConvergence {
            sweeps: JACOBI_MAX_SWEEPS,
        });
    }

    let norms: Vec<f64> = (0..q).map(|j| norm2(u.col(j))).collect();
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));

    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let mut u_sorted = u.select_cols(&order);
    let v_sorted = v.select_cols(&order);

    let smax = sigma.first().copied().unwrap_or(0.0);
    let negligible = f64::EPSILON * smax * (p as f64);
    let mut keep = Vec::new();
    for (j, &s) in sigma.iter().enumerate() {
        if s > negligible && s > 0.0 {
            for e in u_sorted.col_mut(j) {
                *e /= s;
            }
            keep.push(j);
        }
    }
    if keep.len() < q {
        // Left vectors of (numerically) zero singular values carry no
        // information; replace them by an orthonormal completion.
        let basis = u_sorted.select_cols(&keep);
        let completed = complete_orthonormal(&basis, q);
        let mut next = keep.len();
        for j in 0..q {
            if !keep.contains(&j) {
                u_sorted.col_mut(j).copy_from_slice(completed.col(next));
                next += 1;
            }
        }
    }
    Ok((u_sorted, sigma, v_sorted))
}

fn rotate_cols(m: &mut DenseMatrix, i: usize, j: usize, c: f64, s: f64) {
    let rows = m.nrows();
    let (lo, hi) = m.data.split_at_mut(j * rows);
    let ci = &mut lo[i * rows..(i + 1) * rows];
    let cj = &mut hi[..rows];
    for (a, b) in ci.iter_mut().zip(cj.iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// Extends the orthonormal columns of `basis` (`n × r`) to `target_cols`
/// orthonormal columns by Gram-Schmidt on standard basis vectors.
fn complete_orthonormal(basis: &DenseMatrix, target_cols: usize) -> DenseMatrix {
    let n = basis.nrows();
    let mut cols: Vec<Vec<f64>> = (0..basis.ncols()).map(|j| basis.col(j).to_vec()).collect();
    while cols.len() < target_cols {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for k in 0..n {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            for _ in 0..2 {
                for c in &cols {
                    let f = dot(c, &e);
                    for (ei, ci) in e.iter_mut().zip(c) {
                        *ei -= f * ci;
                    }
                }
            }
            let nrm = norm2(&e);
            if best.as_ref().map_or(true, |(b, _)| nrm > *b + 1e-12) {
                best = Some((nrm, e));
            }
        }
        let (nrm, mut e) = best.expect("completion needs n >= target_cols");
        for x in &mut e {
            *x /= nrm;
        }
        cols.push(e);
    }
    let data = cols.into_iter().flatten().collect();
    DenseMatrix::from_col_major(n, target_cols, data)
}

fn largest_magnitude_index(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if v.abs() > x[best].abs() {
            best = i;
        }
    }
    best
}

fn fix_signs(f: &mut SvdFactors) {
    let r = f.sigma.len();
    for j in 0..f.v.ncols() {
        let col = f.v.col(j);
        if col[largest_magnitude_index(col)] < 0.0 {
            for e in f.v.col_mut(j) {
                *e = -*e;
            }
            if j < r {
                for e in f.u.col_mut(j) {
                    *e = -*e;
                }
            }
        }
    }
}

/// Minimum-norm least squares solver for one column block, built once and
/// reused for several right-hand sides.
#[derive(Clone, Debug)]
pub struct ColumnSolver {
    basis: DenseMatrix,
    method: SolveMethod,
    rank_deficient: bool,
}

#[derive(Clone, Debug)]
enum SolveMethod {
    Qr(DenseMatrix),
    Svd { svd: SvdFactors, rank: usize },
}

impl ColumnSolver {
    pub fn new(block: &DenseMatrix) -> Result<Self> {
        let (m, k) = (block.nrows(), block.ncols());
        if k == 0 {
            return Err(Error::EmptyColumnSet);
        }
        if m >= k {
            let qr = qr_householder(block)?;
            if qr.is_full_rank() {
                return Ok(Self {
                    basis: qr.q_thin,
                    method: SolveMethod::Qr(qr.r),
                    rank_deficient: false,
                });
            }
        } else if !block.is_finite() {
            return Err(Error::NonFinite("least squares block"));
        }
        if m == 0 {
            return Ok(Self {
                basis: DenseMatrix::zeros(0, 0),
                method: SolveMethod::Svd {
                    svd: SvdFactors {
                        u: DenseMatrix::zeros(0, 0),
                        sigma: Vec::new(),
                        v: DenseMatrix::identity(k),
                    },
                    rank: 0,
                },
                rank_deficient: true,
            });
        }
        let svd = svd_small(block)?;
        let tol = RANK_TOL * block.frobenius_norm();
        let rank = svd.sigma.iter().take_while(|&&s| s > tol).count();
        let basis = svd.u.select_cols(&(0..rank).collect::<Vec<_>>());
        Ok(Self {
            basis,
            method: SolveMethod::Svd { svd, rank },
            rank_deficient: true,
        })
    }

    /// Orthonormal basis (`m × rank`) of the column range.
    pub fn basis(&self) -> &DenseMatrix {
        &self.basis
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.rank_deficient
    }

    /// Minimum-norm minimizer of `‖block · x − b‖₂`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        match &self.method {
            SolveMethod::Qr(r) => {
                let mut x = self.basis.tr_mul_vec(b);
                back_substitute(r, &mut x);
                x
            }
            SolveMethod::Svd { svd, rank } => {
                let k = svd.v.nrows();
                let mut x = vec![0.0; k];
                for i in 0..*rank {
                    let coef = dot(svd.u.col(i), b) / svd.sigma[i];
                    for (xj, vj) in x.iter_mut().zip(svd.v.col(i)) {
                        *xj += coef * vj;
                    }
                }
                x
            }
        }
    }
}

fn back_substitute(r: &DenseMatrix, x: &mut [f64]) {
    let k = r.ncols();
    for i in (0..k).rev() {
        let mut s = x[i];
        for c in i + 1..k {
            s -= r[(i, c)] * x[c];
        }
        x[i] = s / r[(i, i)];
    }
}

/// Result of [`lstsq`].
#[derive(Clone, Debug)]
pub struct LstsqSolution {
    pub x: Vec<f64>,
    /// `‖A_j x − rhs‖₂`, including the part of `rhs` outside the active rows.
    pub residual: f64,
    pub rank_deficient: bool,
}

/// Solves `min ‖A_j x − rhs‖₂` for a sparse right-hand side.
pub fn lstsq(a_j: &ColumnSubmatrix, rhs: &SparseVec) -> Result<LstsqSolution> {
    let solver = ColumnSolver::new(&a_j.dense_block)?;
    Ok(lstsq_with(a_j, &solver, rhs))
}

/// As [`lstsq`], reusing a solver already built for `a_j`.
pub fn lstsq_with(a_j: &ColumnSubmatrix, solver: &ColumnSolver, rhs: &SparseVec) -> LstsqSolution {
    let (b_active, outside) = a_j.gather(rhs);
    let x = solver.solve(&b_active);
    let fitted = a_j.dense_block.mul_vec(&x);
    let inside: Vec<f64> = b_active.iter().zip(&fitted).map(|(b, f)| f - b).collect();
    let r_in = norm2(&inside);
    LstsqSolution {
        x,
        residual: (r_in * r_in + outside * outside).sqrt(),
        rank_deficient: solver.is_rank_deficient(),
    }
}

/// LU factorization with partial pivoting of a square dense matrix,
/// `P A = L U` with unit lower `L`.
#[derive(Clone, Debug)]
pub struct LuFactors {
    lu: DenseMatrix,
    /// `perm[i]` is the original row placed at position `i`.
    perm: Vec<usize>,
}

impl LuFactors {
    /// Returns `None` when an exactly zero pivot is met.
    pub fn new(a: &DenseMatrix) -> Option<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "LU needs a square matrix");
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            for i in k + 1..n {
                if lu[(i, k)].abs() > lu[(p, k)].abs() {
                    p = i;
                }
            }
            let piv = lu[(p, k)];
            if piv == 0.0 || !piv.is_finite() {
                return None;
            }
            if p != k {
                perm.swap(p, k);
                for c in 0..n {
                    let t = lu[(p, c)];
                    lu[(p, c)] = lu[(k, c)];
                    lu[(k, c)] = t;
                }
            }
            for i in k + 1..n {
                lu[(i, k)] /= piv;
            }
            for c in k + 1..n {
                let ukc = lu[(k, c)];
                if ukc == 0.0 {
                    continue;
                }
                for i in k + 1..n {
                    let l = lu[(i, k)];
                    lu[(i, c)] -= l * ukc;
                }
            }
        }
        Some(Self { lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = y[i];
            for c in 0..i {
                s -= self.lu[(i, c)] * y[c];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for c in i + 1..n {
                s -= self.lu[(i, c)] * y[c];
            }
            y[i] = s / self.lu[(i, i)];
        }
        b.copy_from_slice(&y);
    }

    /// Solves `Aᵀ x = b` in place.
    pub fn solve_transpose_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        // Aᵀ = Uᵀ Lᵀ P
        let mut z = b.to_vec();
        for i in 0..n {
            let mut s = z[i];
            for c in 0..i {
                s -= self.lu[(c, i)] * z[c];
            }
            z[i] = s / self.lu[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for c in i + 1..n {
                s -= self.lu[(c, i)] * z[c];
            }
            z[i] = s;
        }
        for (i, &p) in self.perm.iter().enumerate() {
            b[p] = z[i];
        }
    }

    /// Nonzeros of `L` (unit diagonal included) and of `U`.
    pub fn factor_nnz(&self) -> (usize, usize) {
        let n = self.dim();
        let mut l = n;
        let mut u = 0;
        for c in 0..n {
            for i in 0..n {
                if self.lu[(i, c)] != 0.0 {
                    if i > c {
                        l += 1;
                    } else {
                        u += 1;
                    }
                }
            }
        }
        (l, u)
    }
}
