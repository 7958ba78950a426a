//! Applying `W V⁻¹` as a right preconditioner inside BiCGSTAB, plus a
//! 1-norm condition estimate for `V`.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::{norm2, DenseMatrix, LuFactors};
use crate::error::{Error, Result};
use crate::preprocess::BlockStructure;
use crate::sparse::{SparseMatrix, SparseVec};

const BREAKDOWN_TOL: f64 = 1e-30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockShape {
    BlockDiagonal,
    BlockUpperTriangular,
}

/// `V` factored block by block: dense partially pivoted LU on each diagonal
/// block, the part above the diagonal blocks kept sparse for block
/// back-substitution.
#[derive(Clone, Debug)]
pub struct VFactorization {
    shape: BlockShape,
    blocks: BlockStructure,
    lu: Vec<LuFactors>,
    off_diagonal: SparseMatrix,
    norm_one: f64,
}

/// Factors `V`, which must be block upper triangular with respect to
/// `blocks` (block diagonal when `shape` says so).
pub fn factor_v(v: &SparseMatrix, blocks: &BlockStructure, shape: BlockShape) -> Result<VFactorization> {
    let f = VFactorization::new(v, blocks)?;
    if shape == BlockShape::BlockDiagonal && f.shape != BlockShape::BlockDiagonal {
        return Err(Error::InvalidStructure(
            "V has entries outside its diagonal blocks".into(),
        ));
    }
    Ok(VFactorization { shape, ..f })
}

impl VFactorization {
    /// Factors `V`, detecting the shape from its structure.
    pub fn new(v: &SparseMatrix, blocks: &BlockStructure) -> Result<Self> {
        let n = v.n_cols();
        if !v.is_square() || blocks.dim() != n {
            return Err(Error::DimensionMismatch(format!(
                "V is {}x{}, block structure covers {}",
                v.n_rows(),
                n,
                blocks.dim()
            )));
        }
        let mut off_cols = Vec::with_capacity(n);
        for j in 0..n {
            let bj = blocks.block_of(j);
            let mut pairs = Vec::new();
            for (i, x) in v.col_iter(j) {
                let bi = blocks.block_of(i);
                if bi > bj {
                    return Err(Error::InvalidStructure(format!(
                        "V entry ({i}, {j}) lies below the diagonal blocks"
                    )));
                }
                if bi < bj {
                    pairs.push((i, x));
                }
            }
            off_cols.push(SparseVec::from_unsorted(n, pairs));
        }
        let off_diagonal = SparseMatrix::from_columns(n, off_cols);
        let shape = if off_diagonal.nnz() == 0 {
            BlockShape::BlockDiagonal
        } else {
            BlockShape::BlockUpperTriangular
        };

        let lu = (0..blocks.n_blocks())
            .into_par_iter()
            .map(|b| {
                let r = blocks.range(b);
                let mut d = DenseMatrix::zeros(r.len(), r.len());
                for j in r.clone() {
                    for (i, x) in v.col_iter(j) {
                        if r.contains(&i) {
                            d[(i - r.start, j - r.start)] = x;
                        }
                    }
                }
                LuFactors::new(&d).ok_or(Error::SingularBlock {
                    block: b,
                    start: r.start,
                    end: r.end,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(Self {
            shape,
            blocks: blocks.clone(),
            lu,
            off_diagonal,
            norm_one: v.norm_one(),
        })
    }

    pub fn shape(&self) -> BlockShape {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.blocks.dim()
    }

    pub fn blocks(&self) -> &BlockStructure {
        &self.blocks
    }

    /// `‖V‖₁` of the factored matrix.
    pub fn norm_one(&self) -> f64 {
        self.norm_one
    }

    /// Nonzeros of the `L` and `U` factors together; entries above the
    /// diagonal blocks count towards `U`.
    pub fn factor_nnz(&self) -> usize {
        self.lu.iter().map(|f| {
            let (l, u) = f.factor_nnz();
            l + u
        }).sum::<usize>()
            + self.off_diagonal.nnz()
    }

    /// Overwrites `x` with `V⁻¹ x`.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        for b in (0..self.blocks.n_blocks()).rev() {
            let r = self.blocks.range(b);
            self.lu[b].solve_in_place(&mut x[r.clone()]);
            for j in r {
                let xj = x[j];
                if xj == 0.0 {
                    continue;
                }
                for (i, v) in self.off_diagonal.col_iter(j) {
                    x[i] -= v * xj;
                }
            }
        }
    }

    /// Overwrites `x` with `V⁻ᵀ x`.
    pub fn solve_transpose_in_place(&self, x: &mut [f64]) {
        for b in 0..self.blocks.n_blocks() {
            let r = self.blocks.range(b);
            for j in r.clone() {
                let s: f64 = self.off_diagonal.col_iter(j).map(|(i, v)| v * x[i]).sum();
                x[j] -= s;
            }
            self.lu[b].solve_transpose_in_place(&mut x[r]);
        }
    }

    pub fn solve(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        self.solve_in_place(&mut y);
        y
    }

    /// `V⁻¹ x` for a sparse `x`, touching only the blocks reached.
    pub fn solve_sparse(&self, x: &SparseVec) -> SparseVec {
        let mut vals: BTreeMap<usize, f64> = x.iter().collect();
        let mut pending: BTreeSet<usize> = x.indices().iter().map(|&i| self.blocks.block_of(i)).collect();
        while let Some(b) = pending.pop_last() {
            let r = self.blocks.range(b);
            let mut seg: Vec<f64> = r.clone().map(|i| vals.get(&i).copied().unwrap_or(0.0)).collect();
            self.lu[b].solve_in_place(&mut seg);
            for (j, &xj) in r.zip(&seg) {
                vals.insert(j, xj);
                if xj == 0.0 {
                    continue;
                }
                for (i, v) in self.off_diagonal.col_iter(j) {
                    *vals.entry(i).or_insert(0.0) -= v * xj;
                    pending.insert(self.blocks.block_of(i));
                }
            }
        }
        let (indices, values) = vals.into_iter().filter(|(_, v)| *v != 0.0).unzip();
        SparseVec::new(x.len(), indices, values).expect("BTreeMap keys are sorted")
    }
}

/// Something that maps a vector to an approximation of `A⁻¹` times it.
pub trait Preconditioner: Sync {
    fn apply(&self, x: &[f64]) -> Vec<f64>;
}

/// No preconditioning.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
}

/// `x ↦ W V⁻¹ x`.
#[derive(Clone, Copy, Debug)]
pub struct FactoredInverse<'a> {
    pub w: &'a SparseMatrix,
    pub v: &'a VFactorization,
}

impl Preconditioner for FactoredInverse<'_> {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        apply_right_precond(self.w, self.v, x)
    }
}

pub fn apply_right_precond(w: &SparseMatrix, vf: &VFactorization, x: &[f64]) -> Vec<f64> {
    let z = vf.solve(x);
    w.spmv(&z)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    /// No convergence within the iteration cap.
    NoConvergence,
    Breakdown,
}

impl SolveStatus {
    /// Lower is better: converged, then no convergence, then breakdown.
    pub fn severity(self) -> u8 {
        match self {
            SolveStatus::Converged => 0,
            SolveStatus::NoConvergence => 1,
            SolveStatus::Breakdown => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::NoConvergence => "no_convergence",
            SolveStatus::Breakdown => "breakdown",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub status: SolveStatus,
    /// `‖r_k‖ / ‖r_0‖` from the recurrence.
    pub relative_residual: f64,
    /// `‖b − A x‖ / ‖b − A x_0‖` recomputed at exit.
    pub true_relative_residual: f64,
}

/// Right-preconditioned BiCGSTAB from `x₀ = 0`. Stops when the true residual
/// has dropped below `tol · ‖r₀‖`; if the recurrence claims convergence but
/// the true residual disagrees, the iteration restarts from the true one.
pub fn bicgstab(
    a: &SparseMatrix,
    b: &[f64],
    precond: &dyn Preconditioner,
    tol: f64,
    maxit: usize,
) -> (Vec<f64>, SolveReport) {
    let n = a.n_rows();
    assert_eq!(b.len(), n, "right-hand side length");
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let r0_norm = norm2(&r);
    let finish = |x: Vec<f64>, iterations, status, rec: f64| {
        let ax = a.spmv(&x);
        let res: Vec<f64> = b.iter().zip(&ax).map(|(b, y)| b - y).collect();
        let true_rel = if r0_norm > 0.0 { norm2(&res) / r0_norm } else { 0.0 };
        (
            x,
            SolveReport {
                iterations,
                status,
                relative_residual: rec,
                true_relative_residual: true_rel,
            },
        )
    };
    if r0_norm == 0.0 {
        return finish(x, 0, SolveStatus::Converged, 0.0);
    }
    let target = tol * r0_norm;
    let mut r_hat = r.clone();
    let mut r_hat_norm = r0_norm;
    let mut p = vec![0.0; n];
    let mut v = vec![0.0; n];
    let (mut rho, mut alpha, mut omega) = (1.0_f64, 1.0_f64, 1.0_f64);
    let mut r_norm = r0_norm;

    for it in 1..=maxit {
        let rho_new = dot(&r_hat, &r);
        if !rho_new.is_finite() || rho_new.abs() < BREAKDOWN_TOL * r_hat_norm * r_norm {
            return finish(x, it - 1, SolveStatus::Breakdown, r_norm / r0_norm);
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let p_hat = precond.apply(&p);
        v = a.spmv(&p_hat);
        let rv = dot(&r_hat, &v);
        if !rv.is_finite() || rv.abs() < BREAKDOWN_TOL * r_hat_norm * norm2(&v) || rv == 0.0 {
            return finish(x, it - 1, SolveStatus::Breakdown, r_norm / r0_norm);
        }
        alpha = rho / rv;
        let s: Vec<f64> = r.iter().zip(&v).map(|(r, v)| r - alpha * v).collect();
        let s_norm = norm2(&s);
        if s_norm <= target {
            let mut trial = x.clone();
            axpy(alpha, &p_hat, &mut trial);
            let true_r = residual(a, b, &trial);
            if norm2(&true_r) <= target {
                return finish(trial, it, SolveStatus::Converged, s_norm / r0_norm);
            }
        }
        let s_hat = precond.apply(&s);
        let t = a.spmv(&s_hat);
        let tt = dot(&t, &t);
        if tt == 0.0 || !tt.is_finite() {
            return finish(x, it - 1, SolveStatus::Breakdown, r_norm / r0_norm);
        }
        omega = dot(&t, &s) / tt;
        if !omega.is_finite() || omega.abs() < BREAKDOWN_TOL {
            axpy(alpha, &p_hat, &mut x);
            return finish(x, it, SolveStatus::Breakdown, s_norm / r0_norm);
        }
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        r_norm = norm2(&r);
        if !r_norm.is_finite() {
            return finish(x, it, SolveStatus::Breakdown, r_norm);
        }
        if r_norm <= target {
            // the recurrence may have drifted; only the true residual counts
            let true_r = residual(a, b, &x);
            let true_norm = norm2(&true_r);
            if true_norm <= target {
                return finish(x, it, SolveStatus::Converged, r_norm / r0_norm);
            }
            r = true_r;
            r_norm = true_norm;
            r_hat = r.clone();
            r_hat_norm = r_norm;
            (rho, alpha, omega) = (1.0, 1.0, 1.0);
            p.fill(0.0);
            v.fill(0.0);
        }
    }
    finish(x, maxit, SolveStatus::NoConvergence, r_norm / r0_norm)
}

fn residual(a: &SparseMatrix, b: &[f64], x: &[f64]) -> Vec<f64> {
    let ax = a.spmv(x);
    b.iter().zip(&ax).map(|(b, y)| b - y).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    crate::dense::dot(a, b)
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

const HAGER_MAX_ITERS: usize = 5;

/// Estimate of `‖V⁻¹‖₁` (Hager's method with Higham's refinements).
pub fn inverse_norm1_estimate(vf: &VFactorization) -> f64 {
    let n = vf.dim();
    if n == 0 {
        return 0.0;
    }
    let l1 = |y: &[f64]| y.iter().map(|v| v.abs()).sum::<f64>();
    let sign = |y: &[f64]| -> Vec<f64> { y.iter().map(|&v| if v >= 0.0 { 1.0 } else { -1.0 }).collect() };
    let argmax = |z: &[f64]| {
        let mut best = 0;
        for (i, v) in z.iter().enumerate() {
            if v.abs() > z[best].abs() {
                best = i;
            }
        }
        best
    };

    let mut x = vec![1.0 / n as f64; n];
    vf.solve_in_place(&mut x);
    let mut est = l1(&x);
    if n > 1 {
        let mut xi = sign(&x);
        let mut z = xi.clone();
        vf.solve_transpose_in_place(&mut z);
        let mut j = argmax(&z);
        for _ in 1..HAGER_MAX_ITERS {
            let mut y = vec![0.0; n];
            y[j] = 1.0;
            vf.solve_in_place(&mut y);
            let est_new = l1(&y);
            let xi_new = sign(&y);
            if xi_new == xi || est_new <= est {
                est = est.max(est_new);
                break;
            }
            est = est_new;
            xi = xi_new;
            z.clone_from(&xi);
            vf.solve_transpose_in_place(&mut z);
            let j_new = argmax(&z);
            if z[j_new].abs() <= z[j].abs() {
                break;
            }
            j = j_new;
        }
        let mut alt: Vec<f64> = (0..n)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                s * (1.0 + i as f64 / (n - 1) as f64)
            })
            .collect();
        vf.solve_in_place(&mut alt);
        est = est.max(2.0 * l1(&alt) / (3.0 * n as f64));
    }
    est
}

/// `κ₁(V) ≈ ‖V‖₁ · est(‖V⁻¹‖₁)`.
pub fn cond_estimate(vf: &VFactorization) -> f64 {
    vf.norm_one() * inverse_norm1_estimate(vf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(d: &[f64]) -> SparseMatrix {
        let t: Vec<_> = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        SparseMatrix::from_triplets(d.len(), d.len(), &t).unwrap()
    }

    #[test]
    fn identity_factorization() {
        let vf = VFactorization::new(&SparseMatrix::identity(4), &BlockStructure::singletons(4)).unwrap();
        assert_eq!(vf.solve(&[1.0, 2.0, 3.0, 4.0]), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(cond_estimate(&vf), 1.0);
        assert_eq!(vf.shape(), BlockShape::BlockDiagonal);
    }

    #[test]
    fn diagonal_factorization() {
        let vf = VFactorization::new(&diag(&[2.0, 4.0]), &BlockStructure::singletons(2)).unwrap();
        assert_eq!(vf.solve(&[1.0, 1.0]), vec![0.5, 0.25]);
        let vf = VFactorization::new(&diag(&[1.0, 1000.0]), &BlockStructure::singletons(2)).unwrap();
        assert_eq!(cond_estimate(&vf), 1000.0);
    }

    #[test]
    fn singular_block_is_named() {
        let v = SparseMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (1, 1, 1.0), (1, 2, 1.0), (2, 1, 1.0), (2, 2, 1.0)]).unwrap();
        let b = BlockStructure::from_sizes(&[1, 2]).unwrap();
        assert!(matches!(
            VFactorization::new(&v, &b),
            Err(Error::SingularBlock { block: 1, start: 1, end: 3 })
        ));
    }

    #[test]
    fn rejects_entries_below_blocks() {
        let v = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 0, 1.0), (1, 1, 1.0)]).unwrap();
        assert!(VFactorization::new(&v, &BlockStructure::singletons(2)).is_err());
        let upper = v.transpose();
        assert!(factor_v(&upper, &BlockStructure::singletons(2), BlockShape::BlockDiagonal).is_err());
        assert!(factor_v(&upper, &BlockStructure::singletons(2), BlockShape::BlockUpperTriangular).is_ok());
    }

    #[test]
    fn bicgstab_identity_converges_immediately() {
        let a = SparseMatrix::identity(5);
        let b = vec![1.0, -2.0, 3.0, 0.5, 4.0];
        let (x, rep) = bicgstab(&a, &b, &IdentityPreconditioner, 1e-8, 1000);
        assert_eq!(rep.status, SolveStatus::Converged);
        assert!(rep.iterations <= 1);
        for (u, v) in x.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn bicgstab_zero_rhs() {
        let (x, rep) = bicgstab(&SparseMatrix::identity(3), &[0.0; 3], &IdentityPreconditioner, 1e-8, 10);
        assert_eq!((rep.iterations, rep.status), (0, SolveStatus::Converged));
        assert_eq!(x, vec![0.0; 3]);
    }

    #[test]
    fn bicgstab_iteration_cap() {
        let d: Vec<f64> = (1..=50).map(|i| i as f64).collect();
        let b = vec![1.0; 50];
        let (_, rep) = bicgstab(&diag(&d), &b, &IdentityPreconditioner, 1e-14, 2);
        assert_eq!(rep.status, SolveStatus::NoConvergence);
        assert_eq!(rep.iterations, 2);
    }

    #[test]
    fn status_names() {
        assert_eq!(serde_json::to_string(&SolveStatus::NoConvergence).unwrap(), "\"no_convergence\"");
        assert_eq!(SolveStatus::Breakdown.as_str(), "breakdown");
    }
}
