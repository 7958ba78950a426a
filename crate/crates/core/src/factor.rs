//! Direct approximate factoring of the inverse, `A⁻¹ ≈ W V⁻¹`, by
//! minimizing `‖A W − V‖_F` column by column over fixed patterns.
//!
//! Two normalizations are available:
//!
//! * [`diaf_q`] fixes `‖v_j‖`. With `A_j = Q_j R_j` the extracted columns of
//!   `A` allowed in `w_j`, `v_j` is the leading right singular vector of
//!   `M_j`, the columns of `Q_jᵀ` at the allowed positions of `v_j`; `w_j` then
//!   solves `min ‖A_j w_j − v_j‖₂`. An optional stabilization pins the
//!   diagonal of `v_j` when it comes out too small.
//! * [`diaf_s`] fixes `‖w_j‖`. `w_j` is the right singular vector of the
//!   smallest singular value of `Â_j`, which is `A_j` with the rows allowed
//!   in `v_j` removed; `V` is the projection of `A W` onto its pattern.
//!
//! Every column is independent; the columns run in parallel and are
//! assembled by index, so results do not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::{lstsq_with, qr_householder, svd_small, ColumnSolver, DenseMatrix};
use crate::error::{Error, Result};
use crate::sparse::{extract_columns, residual_fro, SparseMatrix, SparseVec, SubspacePattern};

/// Relative gap below which singular values count as equal.
const TIE_RTOL: f64 = 1e-12;

/// When and how strongly to pin the diagonal of a `V` column in [`diaf_q`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilizationPolicy {
    pub enabled: bool,
    /// Columns with `|v_jj|` below this (for a unit column) are recomputed.
    pub threshold: f64,
    /// Value imposed on `v_jj`.
    pub r: f64,
}

impl Default for StabilizationPolicy {
    fn default() -> Self {
        Self {
            enabled: false,
            threshold: 1e-2,
            r: 2.0,
        }
    }
}

impl StabilizationPolicy {
    pub fn enabled(threshold: f64, r: f64) -> Result<Self> {
        let p = Self {
            enabled: true,
            threshold,
            r,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold >= 0.0) || !(self.r > 0.0) || !self.r.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "stabilization needs threshold >= 0 and r > 0, got {} and {}",
                self.threshold, self.r
            )));
        }
        Ok(())
    }
}

/// Per-column outcome flags and measurements.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnDiagnostics {
    /// `‖A_j w_j − v_j‖₂`.
    pub residual: f64,
    /// `A_j` (or `Â_j`) had numerically dependent columns.
    pub rank_deficient: bool,
    /// `M_j` vanished and `v_j = e_j` was used.
    pub zero_m_fallback: bool,
    pub stabilized: bool,
}

/// One computed column of each factor.
#[derive(Clone, Debug)]
pub struct ColumnFactor {
    pub w: SparseVec,
    pub v: SparseVec,
    pub diagnostics: ColumnDiagnostics,
}

/// The factors `W`, `V` together with per-column diagnostics.
#[derive(Clone, Debug)]
pub struct FactorPair {
    pub w: SparseMatrix,
    pub v: SparseMatrix,
    pub columns: Vec<ColumnDiagnostics>,
    /// Number of stabilized columns.
    pub stab_count: usize,
    /// `‖A W − V‖_F`.
    pub nrm: f64,
}

impl FactorPair {
    pub fn residuals(&self) -> Vec<f64> {
        self.columns.iter().map(|c| c.residual).collect()
    }

    pub fn rank_deficient_count(&self) -> usize {
        self.columns.iter().filter(|c| c.rank_deficient).count()
    }

    pub fn fallback_count(&self) -> usize {
        self.columns.iter().filter(|c| c.zero_m_fallback).count()
    }
}

fn check_operands(a: &SparseMatrix, w: &SubspacePattern, v: &SubspacePattern) -> Result<()> {
    let n = a.n_cols();
    if !a.is_square() || w.n() != n || v.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "A is {}x{}, patterns have dimensions {} and {}",
            a.n_rows(),
            n,
            w.n(),
            v.n()
        )));
    }
    if let Some(j) = (0..n).find(|&j| !v.contains(j, j)) {
        return Err(Error::InvalidStructure(format!(
            "pattern of V lacks the diagonal in column {j}"
        )));
    }
    Ok(())
}

/// Columns of `Q_jᵀ` at `positions`: an `r × l` matrix, zero where a
/// position lies outside the support of `A_j`.
fn qt_columns(a_j: &crate::sparse::ColumnSubmatrix, basis: &DenseMatrix, positions: &[usize]) -> DenseMatrix {
    let r = basis.ncols();
    let mut m = DenseMatrix::zeros(r, positions.len());
    for (c, &i) in positions.iter().enumerate() {
        if let Some(row) = a_j.row_position(i) {
            for k in 0..r {
                m[(k, c)] = basis[(row, k)];
            }
        }
    }
    m
}

/// Column `j` of DIAF-Q with `‖v_j‖ = 1` (before stabilization).
pub fn diaf_q_column(
    a: &SparseMatrix,
    w_pattern: &SubspacePattern,
    v_pattern: &SubspacePattern,
    j: usize,
    policy: &StabilizationPolicy,
) -> Result<ColumnFactor> {
    diaf_q_column_scaled(a, w_pattern, v_pattern, j, policy, 1.0)
}

/// Column `j` of DIAF-Q with the column of `V` scaled to `target` times its
/// unit-norm value.
pub fn diaf_q_column_scaled(
    a: &SparseMatrix,
    w_pattern: &SubspacePattern,
    v_pattern: &SubspacePattern,
    j: usize,
    policy: &StabilizationPolicy,
    target: f64,
) -> Result<ColumnFactor> {
    let n = a.n_cols();
    let positions = v_pattern.col(j);
    let diag_pos = positions
        .binary_search(&j)
        .map_err(|_| Error::InvalidStructure(format!("pattern of V lacks the diagonal in column {j}")))?;

    let a_j = extract_columns(a, w_pattern.col(j))?;
    let solver = ColumnSolver::new(&a_j.dense_block)?;
    let m_j = qt_columns(&a_j, solver.basis(), positions);

    let mut diagnostics = ColumnDiagnostics {
        rank_deficient: solver.is_rank_deficient(),
        ..Default::default()
    };

    let mut v_local = vec![0.0; positions.len()];
    if m_j.ncols() == 0 || m_j.nrows() == 0 || m_j.frobenius_norm() == 0.0 {
        v_local[diag_pos] = 1.0;
        diagnostics.zero_m_fallback = true;
    } else {
        let svd = svd_small(&m_j)?;
        v_local.copy_from_slice(svd.leading_right());
        // A repeated leading singular value leaves a subspace of maximizers;
        // take the member closest to e_j.
        let tie: Vec<usize> = (0..svd.sigma.len())
            .filter(|&c| svd.sigma[c] >= svd.sigma[0] * (1.0 - TIE_RTOL))
            .collect();
        if tie.len() > 1 {
            let basis = svd.v.select_cols(&tie);
            let coef: Vec<f64> = tie.iter().map(|&c| svd.v[(diag_pos, c)]).collect();
            if crate::dense::norm2(&coef) > TIE_RTOL {
                let mut v = basis.mul_vec(&coef);
                let nrm = crate::dense::norm2(&v);
                v.iter_mut().for_each(|x| *x /= nrm);
                v_local = v;
            }
        }
        // The SVD already made the largest component nonnegative; prefer the
        // diagonal when it is nonzero.
        if v_local[diag_pos] < 0.0 {
            v_local.iter_mut().for_each(|x| *x = -*x);
        }
        if policy.enabled && v_local[diag_pos].abs() < policy.threshold {
            v_local = stabilize_column(&m_j, positions, j, positions.len(), policy.r)?;
            diagnostics.stabilized = true;
        }
    }
    if target != 1.0 {
        v_local.iter_mut().for_each(|x| *x *= target);
    }

    let v = SparseVec::from_unsorted(
        n,
        positions
            .iter()
            .zip(&v_local)
            .filter(|(_, x)| **x != 0.0)
            .map(|(&i, &x)| (i, x))
            .collect(),
    );
    let sol = lstsq_with(&a_j, &solver, &v);
    diagnostics.residual = sol.residual;
    let w = SparseVec::from_unsorted(
        n,
        w_pattern
            .col(j)
            .iter()
            .zip(&sol.x)
            .filter(|(_, x)| **x != 0.0)
            .map(|(&i, &x)| (i, x))
            .collect(),
    );
    Ok(ColumnFactor { w, v, diagnostics })
}

/// Recomputes the values of a `V` column with its diagonal pinned to `r`.
///
/// `qt` holds the columns of `Q_jᵀ` at `positions` (the pattern of column
/// `j`, which contains `j`). Of the positions before `j`, the `l_j − 1` with
/// the largest column norms form `M̂_j = Û Σ̂ V̂ᵀ`; the remaining unit part is
/// `± V̂ e₁`, with the sign of the first component of `Ûᵀ p_j`, where `p_j`
/// is the column at position `j`. Returns values aligned with `positions`.
pub fn stabilize_column(qt: &DenseMatrix, positions: &[usize], j: usize, l_j: usize, r: f64) -> Result<Vec<f64>> {
    let diag_pos = positions
        .binary_search(&j)
        .map_err(|_| Error::InvalidStructure(format!("column {j} pattern lacks its diagonal")))?;
    let mut out = vec![0.0; positions.len()];
    out[diag_pos] = r;

    let norms: Vec<f64> = (0..qt.ncols()).map(|c| crate::dense::norm2(qt.col(c))).collect();
    let mut admissible: Vec<usize> = (0..positions.len()).filter(|&c| positions[c] < j).collect();
    admissible.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]).then(x.cmp(&y)));
    admissible.truncate(l_j.saturating_sub(1));
    admissible.sort_unstable();
    if admissible.is_empty() || qt.nrows() == 0 {
        return Ok(out);
    }

    let m_hat = qt.select_cols(&admissible);
    let svd = svd_small(&m_hat)?;
    let p_j = qt.col(diag_pos);
    let first = crate::dense::dot(svd.u.col(0), p_j);
    let sign = if first < 0.0 { -1.0 } else { 1.0 };
    for (k, &c) in admissible.iter().enumerate() {
        out[c] = sign * svd.leading_right()[k];
    }
    Ok(out)
}

/// Column `j` of DIAF-S: a unit `w_j` minimizing `‖Â_j w_j‖`. Returns the
/// column and the full product `A_j w_j` (before projection onto the pattern
/// of `V`).
pub fn diaf_s_column(
    a: &SparseMatrix,
    w_pattern: &SubspacePattern,
    v_pattern: &SubspacePattern,
    j: usize,
) -> Result<ColumnFactor> {
    let n = a.n_cols();
    let a_j = extract_columns(a, w_pattern.col(j))?;
    let k = a_j.cols.len();
    let positions = v_pattern.col(j);
    let reduced = a_j.without_rows(positions);
    let scale = a_j.dense_block.frobenius_norm();

    // Right singular vectors (k × k) and singular values padded to k.
    let (vecs, sigma, rank_deficient) = if reduced.active_rows.is_empty() {
        (DenseMatrix::identity(k), vec![0.0; k], true)
    } else if reduced.active_rows.len() >= k {
        let qr = qr_householder(&reduced.dense_block)?;
        let svd = svd_small(&qr.r)?;
        let s = svd.all_singular_values();
        (svd.v, s, !qr.is_full_rank())
    } else {
        let svd = svd_small(&reduced.dense_block)?;
        let s = svd.all_singular_values();
        (svd.v, s, true)
    };

    // Several (numerically) equal smallest singular values leave a subspace
    // of minimizers; inside it, prefer the direction that puts most of A w
    // into the allowed rows of V.
    let smin = *sigma.last().unwrap();
    let tie_tol = 1e-13 * scale;
    let group: Vec<usize> = (0..k).filter(|&c| sigma[c] <= smin + tie_tol).collect();
    let mut w_local = if group.len() == 1 {
        vecs.col(k - 1).to_vec()
    } else {
        let basis = vecs.select_cols(&group);
        let kept_rows: Vec<usize> = positions
            .iter()
            .filter_map(|&i| a_j.row_position(i))
            .collect();
        let projected = a_j.dense_block.select_rows(&kept_rows).matmul(&basis);
        let coef = if projected.nrows() > 0 && projected.frobenius_norm() > 0.0 {
            svd_small(&projected)?.leading_right().to_vec()
        } else {
            let mut e = vec![0.0; group.len()];
            e[group.len() - 1] = 1.0;
            e
        };
        let mut w = basis.mul_vec(&coef);
        let nrm = crate::dense::norm2(&w);
        w.iter_mut().for_each(|x| *x /= nrm);
        w
    };

    let aw = a_j.dense_block.mul_vec(&w_local);
    let flip = match a_j.row_position(j).map(|r| aw[r]) {
        Some(d) if d != 0.0 => d < 0.0,
        _ => {
            let big = w_local
                .iter()
                .enumerate()
                .fold(0, |b, (i, x)| if x.abs() > w_local[b].abs() { i } else { b });
            w_local[big] < 0.0
        }
    };
    let sgn = if flip { -1.0 } else { 1.0 };
    w_local.iter_mut().for_each(|x| *x *= sgn);

    let mut v_pairs = Vec::new();
    let mut out_sq = 0.0;
    for (r, &row) in a_j.active_rows.iter().enumerate() {
        let x = sgn * aw[r];
        if positions.binary_search(&row).is_ok() {
            if x != 0.0 {
                v_pairs.push((row, x));
            }
        } else {
            out_sq += x * x;
        }
    }
    let w = SparseVec::from_unsorted(
        n,
        w_pattern
            .col(j)
            .iter()
            .zip(&w_local)
            .filter(|(_, x)| **x != 0.0)
            .map(|(&i, &x)| (i, x))
            .collect(),
    );
    Ok(ColumnFactor {
        w,
        v: SparseVec::from_unsorted(n, v_pairs),
        diagnostics: ColumnDiagnostics {
            residual: out_sq.sqrt(),
            rank_deficient,
            zero_m_fallback: false,
            stabilized: false,
        },
    })
}

fn assemble(a: &SparseMatrix, columns: Vec<ColumnFactor>) -> Result<FactorPair> {
    let n = a.n_cols();
    let mut w_cols = Vec::with_capacity(n);
    let mut v_cols = Vec::with_capacity(n);
    let mut diags = Vec::with_capacity(n);
    for c in columns {
        w_cols.push(c.w);
        v_cols.push(c.v);
        diags.push(c.diagnostics);
    }
    let w = SparseMatrix::from_columns(n, w_cols);
    let v = SparseMatrix::from_columns(n, v_cols);
    let nrm = residual_fro(a, &w, &v)?;
    Ok(FactorPair {
        w,
        v,
        stab_count: diags.iter().filter(|d| d.stabilized).count(),
        columns: diags,
        nrm,
    })
}

/// DIAF-Q with unit column norms for `V`.
pub fn diaf_q(
    a: &SparseMatrix,
    w_pattern: &SubspacePattern,
    v_pattern: &SubspacePattern,
    policy: &StabilizationPolicy,
) -> Result<FactorPair> {
    let ones = vec![1.0; a.n_cols()];
    diaf_q_scaled(a, w_pattern, v_pattern, policy, &ones)
}

/// DIAF-Q with `‖v_j‖ = targets[j]` (unstabilized columns). The product
/// `W V⁻¹` does not depend on the targets.
pub fn diaf_q_scaled(
    a: &SparseMatrix,
    w_pattern: &SubspacePattern,
    v_pattern: &SubspacePattern,
    policy: &StabilizationPolicy,
    targets: &[f64],
) -> Result<FactorPair> {
    check_operands(a, w_pattern, v_pattern)?;
    if policy.enabled {
        policy.validate()?;
    }
    if targets.len() != a.n_cols() || targets.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
        return Err(Error::InvalidConfig("column targets must be positive, one per column".into()));
    }
    let columns = (0..a.n_cols())
        .into_par_iter()
        .map(|j| diaf_q_column_scaled(a, w_pattern, v_pattern, j, policy, targets[j]))
        .collect::<Result<Vec<_>>>()?;
    assemble(a, columns)
}

/// DIAF-S: unit columns for `W`, `V = P_𝒱 (A W)`.
pub fn diaf_s(a: &SparseMatrix, w_pattern: &SubspacePattern, v_pattern: &SubspacePattern) -> Result<FactorPair> {
    check_operands(a, w_pattern, v_pattern)?;
    let columns = (0..a.n_cols())
        .into_par_iter()
        .map(|j| diaf_s_column(a, w_pattern, v_pattern, j))
        .collect::<Result<Vec<_>>>()?;
    assemble(a, columns)
}
