//! Sparsity structures for the factors.
//!
//! The pattern of `W` comes either from truncated, sparsified powers of
//! `S = V₀⁻¹ (I − P_{V₀}) A` ([`neumann_pattern`]) or from the rows of `A`
//! selected by an initial pattern `V₀` ([`adjoint_pattern`]). Once `W` is
//! fixed, [`select_v_pattern`] keeps in every column of `V` the admissible
//! positions where the column space of `A_j` is strongest.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::{norm2, ColumnSolver};
use crate::error::{Error, Result};
use crate::krylov::VFactorization;
use crate::preprocess::BlockStructure;
use crate::sparse::{extract_columns, SparseMatrix, SparseVec, SubspacePattern};

/// Dropping by relative tolerance and by count. A zero parameter disables
/// that half of the rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DropRule {
    pub tau: f64,
    pub p: usize,
}

impl DropRule {
    pub const NONE: DropRule = DropRule { tau: 0.0, p: 0 };

    pub fn new(tau: f64, p: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidConfig(format!("drop tolerance {tau} outside [0, 1]")));
        }
        Ok(Self { tau, p })
    }

    pub fn is_noop(&self) -> bool {
        self.tau == 0.0 && self.p == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeumannConfig {
    /// Number of powers of `S` to accumulate.
    pub k: usize,
    /// Applied to the columns of `S` once.
    pub initial_drop: DropRule,
    /// Applied to each new power before accumulation.
    pub level_drop: DropRule,
}

impl Default for NeumannConfig {
    fn default() -> Self {
        Self {
            k: 3,
            initial_drop: DropRule { tau: 0.1, p: 0 },
            level_drop: DropRule::NONE,
        }
    }
}

/// Keeps entries with `|v_i| ≥ τ · max|v|`, then at most the `p` largest of
/// those. `protect` survives whenever it is present in `v`.
pub fn numerical_drop(v: &SparseVec, rule: DropRule, protect: Option<usize>) -> SparseVec {
    if rule.is_noop() {
        return v.clone();
    }
    let threshold = rule.tau * v.max_abs();
    let mut kept: Vec<(usize, f64)> = v
        .iter()
        .filter(|(_, x)| rule.tau == 0.0 || x.abs() >= threshold)
        .collect();
    if rule.p > 0 && kept.len() > rule.p {
        kept.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
        kept.truncate(rule.p);
    }
    if let Some(pi) = protect {
        let present = v.get(pi);
        if v.indices().binary_search(&pi).is_ok() && !kept.iter().any(|&(i, _)| i == pi) {
            kept.push((pi, present));
        }
    }
    SparseVec::from_unsorted(v.len(), kept)
}

/// Pattern of `W` from the truncated series `I + S + … + S^k`.
///
/// `v0` must be block upper triangular (or block diagonal) with respect to
/// `v0_blocks` so that `V₀ = P_{V₀} A` can be inverted block by block. The
/// off-diagonal positions of `v0` are removed from the result.
pub fn neumann_pattern(
    a: &SparseMatrix,
    v0: &SubspacePattern,
    v0_blocks: &BlockStructure,
    cfg: &NeumannConfig,
) -> Result<SubspacePattern> {
    let n = a.n_cols();
    if !a.is_square() || v0.n() != n || v0_blocks.dim() != n {
        return Err(Error::DimensionMismatch("neumann_pattern operands do not conform".into()));
    }
    let v0_mat = a.project(v0);
    let v0_fact = VFactorization::new(&v0_mat, v0_blocks)?;
    let off = a.project_complement(v0);

    let s_cols: Vec<SparseVec> = (0..n)
        .into_par_iter()
        .map(|j| {
            let sj = v0_fact.solve_sparse(&off.col(j));
            numerical_drop(&sj, cfg.initial_drop, Some(j))
        })
        .collect();
    let s = SparseMatrix::from_columns(n, s_cols);

    let cols: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut pattern = vec![j];
            let mut t = SparseVec::unit(n, j);
            for _ in 0..cfg.k {
                t = numerical_drop(&s.mul_sparse_vec(&t), cfg.level_drop, Some(j));
                if t.nnz() == 0 {
                    break;
                }
                pattern = crate::sparse::merge_sorted(&pattern, t.indices());
            }
            pattern
        })
        .collect();
    SubspacePattern::from_cols_unchecked(n, cols).subtract_offdiag(v0)
}

/// Pattern of `W` whose column `j` is the union of the structures of the
/// rows of `A` listed in column `j` of `v0`, thinned by `rule` (applied to
/// `|A|ᵀ` times the indicator of that column) and with the diagonal added.
pub fn adjoint_pattern(a: &SparseMatrix, v0: &SubspacePattern, rule: DropRule) -> Result<SubspacePattern> {
    let n = a.n_cols();
    if !a.is_square() || v0.n() != n {
        return Err(Error::DimensionMismatch("adjoint_pattern operands do not conform".into()));
    }
    let at = a.transpose();
    let cols: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let pairs: Vec<(usize, f64)> = v0
                .col(j)
                .iter()
                .flat_map(|&i| at.col_iter(i).map(|(c, x)| (c, x.abs())))
                .collect();
            let w = numerical_drop(&SparseVec::from_unsorted(n, pairs), rule, Some(j));
            crate::sparse::insert_sorted(w.indices().to_vec(), j)
        })
        .collect();
    Ok(SubspacePattern::from_cols_unchecked(n, cols))
}

/// Scores of candidate positions for column `j`: the 2-norm of the matching
/// column of `Q_jᵀ`, where `Q_j` is an orthonormal basis of the range of the
/// columns of `A` listed in `w_cols`. Rows outside their support score zero.
pub fn position_scores(a: &SparseMatrix, w_cols: &[usize], positions: &[usize]) -> Result<Vec<f64>> {
    let a_j = extract_columns(a, w_cols)?;
    let solver = ColumnSolver::new(&a_j.dense_block)?;
    let q = solver.basis();
    Ok(positions
        .iter()
        .map(|&i| match a_j.row_position(i) {
            Some(r) if q.ncols() > 0 => {
                let row: Vec<f64> = (0..q.ncols()).map(|c| q[(r, c)]).collect();
                norm2(&row)
            }
            _ => 0.0,
        })
        .collect())
}

/// Greedy choice of the pattern of `V`: in column `j`, the `k_v` admissible
/// positions of `candidate` with the largest positive scores (ties to the
/// smaller index), plus the diagonal. When `k_v` covers the whole candidate
/// column it is kept as is.
pub fn select_v_pattern(
    a: &SparseMatrix,
    w: &SubspacePattern,
    candidate: &SubspacePattern,
    k_v: usize,
) -> Result<SubspacePattern> {
    let n = a.n_cols();
    if k_v == 0 {
        return Err(Error::InvalidConfig("k_V must be at least 1".into()));
    }
    if !a.is_square() || w.n() != n || candidate.n() != n {
        return Err(Error::DimensionMismatch("select_v_pattern operands do not conform".into()));
    }
    let cols = (0..n)
        .into_par_iter()
        .map(|j| {
            let cand = candidate.col(j);
            if k_v >= cand.len() {
                return Ok(crate::sparse::insert_sorted(cand.to_vec(), j));
            }
            let scores = position_scores(a, w.col(j), cand)?;
            let mut ranked: Vec<(usize, f64)> = cand
                .iter()
                .copied()
                .zip(scores)
                .filter(|(_, s)| *s > 0.0)
                .collect();
            ranked.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
            ranked.truncate(k_v);
            let mut chosen: Vec<usize> = ranked.into_iter().map(|(i, _)| i).collect();
            chosen.sort_unstable();
            Ok(crate::sparse::insert_sorted(chosen, j))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SubspacePattern::from_cols_unchecked(n, cols))
}
