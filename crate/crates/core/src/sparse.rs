//! Compressed sparse column storage, sparse vectors, standard matrix
//! subspaces (sparsity patterns) and Matrix Market I/O.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

/// Real sparse matrix in compressed sparse column form.
///
/// Row indices are strictly increasing within each column and no explicit
/// zeros are stored.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Validates raw CSC arrays. Explicit zeros are removed.
    pub fn from_csc(
        n_rows: usize,
        n_cols: usize,
        col_ptr: Vec<usize>,
        row_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if col_ptr.len() != n_cols + 1 || col_ptr[0] != 0 {
            return Err(Error::InvalidStructure(
                "col_ptr must have n_cols + 1 entries starting at 0".into(),
            ));
        }
        if row_idx.len() != values.len() || *col_ptr.last().unwrap() != row_idx.len() {
            return Err(Error::InvalidStructure(
                "col_ptr, row_idx and values disagree on nnz".into(),
            ));
        }
        for j in 0..n_cols {
            if col_ptr[j] > col_ptr[j + 1] {
                return Err(Error::InvalidStructure(format!("col_ptr decreases at column {j}")));
            }
            let rows = &row_idx[col_ptr[j]..col_ptr[j + 1]];
            if rows.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidStructure(format!(
                    "row indices of column {j} are not strictly increasing"
                )));
            }
            if rows.last().is_some_and(|&r| r >= n_rows) {
                return Err(Error::InvalidStructure(format!(
                    "row index out of range in column {j}"
                )));
            }
        }
        let mut m = Self {
            n_rows,
            n_cols,
            col_ptr,
            row_idx,
            values,
        };
        m.drop_zeros();
        Ok(m)
    }

    /// Assembles from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut t = triplets.to_vec();
        if let Some(&(i, j, _)) = t.iter().find(|&&(i, j, _)| i >= n_rows || j >= n_cols) {
            return Err(Error::InvalidStructure(format!(
                "entry ({i}, {j}) outside a {n_rows}x{n_cols} matrix"
            )));
        }
        t.sort_by_key(|&(i, j, _)| (j, i));
        let mut col_ptr = vec![0usize; n_cols + 1];
        let mut row_idx = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in t {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_idx.push(i);
                values.push(v);
                col_ptr[j + 1] += 1;
                last = Some((i, j));
            }
        }
        for j in 0..n_cols {
            col_ptr[j + 1] += col_ptr[j];
        }
        let mut m = Self {
            n_rows,
            n_cols,
            col_ptr,
            row_idx,
            values,
        };
        m.drop_zeros();
        Ok(m)
    }

    /// Builds from sparse columns of a common length.
    pub fn from_columns(n_rows: usize, columns: Vec<SparseVec>) -> Self {
        let n_cols = columns.len();
        let mut col_ptr = Vec::with_capacity(n_cols + 1);
        col_ptr.push(0);
        let nnz = columns.iter().map(SparseVec::nnz).sum();
        let mut row_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for c in columns {
            debug_assert_eq!(c.len(), n_rows);
            for (i, v) in c.iter() {
                if v != 0.0 {
                    row_idx.push(i);
                    values.push(v);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Self {
            n_rows,
            n_cols,
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_dense(m: &DenseMatrix) -> Self {
        let cols = (0..m.ncols())
            .map(|j| SparseVec::from_dense(m.col(j)))
            .collect();
        Self::from_columns(m.nrows(), cols)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for j in 0..self.n_cols {
            for (i, v) in self.col_iter(j) {
                d[(i, j)] = v;
            }
        }
        d
    }

    fn drop_zeros(&mut self) {
        if !self.values.contains(&0.0) {
            return;
        }
        let mut w = 0;
        let mut start = 0;
        for j in 0..self.n_cols {
            let end = self.col_ptr[j + 1];
            for k in start..end {
                if self.values[k] != 0.0 {
                    self.row_idx[w] = self.row_idx[k];
                    self.values[w] = self.values[k];
                    w += 1;
                }
            }
            start = end;
            self.col_ptr[j + 1] = w;
        }
        self.row_idx.truncate(w);
        self.values.truncate(w);
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_square(&self) -> bool {
        self.n_rows == self.n_cols
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_indices(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn col_rows(&self, j: usize) -> &[usize] {
        &self.row_idx[self.col_ptr[j]..self.col_ptr[j + 1]]
    }

    #[inline]
    pub fn col_values(&self, j: usize) -> &[f64] {
        &self.values[self.col_ptr[j]..self.col_ptr[j + 1]]
    }

    pub fn col_iter(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.col_rows(j).iter().copied().zip(self.col_values(j).iter().copied())
    }

    pub fn col(&self, j: usize) -> SparseVec {
        SparseVec {
            n: self.n_rows,
            indices: self.col_rows(j).to_vec(),
            values: self.col_values(j).to_vec(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self.col_rows(j).binary_search(&i) {
            Ok(k) => self.col_values(j)[k],
            Err(_) => 0.0,
        }
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.n_rows + 1];
        for &i in &self.row_idx {
            counts[i + 1] += 1;
        }
        for i in 0..self.n_rows {
            counts[i + 1] += counts[i];
        }
        let col_ptr = counts.clone();
        let mut next = counts;
        let mut row_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for j in 0..self.n_cols {
            for (i, v) in self.col_iter(j) {
                let k = next[i];
                row_idx[k] = j;
                values[k] = v;
                next[i] += 1;
            }
        }
        Self {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            col_ptr,
            row_idx,
            values,
        }
    }

    /// `y = A x`.
    pub fn spmv(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols, "spmv dimension mismatch");
        let mut y = vec![0.0; self.n_rows];
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            for (i, v) in self.col_iter(j) {
                y[i] += v * xj;
            }
        }
        y
    }

    /// `A x` for a sparse `x`, with sorted output and cancellations kept
    /// structurally (an exact zero sum is still stored).
    pub fn mul_sparse_vec(&self, x: &SparseVec) -> SparseVec {
        assert_eq!(x.len(), self.n_cols, "dimension mismatch in sparse product");
        let mut pairs: Vec<(usize, f64)> = Vec::new();
        for (j, xj) in x.iter() {
            pairs.extend(self.col_iter(j).map(|(i, v)| (i, v * xj)));
        }
        SparseVec::from_unsorted(self.n_rows, pairs)
    }

    /// Sparse-sparse product `A B`, formed column by column.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.n_cols != other.n_rows {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} times {}x{}",
                self.n_rows, self.n_cols, other.n_rows, other.n_cols
            )));
        }
        let cols: Vec<SparseVec> = (0..other.n_cols)
            .into_par_iter()
            .map(|j| self.mul_sparse_vec(&other.col(j)))
            .collect();
        Ok(Self::from_columns(self.n_rows, cols))
    }

    /// `B[i, k] = row_scale[i] · A[row_perm[i], col_perm[k]] · col_scale[k]`,
    /// with permutations given as new-to-old index maps.
    pub fn permute_scale(
        &self,
        row_perm: &[usize],
        col_perm: &[usize],
        row_scale: &[f64],
        col_scale: &[f64],
    ) -> Self {
        assert_eq!(row_perm.len(), self.n_rows);
        assert_eq!(col_perm.len(), self.n_cols);
        let mut row_new = vec![0usize; self.n_rows];
        for (new, &old) in row_perm.iter().enumerate() {
            row_new[old] = new;
        }
        let cols = col_perm
            .iter()
            .enumerate()
            .map(|(k, &old)| {
                let pairs = self
                    .col_iter(old)
                    .map(|(i, v)| {
                        let ni = row_new[i];
                        (ni, row_scale[ni] * v * col_scale[k])
                    })
                    .collect();
                SparseVec::from_unsorted(self.n_rows, pairs)
            })
            .collect();
        Self::from_columns(self.n_rows, cols)
    }

    /// Largest column absolute sum.
    pub fn norm_one(&self) -> f64 {
        (0..self.n_cols)
            .map(|j| self.col_values(j).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        crate::dense::norm2(&self.values)
    }

    /// Keeps only the entries inside `pattern` (the orthogonal projection
    /// onto the standard subspace).
    pub fn project(&self, pattern: &SubspacePattern) -> Self {
        self.filter_by(pattern, true)
    }

    /// Keeps only the entries outside `pattern`.
    pub fn project_complement(&self, pattern: &SubspacePattern) -> Self {
        self.filter_by(pattern, false)
    }

    fn filter_by(&self, pattern: &SubspacePattern, inside: bool) -> Self {
        assert_eq!(pattern.n(), self.n_cols);
        let cols = (0..self.n_cols)
            .map(|j| {
                let allowed = pattern.col(j);
                let (indices, values) = self
                    .col_iter(j)
                    .filter(|(i, _)| allowed.binary_search(i).is_ok() == inside)
                    .unzip();
                SparseVec {
                    n: self.n_rows,
                    indices,
                    values,
                }
            })
            .collect();
        Self::from_columns(self.n_rows, cols)
    }

    /// Whether every stored entry lies inside `pattern`.
    pub fn conforms_to(&self, pattern: &SubspacePattern) -> bool {
        pattern.n() == self.n_cols
            && (0..self.n_cols).all(|j| {
                let allowed = pattern.col(j);
                self.col_rows(j).iter().all(|i| allowed.binary_search(i).is_ok())
            })
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_cols.min(self.n_rows)).map(|j| self.get(j, j)).collect()
    }
}

/// `‖A W − V‖_F`, accumulated column by column without densifying.
pub fn residual_fro(a: &SparseMatrix, w: &SparseMatrix, v: &SparseMatrix) -> Result<f64> {
    if a.n_cols() != w.n_rows() || a.n_rows() != v.n_rows() || w.n_cols() != v.n_cols() {
        return Err(Error::DimensionMismatch("residual_fro operands do not conform".into()));
    }
    let per_col: Vec<f64> = (0..w.n_cols())
        .into_par_iter()
        .map(|j| {
            let aw = a.mul_sparse_vec(&w.col(j));
            aw.sub(&v.col(j)).norm2_squared()
        })
        .collect();
    Ok(per_col.iter().sum::<f64>().sqrt())
}

/// Sparse vector with sorted, unique indices.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SparseVec {
    n: usize,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseVec {
    pub fn new(n: usize, indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::InvalidStructure("indices and values differ in length".into()));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) || indices.last().is_some_and(|&i| i >= n) {
            return Err(Error::InvalidStructure(
                "sparse vector indices must be sorted, unique and in range".into(),
            ));
        }
        Ok(Self { n, indices, values })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn unit(n: usize, i: usize) -> Self {
        Self {
            n,
            indices: vec![i],
            values: vec![1.0],
        }
    }

    /// Sorts and sums duplicate indices.
    pub fn from_unsorted(n: usize, mut pairs: Vec<(usize, f64)>) -> Self {
        pairs.sort_by_key(|p| p.0);
        let mut indices: Vec<usize> = Vec::with_capacity(pairs.len());
        let mut values: Vec<f64> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            if indices.last() == Some(&i) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(i);
                values.push(v);
            }
        }
        Self { n, indices, values }
    }

    pub fn from_dense(x: &[f64]) -> Self {
        let (indices, values) = x
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .unzip();
        Self {
            n: x.len(),
            indices,
            values,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for (i, v) in self.iter() {
            d[i] = v;
        }
        d
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn get(&self, i: usize) -> f64 {
        match self.indices.binary_search(&i) {
            Ok(k) => self.values[k],
            Err(_) => 0.0,
        }
    }

    pub fn norm2_squared(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn norm2(&self) -> f64 {
        crate::dense::norm2(&self.values)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `self − other` over the union of supports.
    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!(self.n, other.n);
        let mut pairs: Vec<(usize, f64)> = self.iter().collect();
        pairs.extend(other.iter().map(|(i, v)| (i, -v)));
        Self::from_unsorted(self.n, pairs)
    }

    /// Keeps entries for which `keep(index, value)` holds.
    pub fn retain(&mut self, mut keep: impl FnMut(usize, f64) -> bool) {
        let mut w = 0;
        for k in 0..self.indices.len() {
            if keep(self.indices[k], self.values[k]) {
                self.indices[w] = self.indices[k];
                self.values[w] = self.values[k];
                w += 1;
            }
        }
        self.indices.truncate(w);
        self.values.truncate(w);
    }
}

/// A standard matrix subspace of `n × n` matrices, given by its allowed row
/// indices per column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubspacePattern {
    n: usize,
    cols: Vec<Vec<usize>>,
}

impl SubspacePattern {
    /// Each column must be nonempty, sorted, unique and inside `[0, n)`.
    pub fn new(n: usize, cols: Vec<Vec<usize>>) -> Result<Self> {
        if cols.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "pattern of dimension {n} needs {n} columns, got {}",
                cols.len()
            )));
        }
        for (j, c) in cols.iter().enumerate() {
            if c.is_empty() {
                return Err(Error::InvalidStructure(format!("pattern column {j} is empty")));
            }
            if c.windows(2).any(|w| w[0] >= w[1]) || *c.last().unwrap() >= n {
                return Err(Error::InvalidStructure(format!(
                    "pattern column {j} must be sorted, unique and in range"
                )));
            }
        }
        Ok(Self { n, cols })
    }

    pub(crate) fn from_cols_unchecked(n: usize, cols: Vec<Vec<usize>>) -> Self {
        debug_assert!(Self::new(n, cols.clone()).is_ok());
        Self { n, cols }
    }

    pub fn diagonal(n: usize) -> Self {
        Self {
            n,
            cols: (0..n).map(|j| vec![j]).collect(),
        }
    }

    pub fn full(n: usize) -> Self {
        Self {
            n,
            cols: (0..n).map(|_| (0..n).collect()).collect(),
        }
    }

    /// Pattern of a square matrix, with the diagonal added.
    pub fn from_matrix(a: &SparseMatrix) -> Self {
        assert!(a.is_square(), "pattern of a non-square matrix");
        let cols = (0..a.n_cols())
            .map(|j| insert_sorted(a.col_rows(j).to_vec(), j))
            .collect();
        Self { n: a.n_cols(), cols }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[usize] {
        &self.cols[j]
    }

    pub fn cols(&self) -> &[Vec<usize>] {
        &self.cols
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.cols[j].binary_search(&i).is_ok()
    }

    pub fn nnz(&self) -> usize {
        self.cols.iter().map(Vec::len).sum()
    }

    pub fn has_full_diagonal(&self) -> bool {
        (0..self.n).all(|j| self.contains(j, j))
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.n == other.n
            && self
                .cols
                .iter()
                .zip(&other.cols)
                .all(|(a, b)| a.iter().all(|i| b.binary_search(i).is_ok()))
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        let cols = self
            .cols
            .iter()
            .zip(&other.cols)
            .map(|(a, b)| merge_sorted(a, b))
            .collect();
        Ok(Self { n: self.n, cols })
    }

    /// Removes from each column of `self` the off-diagonal positions of the
    /// same column of `v0`. The diagonal of `self` is kept; a column that
    /// would become empty keeps just its diagonal.
    pub fn subtract_offdiag(&self, v0: &Self) -> Result<Self> {
        self.check_dim(v0)?;
        let cols = self
            .cols
            .iter()
            .zip(&v0.cols)
            .enumerate()
            .map(|(j, (w, v))| {
                let kept: Vec<usize> = w
                    .iter()
                    .copied()
                    .filter(|&i| i == j || v.binary_search(&i).is_err())
                    .collect();
                if kept.is_empty() {
                    vec![j]
                } else {
                    kept
                }
            })
            .collect();
        Ok(Self { n: self.n, cols })
    }

    fn check_dim(&self, other: &Self) -> Result<()> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch(format!(
                "patterns of dimension {} and {}",
                self.n, other.n
            )));
        }
        Ok(())
    }
}

/// Free-function form of [`SubspacePattern::subtract_offdiag`].
pub fn pattern_subtract_offdiag(w: &SubspacePattern, v0: &SubspacePattern) -> Result<SubspacePattern> {
    w.subtract_offdiag(v0)
}

pub(crate) fn insert_sorted(mut v: Vec<usize>, x: usize) -> Vec<usize> {
    if let Err(pos) = v.binary_search(&x) {
        v.insert(pos, x);
    }
    v
}

pub(crate) fn merge_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut k) = (0, 0);
    while i < a.len() && k < b.len() {
        match a[i].cmp(&b[k]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[k]);
                k += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                k += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[k..]);
    out
}

/// Selected columns of a sparse matrix, compressed to the rows where they
/// have nonzeros.
#[derive(Clone, Debug)]
pub struct ColumnSubmatrix {
    pub n_rows: usize,
    pub cols: Vec<usize>,
    /// Sorted global row indices; `dense_block` row `r` is global row
    /// `active_rows[r]`.
    pub active_rows: Vec<usize>,
    pub dense_block: DenseMatrix,
}

/// Extracts `A[:, cols]` restricted to the union of the column supports.
pub fn extract_columns(a: &SparseMatrix, cols: &[usize]) -> Result<ColumnSubmatrix> {
    if cols.is_empty() {
        return Err(Error::EmptyColumnSet);
    }
    if cols.windows(2).any(|w| w[0] >= w[1]) || *cols.last().unwrap() >= a.n_cols() {
        return Err(Error::InvalidStructure(
            "column selection must be sorted, unique and in range".into(),
        ));
    }
    let mut active: Vec<usize> = cols.iter().flat_map(|&c| a.col_rows(c).iter().copied()).collect();
    active.sort_unstable();
    active.dedup();
    let mut block = DenseMatrix::zeros(active.len(), cols.len());
    for (k, &c) in cols.iter().enumerate() {
        // Both lists are sorted, so walk them together.
        let mut r = 0;
        for (i, v) in a.col_iter(c) {
            while active[r] < i {
                r += 1;
            }
            block[(r, k)] = v;
        }
    }
    Ok(ColumnSubmatrix {
        n_rows: a.n_rows(),
        cols: cols.to_vec(),
        active_rows: active,
        dense_block: block,
    })
}

impl ColumnSubmatrix {
    pub fn row_position(&self, global_row: usize) -> Option<usize> {
        self.active_rows.binary_search(&global_row).ok()
    }

    /// Splits `rhs` into its values on the active rows and the 2-norm of the
    /// remainder.
    pub fn gather(&self, rhs: &SparseVec) -> (Vec<f64>, f64) {
        let mut inside = vec![0.0; self.active_rows.len()];
        let mut outside = Vec::new();
        for (i, v) in rhs.iter() {
            match self.row_position(i) {
                Some(r) => inside[r] = v,
                None => outside.push(v),
            }
        }
        (inside, crate::dense::norm2(&outside))
    }

    /// Scatters a compressed column back to a sparse `n`-vector.
    pub fn scatter(&self, compressed: &[f64]) -> SparseVec {
        let (indices, values) = self
            .active_rows
            .iter()
            .zip(compressed)
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (*i, *v))
            .unzip();
        SparseVec {
            n: self.n_rows,
            indices,
            values,
        }
    }

    /// Block column `k` as a sparse vector in global coordinates.
    pub fn column(&self, k: usize) -> SparseVec {
        self.scatter(self.dense_block.col(k))
    }

    /// Drops the listed global rows (sorted) from the block.
    pub fn without_rows(&self, rows: &[usize]) -> Self {
        let keep: Vec<usize> = (0..self.active_rows.len())
            .filter(|&r| rows.binary_search(&self.active_rows[r]).is_err())
            .collect();
        Self {
            n_rows: self.n_rows,
            cols: self.cols.clone(),
            active_rows: keep.iter().map(|&r| self.active_rows[r]).collect(),
            dense_block: self.dense_block.select_rows(&keep),
        }
    }
}

/// Reads a Matrix Market coordinate file (`real` or `integer`, `general`,
/// `symmetric` or `skew-symmetric`).
pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<SparseMatrix> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_matrix_market(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

#[derive(Clone, Copy, PartialEq)]
enum Symmetry {
    General,
    Symmetric,
    Skew,
}

/// Parses Matrix Market text from any reader.
pub fn parse_matrix_market(reader: impl BufRead) -> Result<SparseMatrix> {
    let io_err = |source| Error::Io {
        path: Default::default(),
        source,
    };
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, message: "empty file".into() })?;
    let header = header.map_err(io_err)?;
    let tokens: Vec<String> = header.split_whitespace().map(str::to_lowercase).collect();
    if tokens.len() < 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(Error::Parse {
            line: 1,
            message: "missing '%%MatrixMarket matrix' banner".into(),
        });
    }
    if tokens[2] != "coordinate" {
        return Err(Error::UnsupportedFormat(format!("{} storage", tokens[2])));
    }
    match tokens[3].as_str() {
        "real" | "integer" | "double" => {}
        other => return Err(Error::UnsupportedFormat(format!("{other} field"))),
    }
    let symmetry = match tokens[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        "skew-symmetric" => Symmetry::Skew,
        other => return Err(Error::UnsupportedFormat(format!("{other} symmetry"))),
    };

    let mut size: Option<(usize, usize, usize)> = None;
    let mut triplets = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(io_err)?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let parts: Vec<&str> = t.split_whitespace().collect();
        let bad = |message: String| Error::Parse { line: lineno, message };
        match size {
            None => {
                if parts.len() != 3 {
                    return Err(bad("size line needs rows, columns and entries".into()));
                }
                let p = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("bad size '{s}': {e}")));
                let (m, n, nnz) = (p(parts[0])?, p(parts[1])?, p(parts[2])?);
                triplets.reserve(if symmetry == Symmetry::General { nnz } else { 2 * nnz });
                size = Some((m, n, nnz));
            }
            Some((m, n, _)) => {
                if parts.len() < 3 {
                    return Err(bad("entry needs row, column and value".into()));
                }
                let i: usize = parts[0].parse().map_err(|e| bad(format!("bad row index: {e}")))?;
                let j: usize = parts[1].parse().map_err(|e| bad(format!("bad column index: {e}")))?;
                let v: f64 = parts[2].parse().map_err(|e| bad(format!("bad value '{}': {e}", parts[2])))?;
                if i == 0 || j == 0 || i > m || j > n {
                    return Err(bad(format!("index ({i}, {j}) outside {m}x{n}")));
                }
                let (i, j) = (i - 1, j - 1);
                triplets.push((i, j, v));
                if i != j {
                    match symmetry {
                        Symmetry::General => {}
                        Symmetry::Symmetric => triplets.push((j, i, v)),
                        Symmetry::Skew => triplets.push((j, i, -v)),
                    }
                }
            }
        }
    }
    let (m, n, nnz) = size.ok_or_else(|| Error::Parse {
        line: 1,
        message: "missing size line".into(),
    })?;
    let stored = triplets
        .iter()
        .filter(|(i, j, _)| symmetry == Symmetry::General || i >= j)
        .count();
    if stored != nnz {
        return Err(Error::Parse {
            line: 0,
            message: format!("header announces {nnz} entries, file has {stored}"),
        });
    }
    SparseMatrix::from_triplets(m, n, &triplets)
}

/// Writes `a` as a `general` real coordinate file. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_matrix_market(a: &SparseMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(32 * a.nnz() + 64);
    out.push_str("%%MatrixMarket matrix coordinate real general\n");
    let _ = writeln!(out, "{} {} {}", a.n_rows(), a.n_cols(), a.nnz());
    for j in 0..a.n_cols() {
        for (i, v) in a.col_iter(j) {
            let _ = writeln!(out, "{} {} {:e}", i + 1, j + 1, v);
        }
    }
    let mut f = fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(out.as_bytes()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
