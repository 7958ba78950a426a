//! Reordering and scaling of `A` before factoring: a zero-free diagonal via
//! a maximum transversal or a maximum-product matching, row/column
//! equilibration, and a block partition from strongly connected components.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::sparse::{SparseMatrix, SubspacePattern};

/// A permutation of `{0, …, n−1}`, stored both ways.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation {
    /// `new_to_old[i]` is the original index placed at position `i`.
    new_to_old: Vec<usize>,
    old_to_new: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self {
            new_to_old: (0..n).collect(),
            old_to_new: (0..n).collect(),
        }
    }

    pub fn from_new_to_old(new_to_old: Vec<usize>) -> Result<Self> {
        let n = new_to_old.len();
        let mut old_to_new = vec![usize::MAX; n];
        for (new, &old) in new_to_old.iter().enumerate() {
            if old >= n || old_to_new[old] != usize::MAX {
                return Err(Error::InvalidStructure("not a permutation".into()));
            }
            old_to_new[old] = new;
        }
        Ok(Self {
            new_to_old,
            old_to_new,
        })
    }

    pub fn len(&self) -> usize {
        self.new_to_old.len()
    }

    pub fn is_empty(&self) -> bool {
        self.new_to_old.is_empty()
    }

    pub fn new_to_old(&self) -> &[usize] {
        &self.new_to_old
    }

    pub fn old_to_new(&self) -> &[usize] {
        &self.old_to_new
    }

    pub fn is_identity(&self) -> bool {
        self.new_to_old.iter().enumerate().all(|(i, &p)| i == p)
    }
}

/// Positive diagonal row and column scalings.
#[derive(Clone, Debug, PartialEq)]
pub struct Scaling {
    pub row_scale: Vec<f64>,
    pub col_scale: Vec<f64>,
}

impl Scaling {
    pub fn apply(&self, a: &SparseMatrix) -> SparseMatrix {
        let rows: Vec<usize> = (0..a.n_rows()).collect();
        let cols: Vec<usize> = (0..a.n_cols()).collect();
        a.permute_scale(&rows, &cols, &self.row_scale, &self.col_scale)
    }
}

/// Partition of `{0, …, n−1}` into contiguous diagonal blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockStructure {
    bounds: Vec<usize>,
    block_of: Vec<usize>,
}

impl BlockStructure {
    /// `bounds` must start at 0 and increase strictly.
    pub fn from_bounds(bounds: Vec<usize>) -> Result<Self> {
        if bounds.first() != Some(&0) || bounds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidStructure(
                "block bounds must start at 0 and increase strictly".into(),
            ));
        }
        let n = *bounds.last().unwrap();
        let mut block_of = vec![0; n];
        for (b, w) in bounds.windows(2).enumerate() {
            block_of[w[0]..w[1]].fill(b);
        }
        Ok(Self { bounds, block_of })
    }

    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let mut bounds = vec![0];
        for &s in sizes {
            bounds.push(bounds.last().unwrap() + s);
        }
        Self::from_bounds(bounds)
    }

    /// One block per index.
    pub fn singletons(n: usize) -> Self {
        Self::from_bounds((0..=n).collect()).expect("singleton bounds are valid")
    }

    pub fn dim(&self) -> usize {
        *self.bounds.last().unwrap()
    }

    pub fn bounds(&self) -> &[usize] {
        &self.bounds
    }

    pub fn n_blocks(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn max_block(&self) -> usize {
        self.bounds.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }

    #[inline]
    pub fn block_of(&self, i: usize) -> usize {
        self.block_of[i]
    }

    #[inline]
    pub fn range(&self, b: usize) -> std::ops::Range<usize> {
        self.bounds[b]..self.bounds[b + 1]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.bounds.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Finds a column permutation putting a structural nonzero on every diagonal
/// position. The returned permutation maps new column index to original
/// column index.
pub fn max_transversal(a: &SparseMatrix) -> Result<Permutation> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch("transversal needs a square matrix".into()));
    }
    let n = a.n_cols();
    const NONE: usize = usize::MAX;
    let mut row_match = vec![NONE; n];
    let mut col_match = vec![NONE; n];

    for c in 0..n {
        if a.get(c, c) != 0.0 {
            row_match[c] = c;
            col_match[c] = c;
        }
    }
    for c in 0..n {
        if col_match[c] != NONE {
            continue;
        }
        if let Some(&r) = a.col_rows(c).iter().find(|&&r| row_match[r] == NONE) {
            row_match[r] = c;
            col_match[c] = r;
        }
    }

    // Depth-first augmenting paths; `visited` is stamped with the root column.
    let mut visited = vec![NONE; n];
    let mut stack: Vec<(usize, usize)> = Vec::new();
    let mut path_rows: Vec<usize> = Vec::new();
    for root in 0..n {
        if col_match[root] != NONE {
            continue;
        }
        stack.clear();
        path_rows.clear();
        stack.push((root, 0));
        let mut augmented = false;
        while let Some(top) = stack.last_mut() {
            let (c, pos) = *top;
            let rows = a.col_rows(c);
            let next = rows[pos..]
                .iter()
                .position(|&r| visited[r] != root)
                .map(|off| pos + off);
            match next {
                Some(k) => {
                    top.1 = k + 1;
                    let r = rows[k];
                    visited[r] = root;
                    if row_match[r] == NONE {
                        path_rows.push(r);
                        for (level, &(col, _)) in stack.iter().enumerate() {
                            let row = path_rows[level];
                            row_match[row] = col;
                            col_match[col] = row;
                        }
                        augmented = true;
                        break;
                    }
                    path_rows.push(r);
                    stack.push((row_match[r], 0));
                }
                None => {
                    stack.pop();
                    path_rows.pop();
                }
            }
        }
        if !augmented {
            let rows: Vec<usize> = (0..n).filter(|&r| visited[r] == root).collect();
            return Err(Error::StructurallySingular { column: root, rows });
        }
    }
    Permutation::from_new_to_old(row_match)
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem {
    dist: f64,
    row: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed for a min-heap; ties broken by the smaller row
        other.dist.total_cmp(&self.dist).then_with(|| other.row.cmp(&self.row))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Matching that maximizes the product of the diagonal magnitudes, with the
/// scaling derived from its dual variables.
///
/// Returns the column permutation (new to old) and a scaling of `A` under
/// which every matched entry has magnitude one and no entry exceeds one.
/// The scaling is indexed by the original rows and columns.
pub fn max_product_matching(a: &SparseMatrix) -> Result<(Permutation, Scaling)> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch("matching needs a square matrix".into()));
    }
    let n = a.n_cols();
    const NONE: usize = usize::MAX;

    // cost c_ij = log max_i |a_ij| − log |a_ij| ≥ 0
    let mut col_log_max = vec![0.0; n];
    let mut cost: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for j in 0..n {
        let entries: Vec<(usize, f64)> = a.col_iter(j).filter(|(_, v)| *v != 0.0).map(|(i, v)| (i, v.abs().ln())).collect();
        if entries.is_empty() {
            return Err(Error::ZeroLine { kind: "column", index: j });
        }
        let m = entries.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::NonFinite("matrix entries"));
        }
        col_log_max[j] = m;
        cost.push(entries.into_iter().map(|(i, l)| (i, m - l)).collect());
    }

    // dual feasible start: u_i = min_j c_ij, v_j = min_i (c_ij − u_i)
    let mut u = vec![f64::INFINITY; n];
    for col in &cost {
        for &(i, c) in col {
            u[i] = u[i].min(c);
        }
    }
    if let Some(i) = u.iter().position(|x| x.is_infinite()) {
        return Err(Error::ZeroLine { kind: "row", index: i });
    }
    let mut v = vec![0.0; n];
    let mut row_match = vec![NONE; n];
    let mut col_match = vec![NONE; n];
    for (j, col) in cost.iter().enumerate() {
        v[j] = col.iter().map(|&(i, c)| c - u[i]).fold(f64::INFINITY, f64::min);
        if let Some(&(i, _)) = col.iter().find(|&&(i, c)| row_match[i] == NONE && c - u[i] - v[j] == 0.0) {
            row_match[i] = j;
            col_match[j] = i;
        }
    }

    // shortest augmenting paths on reduced costs
    let mut row_dist = vec![f64::INFINITY; n];
    let mut col_dist = vec![f64::INFINITY; n];
    let mut row_pred = vec![NONE; n];
    let mut done = vec![false; n];
    let mut touched_rows: Vec<usize> = Vec::new();
    let mut touched_cols: Vec<usize> = Vec::new();
    let mut heap = BinaryHeap::new();
    for root in 0..n {
        if col_match[root] != NONE {
            continue;
        }
        heap.clear();
        col_dist[root] = 0.0;
        touched_cols.push(root);
        let mut col = root;
        let mut end = None;
        loop {
            let d = col_dist[col];
            for &(i, c) in &cost[col] {
                if done[i] {
                    continue;
                }
                let nd = d + (c - u[i] - v[col]).max(0.0);
                if nd < row_dist[i] {
                    if row_dist[i].is_infinite() {
                        touched_rows.push(i);
                    }
                    row_dist[i] = nd;
                    row_pred[i] = col;
                    heap.push(HeapItem { dist: nd, row: i });
                }
            }
            let next = loop {
                match heap.pop() {
                    Some(it) if done[it.row] || it.dist > row_dist[it.row] => continue,
                    other => break other,
                }
            };
            let Some(HeapItem { dist, row }) = next else { break };
            done[row] = true;
            if row_match[row] == NONE {
                end = Some((row, dist));
                break;
            }
            col = row_match[row];
            col_dist[col] = dist;
            touched_cols.push(col);
        }

        let Some((last, len)) = end else {
            let mut rows: Vec<usize> = touched_rows.iter().copied().filter(|&r| done[r]).collect();
            rows.sort_unstable();
            return Err(Error::StructurallySingular { column: root, rows });
        };
        for &i in &touched_rows {
            if done[i] {
                u[i] += row_dist[i] - len;
            }
        }
        for &j in &touched_cols {
            v[j] += len - col_dist[j];
        }
        let mut i = last;
        loop {
            let j = row_pred[i];
            let prev = col_match[j];
            row_match[i] = j;
            col_match[j] = i;
            if j == root {
                break;
            }
            i = prev;
        }
        for &i in &touched_rows {
            row_dist[i] = f64::INFINITY;
            done[i] = false;
        }
        for &j in &touched_cols {
            col_dist[j] = f64::INFINITY;
        }
        touched_rows.clear();
        touched_cols.clear();
    }

    let row_scale: Vec<f64> = u.iter().map(|x| x.exp()).collect();
    let col_scale: Vec<f64> = v.iter().zip(&col_log_max).map(|(x, m)| (x - m).exp()).collect();
    if row_scale.iter().chain(&col_scale).any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(Error::NonFinite("matching scaling"));
    }
    // new column k holds the column matched to row k
    Ok((Permutation::from_new_to_old(row_match)?, Scaling { row_scale, col_scale }))
}

/// Iterative infinity-norm equilibration: each sweep divides every row and
/// column by the square root of its current largest magnitude.
pub fn equilibrate(a: &SparseMatrix, iterations: usize) -> Result<Scaling> {
    let (m, n) = (a.n_rows(), a.n_cols());
    let mut row_scale = vec![1.0; m];
    let mut col_scale = vec![1.0; n];
    let (row_max, col_max) = line_maxima(a, &row_scale, &col_scale);
    if let Some(i) = row_max.iter().position(|&x| x == 0.0) {
        return Err(Error::ZeroLine { kind: "row", index: i });
    }
    if let Some(j) = col_max.iter().position(|&x| x == 0.0) {
        return Err(Error::ZeroLine { kind: "column", index: j });
    }
    for _ in 0..iterations {
        let (row_max, col_max) = line_maxima(a, &row_scale, &col_scale);
        let converged = row_max
            .iter()
            .chain(&col_max)
            .all(|&x| (x - 1.0).abs() <= 1e-12);
        if converged {
            break;
        }
        for (s, x) in row_scale.iter_mut().zip(&row_max) {
            *s /= x.sqrt();
        }
        for (s, x) in col_scale.iter_mut().zip(&col_max) {
            *s /= x.sqrt();
        }
    }
    if row_scale.iter().chain(&col_scale).any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(Error::NonFinite("equilibration scaling"));
    }
    Ok(Scaling {
        row_scale,
        col_scale,
    })
}

/// Row and column maxima of `|diag(r) A diag(c)|`.
pub fn line_maxima(a: &SparseMatrix, r: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut row_max = vec![0.0_f64; a.n_rows()];
    let mut col_max = vec![0.0_f64; a.n_cols()];
    for j in 0..a.n_cols() {
        for (i, v) in a.col_iter(j) {
            let x = (r[i] * v * c[j]).abs();
            row_max[i] = row_max[i].max(x);
            col_max[j] = col_max[j].max(x);
        }
    }
    (row_max, col_max)
}

/// Strongly connected components of the directed graph with an edge `i → j`
/// for every off-diagonal `a_ij ≠ 0`, in the order Tarjan's algorithm
/// completes them (every edge leaves a component for an earlier one, or
/// stays inside).
pub fn strongly_connected_components(a: &SparseMatrix) -> Vec<Vec<usize>> {
    let n = a.n_cols();
    // Row i of A lists the successors of i.
    let rows = a.transpose();
    const UNSEEN: usize = usize::MAX;
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut call: Vec<(usize, usize)> = Vec::new();
    let mut next_index = 0;
    let mut comps = Vec::new();

    for root in 0..n {
        if index[root] != UNSEEN {
            continue;
        }
        call.push((root, 0));
        index[root] = next_index;
        low[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            let succ = rows.col_rows(v);
            if *pos < succ.len() {
                let w = succ[*pos];
                *pos += 1;
                if w == v {
                    continue;
                }
                if index[w] == UNSEEN {
                    index[w] = next_index;
                    low[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().unwrap();
                    on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                comp.sort_unstable();
                comps.push(comp);
            }
        }
    }
    comps
}

/// Orders the strongly connected components so that the symmetrically
/// permuted matrix is block upper triangular, and splits components larger
/// than `max_block` into contiguous chunks. Inside a component the original
/// index order is kept.
pub fn scc_block_structure(a: &SparseMatrix, max_block: usize) -> Result<(Permutation, BlockStructure)> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch("block structure needs a square matrix".into()));
    }
    if max_block == 0 {
        return Err(Error::InvalidConfig("max_block must be positive".into()));
    }
    let comps = strongly_connected_components(a);
    let mut order = Vec::with_capacity(a.n_cols());
    let mut sizes = Vec::new();
    for comp in comps.iter().rev() {
        for chunk in comp.chunks(max_block) {
            order.extend_from_slice(chunk);
            sizes.push(chunk.len());
        }
    }
    Ok((Permutation::from_new_to_old(order)?, BlockStructure::from_sizes(&sizes)?))
}

/// Shapes a subspace pattern can be built in from a block partition.
#[derive(Clone, Copy, Debug)]
pub enum PatternShape<'a> {
    /// Full diagonal blocks.
    BlockDiagonal,
    /// Everything on or above the diagonal blocks.
    BlockUpperTriangular,
    /// Diagonal plus the strictly lower triangular positions of `A`.
    GaussSeidel(&'a SparseMatrix),
}

pub fn block_pattern(blocks: &BlockStructure, shape: PatternShape<'_>) -> SubspacePattern {
    let n = blocks.dim();
    let cols = (0..n)
        .map(|j| match shape {
            PatternShape::BlockDiagonal => blocks.range(blocks.block_of(j)).collect(),
            PatternShape::BlockUpperTriangular => (0..blocks.range(blocks.block_of(j)).end).collect(),
            PatternShape::GaussSeidel(a) => {
                let mut c = vec![j];
                c.extend(a.col_rows(j).iter().copied().filter(|&i| i > j));
                c
            }
        })
        .collect();
    SubspacePattern::from_cols_unchecked(n, cols)
}

/// The structure of `A` inside a shape, with the diagonal always present.
pub fn shape_part_of(a: &SparseMatrix, blocks: &BlockStructure, shape: PatternShape<'_>) -> SubspacePattern {
    let allowed = block_pattern(blocks, shape);
    let cols = (0..a.n_cols())
        .map(|j| {
            let mut c: Vec<usize> = a
                .col_rows(j)
                .iter()
                .copied()
                .filter(|&i| allowed.contains(i, j))
                .collect();
            if let Err(pos) = c.binary_search(&j) {
                c.insert(pos, j);
            }
            c
        })
        .collect();
    SubspacePattern::from_cols_unchecked(a.n_cols(), cols)
}

/// A system brought to factoring form: `B = diag(r) A[row_perm, col_perm]
/// diag(c)` with a zero-free diagonal and a block partition.
#[derive(Clone, Debug)]
pub struct Preprocessed {
    pub matrix: SparseMatrix,
    /// New-to-old row map.
    pub row_perm: Vec<usize>,
    /// New-to-old column map.
    pub col_perm: Vec<usize>,
    pub row_scale: Vec<f64>,
    pub col_scale: Vec<f64>,
    pub blocks: BlockStructure,
}

/// Maximum-product matching with its scaling, equilibration sweeps on top
/// of that, and the block partition, in that order.
pub fn preprocess(a: &SparseMatrix, max_block: usize, equilibration_sweeps: usize) -> Result<Preprocessed> {
    let n = a.n_cols();
    let ident: Vec<usize> = (0..n).collect();
    let (t, dual) = max_product_matching(a)?;
    let matched_col_scale: Vec<f64> = t.new_to_old().iter().map(|&j| dual.col_scale[j]).collect();
    let a1 = a.permute_scale(&ident, t.new_to_old(), &dual.row_scale, &matched_col_scale);
    let eq = equilibrate(&a1, equilibration_sweeps)?;
    let scaling = Scaling {
        row_scale: eq.row_scale.iter().zip(&dual.row_scale).map(|(x, y)| x * y).collect(),
        col_scale: eq.col_scale.iter().zip(&matched_col_scale).map(|(x, y)| x * y).collect(),
    };
    let a2 = eq.apply(&a1);
    let (s, blocks) = scc_block_structure(&a2, max_block)?;
    let s = s.new_to_old();

    let row_perm: Vec<usize> = s.to_vec();
    let col_perm: Vec<usize> = s.iter().map(|&k| t.new_to_old()[k]).collect();
    let row_scale: Vec<f64> = s.iter().map(|&k| scaling.row_scale[k]).collect();
    let col_scale: Vec<f64> = s.iter().map(|&k| scaling.col_scale[k]).collect();
    let matrix = a.permute_scale(&row_perm, &col_perm, &row_scale, &col_scale);
    Ok(Preprocessed {
        matrix,
        row_perm,
        col_perm,
        row_scale,
        col_scale,
        blocks,
    })
}

impl Preprocessed {
    /// Right-hand side of the transformed system for `A x = b`.
    pub fn transform_rhs(&self, b: &[f64]) -> Vec<f64> {
        self.row_perm
            .iter()
            .zip(&self.row_scale)
            .map(|(&p, &s)| s * b[p])
            .collect()
    }

    /// Maps a solution of the transformed system back to `x`.
    pub fn recover_solution(&self, y: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; y.len()];
        for (k, (&p, &s)) in self.col_perm.iter().zip(&self.col_scale).enumerate() {
            x[p] = s * y[k];
        }
        x
    }
}
