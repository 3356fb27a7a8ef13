//! Sparse Cholesky factorization `P Q Pᵀ = L Lᵀ`.
//!
//! The symbolic phase (elimination tree, factor pattern, supernode partition
//! and the scatter map from `Q` into the permuted matrix) depends only on the
//! sparsity pattern and is shared between numeric factorizations of matrices
//! with the same pattern. The numeric phase is left-looking over
//! fundamental supernodes: runs of columns sharing one row structure, which
//! are factored as dense row-major blocks.

use std::sync::Arc;

use super::{Permutation, SparseSymmetric};
use crate::error::{Error, Result};

/// Pivots `d` with `d <= PIVOT_TOLERANCE * Q_kk` declare the matrix not
/// positive definite.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

#[derive(Debug)]
pub struct SymbolicCholesky {
    n: usize,
    perm: Permutation,
    /// Pattern of the input matrix the analysis was made for.
    q_col_ptr: Vec<usize>,
    q_row_idx: Vec<usize>,
    /// Row indices of the permuted upper triangle `C = P Q Pᵀ`, stored by
    /// columns (rows <= col).
    c_row_idx: Vec<usize>,
    /// `q_to_c[p]` is the position in `C` of stored entry `p` of `Q`.
    q_to_c: Vec<usize>,
    /// Factor pattern: column `j` holds rows `>= j`, diagonal first, sorted.
    /// Supernode padding may add explicitly stored zeros.
    l_col_ptr: Vec<usize>,
    l_row_idx: Vec<usize>,
    /// Entries of `C` regrouped by row, i.e. the lower triangle by columns:
    /// column `j` holds rows `low_row[low_ptr[j]..low_ptr[j + 1]]` whose
    /// values sit at `C` positions `low_src[..]`.
    low_ptr: Vec<usize>,
    low_row: Vec<usize>,
    low_src: Vec<usize>,
    /// Nonzeros of the unpadded factor.
    exact_nnz: usize,
    /// Supernode `s` spans columns `sn_ptr[s]..sn_ptr[s + 1]`.
    sn_ptr: Vec<usize>,
    sn_of: Vec<usize>,
    parent: Vec<Option<usize>>,
}

impl SymbolicCholesky {
    pub fn analyze(q: &SparseSymmetric, perm: Permutation) -> Self {
        let n = q.n();
        assert_eq!(perm.len(), n, "permutation size");

        // scatter Q's lower triangle into C = P Q Pᵀ, upper triangle by columns
        let mut counts = vec![0usize; n + 1];
        for (i, j, _) in q.iter() {
            let (a, b) = (perm.new_of(i), perm.new_of(j));
            counts[a.max(b) + 1] += 1;
        }
        for k in 0..n {
            counts[k + 1] += counts[k];
        }
        let c_col_ptr = counts.clone();
        let mut next = counts;
        let mut c_row_idx = vec![0usize; q.nnz()];
        let mut q_to_c = vec![0usize; q.nnz()];
        for (p, (i, j, _)) in q.iter().enumerate() {
            let (a, b) = (perm.new_of(i), perm.new_of(j));
            let col = a.max(b);
            let pos = next[col];
            next[col] += 1;
            c_row_idx[pos] = a.min(b);
            q_to_c[p] = pos;
        }

        // elimination tree (Liu's algorithm with path compression)
        let mut parent: Vec<Option<usize>> = vec![None; n];
        let mut ancestor: Vec<Option<usize>> = vec![None; n];
        for k in 0..n {
            for p in c_col_ptr[k]..c_col_ptr[k + 1] {
                let mut i = c_row_idx[p];
                while i < k {
                    let next_i = ancestor[i];
                    ancestor[i] = Some(k);
                    match next_i {
                        None => {
                            parent[i] = Some(k);
                            break;
                        }
                        Some(a) if a == k => break,
                        Some(a) => i = a,
                    }
                }
            }
        }

        // row patterns via row subtrees, then column counts
        let mut flag = vec![usize::MAX; n];
        let mut stack = Vec::new();
        let mut r_ptr = Vec::with_capacity(n + 1);
        let mut r_idx = Vec::new();
        r_ptr.push(0);
        let mut col_count = vec![1usize; n];
        for k in 0..n {
            flag[k] = k;
            stack.clear();
            for p in c_col_ptr[k]..c_col_ptr[k + 1] {
                let mut i = c_row_idx[p];
                if i > k {
                    continue;
                }
                while flag[i] != k {
                    stack.push(i);
                    flag[i] = k;
                    i = parent[i].expect("row subtree reaches k");
                }
            }
            // ascending order is a valid elimination order for the row solve
            let start = r_idx.len();
            r_idx.extend_from_slice(&stack);
            r_idx[start..].sort_unstable();
            for &j in &r_idx[start..] {
                col_count[j] += 1;
            }
            r_ptr.push(r_idx.len());
        }

        // exact factor pattern
        let mut exact_ptr = vec![0usize; n + 1];
        for j in 0..n {
            exact_ptr[j + 1] = exact_ptr[j] + col_count[j];
        }
        let mut exact_rows = vec![0usize; exact_ptr[n]];
        let mut fill = exact_ptr.clone();
        for k in 0..n {
            exact_rows[fill[k]] = k;
            fill[k] += 1;
        }
        for k in 0..n {
            for &j in &r_idx[r_ptr[k]..r_ptr[k + 1]] {
                exact_rows[fill[j]] = k;
                fill[j] += 1;
            }
        }

        let sn_ptr = relaxed_supernodes(&parent, &col_count);
        let mut sn_of = vec![0usize; n];
        for s in 0..sn_ptr.len().saturating_sub(1) {
            sn_of[sn_ptr[s]..sn_ptr[s + 1]].fill(s);
        }

        // padded pattern: column c of supernode [f, e) holds rows c..e and
        // the structure below the supernode, which is that of column e - 1
        let mut l_col_ptr = vec![0usize; n + 1];
        let mut l_row_idx = Vec::with_capacity(exact_rows.len());
        for s in 0..sn_ptr.len().saturating_sub(1) {
            let (f, e) = (sn_ptr[s], sn_ptr[s + 1]);
            let below = &exact_rows[exact_ptr[e - 1] + 1..exact_ptr[e]];
            for c in f..e {
                l_row_idx.extend(c..e);
                l_row_idx.extend_from_slice(below);
                l_col_ptr[c + 1] = l_row_idx.len();
            }
        }

        let mut low_ptr = vec![0usize; n + 1];
        for &j in &c_row_idx {
            low_ptr[j + 1] += 1;
        }
        for j in 0..n {
            low_ptr[j + 1] += low_ptr[j];
        }
        let mut low_row = vec![0usize; c_row_idx.len()];
        let mut low_src = vec![0usize; c_row_idx.len()];
        let mut fill = low_ptr.clone();
        for k in 0..n {
            for p in c_col_ptr[k]..c_col_ptr[k + 1] {
                let j = c_row_idx[p];
                low_row[fill[j]] = k;
                low_src[fill[j]] = p;
                fill[j] += 1;
            }
        }

        Self {
            n,
            perm,
            q_col_ptr: q.col_ptr().to_vec(),
            q_row_idx: q.row_idx().to_vec(),
            c_row_idx,
            q_to_c,
            l_col_ptr,
            l_row_idx,
            low_ptr,
            low_row,
            low_src,
            exact_nnz: exact_rows.len(),
            sn_ptr,
            sn_of,
            parent,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn perm(&self) -> &Permutation {
        &self.perm
    }

    /// Stored entries of `L`, including supernode padding.
    pub fn factor_nnz(&self) -> usize {
        self.l_row_idx.len()
    }

    /// Structural nonzeros of `L` without padding.
    pub fn exact_nnz(&self) -> usize {
        self.exact_nnz
    }

    pub fn etree_parent(&self, j: usize) -> Option<usize> {
        self.parent[j]
    }

    /// Number of supernodes in the partition.
    pub fn supernodes(&self) -> usize {
        self.sn_ptr.len() - 1
    }

    /// Columns of supernode `s`.
    pub(super) fn sn_cols(&self, s: usize) -> std::ops::Range<usize> {
        self.sn_ptr[s]..self.sn_ptr[s + 1]
    }

    /// Compressed-column pattern of `L`.
    pub(super) fn l_pattern(&self) -> (&[usize], &[usize]) {
        (&self.l_col_ptr, &self.l_row_idx)
    }

    /// Row structure shared by the columns of supernode `s`, starting with
    /// its own columns.
    pub(super) fn sn_rows(&self, s: usize) -> &[usize] {
        let f = self.sn_ptr[s];
        &self.l_row_idx[self.l_col_ptr[f]..self.l_col_ptr[f + 1]]
    }

    fn matches(&self, q: &SparseSymmetric) -> bool {
        q.n() == self.n && q.col_ptr() == self.q_col_ptr && q.row_idx() == self.q_row_idx
    }

    /// Numeric factorization of a matrix with the analyzed pattern.
    pub fn factorize(self: &Arc<Self>, q: &SparseSymmetric) -> Result<CholeskyFactor> {
        if !self.matches(q) {
            return Err(Error::InvalidModel(
                "matrix pattern differs from the symbolic analysis".into(),
            ));
        }
        let n = self.n;
        let mut c_val = vec![0.0; self.c_row_idx.len()];
        for (p, &v) in q.values().iter().enumerate() {
            c_val[self.q_to_c[p]] += v;
        }

        let mut l_val = vec![0.0; self.l_row_idx.len()];
        let n_sn = self.sn_ptr.len() - 1;
        let mut local = vec![0usize; n];
        // (descendant supernode, first row position not yet applied)
        let mut pending: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_sn];
        let mut blocks: Vec<Vec<f64>> = Vec::with_capacity(n_sn);
        let mut logdet = 0.0;
        for s in 0..n_sn {
            let (f, end) = (self.sn_ptr[s], self.sn_ptr[s + 1]);
            let w = end - f;
            let rows = self.sn_rows(s);
            let m = rows.len();
            for (i, &r) in rows.iter().enumerate() {
                local[r] = i;
            }
            let mut b = vec![0.0; m * w];
            let mut q_diag = vec![0.0; w];
            for c in 0..w {
                for t in self.low_ptr[f + c]..self.low_ptr[f + c + 1] {
                    let k = self.low_row[t];
                    let v = c_val[self.low_src[t]];
                    b[local[k] * w + c] += v;
                    if k == f + c {
                        q_diag[c] += v;
                    }
                }
            }

            for (d, p) in std::mem::take(&mut pending[s]) {
                let lk = &blocks[d];
                let rows_d = self.sn_rows(d);
                let wd = self.sn_ptr[d + 1] - self.sn_ptr[d];
                let mut q_end = p;
                while q_end < rows_d.len() && rows_d[q_end] < end {
                    q_end += 1;
                }
                for jp in p..q_end {
                    let c = rows_d[jp] - f;
                    let lj = &lk[jp * wd..(jp + 1) * wd];
                    for ip in jp..rows_d.len() {
                        b[local[rows_d[ip]] * w + c] -= dot(&lk[ip * wd..(ip + 1) * wd], lj);
                    }
                }
                if q_end < rows_d.len() {
                    pending[self.sn_of[rows_d[q_end]]].push((d, q_end));
                }
            }

            for c in 0..w {
                let (head, tail) = b.split_at_mut((c + 1) * w);
                let row_c = &mut head[c * w..];
                let d = row_c[c] - dot(&row_c[..c], &row_c[..c]);
                if !(d > PIVOT_TOLERANCE * q_diag[c].abs()) || !d.is_finite() {
                    return Err(Error::NotPositiveDefinite { column: f + c, pivot: d });
                }
                let lcc = d.sqrt();
                row_c[c] = lcc;
                logdet += 2.0 * lcc.ln();
                let row_c = &row_c[..c];
                for row_i in tail.chunks_exact_mut(w) {
                    row_i[c] = (row_i[c] - dot(&row_i[..c], row_c)) / lcc;
                }
            }
            for c in 0..w {
                let p0 = self.l_col_ptr[f + c];
                for i in c..m {
                    l_val[p0 + i - c] = b[i * w + c];
                }
            }
            if w < m {
                pending[self.sn_of[rows[w]]].push((s, w));
            }
            blocks.push(b);
        }
        Ok(CholeskyFactor {
            symbolic: Arc::clone(self),
            l_val,
            logdet,
        })
    }
}

/// Numeric Cholesky factor with its shared symbolic structure.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    symbolic: Arc<SymbolicCholesky>,
    l_val: Vec<f64>,
    logdet: f64,
}

/// Widest supernode formed by amalgamation.
const MAX_SUPERNODE: usize = 64;
/// Explicit zeros allowed in an amalgamated supernode, as a share of its
/// stored entries.
const MAX_PADDING: f64 = 0.1;

/// Partitions the columns into supernodes: runs `[f, e)` along an
/// elimination-tree chain, each column padded to the structure of the last
/// one. Padding keeps the pattern closed under the selected-inversion
/// recursion, and the dense blocks are what makes the numeric phase fast.
fn relaxed_supernodes(parent: &[Option<usize>], col_count: &[usize]) -> Vec<usize> {
    let n = parent.len();
    let mut sn_ptr = vec![0usize];
    if n == 0 {
        return sn_ptr;
    }
    let mut f = 0;
    for j in 1..n {
        let mut merge = parent[j - 1] == Some(j) && j - f < MAX_SUPERNODE;
        if merge {
            let below = col_count[j] - 1;
            let (mut stored, mut exact) = (0usize, 0usize);
            for c in f..=j {
                stored += j - c + 1 + below;
                exact += col_count[c];
            }
            merge = (stored - exact) as f64 <= MAX_PADDING * stored as f64;
        }
        if !merge {
            sn_ptr.push(j);
            f = j;
        }
    }
    sn_ptr.push(n);
    sn_ptr
}

/// Dot product with four partial sums, so the loop vectorizes. The
/// summation order is fixed, which keeps results reproducible.
pub(super) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// One-shot symbolic analysis plus numeric factorization.
pub fn factorize(q: &SparseSymmetric, perm: Permutation) -> Result<CholeskyFactor> {
    Arc::new(SymbolicCholesky::analyze(q, perm)).factorize(q)
}

impl CholeskyFactor {
    pub fn n(&self) -> usize {
        self.symbolic.n
    }

    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.symbolic
    }

    pub fn perm(&self) -> &Permutation {
        &self.symbolic.perm
    }

    /// `log |Q|`.
    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    /// Entries of column `j` of `L` as `(rows, values)`, permuted indexing.
    pub fn l_column(&self, j: usize) -> (&[usize], &[f64]) {
        let s = &self.symbolic;
        let range = s.l_col_ptr[j]..s.l_col_ptr[j + 1];
        (&s.l_row_idx[range.clone()], &self.l_val[range])
    }

    /// In place `L y = b` (permuted indexing).
    pub fn solve_l_in_place(&self, y: &mut [f64]) {
        let s = &self.symbolic;
        for j in 0..s.n {
            let p0 = s.l_col_ptr[j];
            y[j] /= self.l_val[p0];
            let yj = y[j];
            for p in p0 + 1..s.l_col_ptr[j + 1] {
                y[s.l_row_idx[p]] -= self.l_val[p] * yj;
            }
        }
    }

    /// In place `Lᵀ y = b` (permuted indexing).
    pub fn solve_lt_in_place(&self, y: &mut [f64]) {
        let s = &self.symbolic;
        for j in (0..s.n).rev() {
            let p0 = s.l_col_ptr[j];
            let mut acc = y[j];
            for p in p0 + 1..s.l_col_ptr[j + 1] {
                acc -= self.l_val[p] * y[s.l_row_idx[p]];
            }
            y[j] = acc / self.l_val[p0];
        }
    }

    /// Solves `Q x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n() {
            return Err(Error::DimensionMismatch {
                context: "solve right-hand side",
                expected: self.n(),
                found: b.len(),
            });
        }
        let mut y = self.perm().apply(b);
        self.solve_l_in_place(&mut y);
        self.solve_lt_in_place(&mut y);
        Ok(self.perm().apply_inverse(&y))
    }

    /// Maximum absolute entry of `P Q Pᵀ − L Lᵀ` over the pattern of `Q`
    /// and the factor (test helper; dense work, small matrices only).
    pub fn reconstruction_error(&self, q: &SparseSymmetric) -> f64 {
        let n = self.n();
        let mut l = nalgebra::DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let (rows, vals) = self.l_column(j);
            for (&i, &v) in rows.iter().zip(vals) {
                l[(i, j)] = v;
            }
        }
        let llt = &l * l.transpose();
        let mut pq = nalgebra::DMatrix::<f64>::zeros(n, n);
        for (i, j, v) in q.iter() {
            let (a, b) = (self.perm().new_of(i), self.perm().new_of(j));
            pq[(a, b)] = v;
            pq[(b, a)] = v;
        }
        (pq - llt).abs().max()
    }
}
