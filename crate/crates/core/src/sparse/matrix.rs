use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Symmetric sparse matrix stored as its lower triangle in compressed
/// column form. Row indices are strictly increasing inside each column, so
/// the diagonal (when present) is the first entry of its column.
///
/// Explicit zeros are kept: precision builders rely on a sparsity pattern
/// that does not depend on parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymmetric {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymmetric {
    /// Builds from `(row, col, value)` triplets. Entries in the upper
    /// triangle are mirrored to the lower one and duplicates are summed.
    pub fn from_triplets<I>(n: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for (r, c, v) in triplets {
            if r >= n || c >= n {
                return Err(Error::DimensionMismatch {
                    context: "sparse triplet index",
                    expected: n,
                    found: r.max(c),
                });
            }
            let (r, c) = if r >= c { (r, c) } else { (c, r) };
            entries.push((c, r, v));
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (c, r, v) in entries {
            if last == Some((c, r)) {
                *values.last_mut().expect("nonempty") += v;
                continue;
            }
            last = Some((c, r));
            col_ptr[c + 1] += 1;
            row_idx.push(r);
            values.push(v);
        }
        for j in 0..n {
            col_ptr[j + 1] += col_ptr[j];
        }
        Ok(Self {
            n,
            col_ptr,
            row_idx,
            values,
        })
    }

    /// Assembles from raw compressed lower-triangular arrays after checking
    /// the storage invariants.
    pub fn from_raw(
        n: usize,
        col_ptr: Vec<usize>,
        row_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if col_ptr.len() != n + 1 || row_idx.len() != values.len() || col_ptr[n] != row_idx.len()
        {
            return Err(Error::InvalidModel("inconsistent compressed arrays".into()));
        }
        for j in 0..n {
            let rows = &row_idx[col_ptr[j]..col_ptr[j + 1]];
            if rows.iter().any(|&r| r < j || r >= n) || rows.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidModel(format!(
                    "column {j} violates lower-triangular sorted storage"
                )));
            }
        }
        Ok(Self {
            n,
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self {
            n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            values: d.to_vec(),
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "square matrix",
                expected: n,
                found: m.ncols(),
            });
        }
        let mut t = Vec::new();
        for j in 0..n {
            for i in j..n {
                if m[(i, j)] != 0.0 || i == j {
                    t.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(n, t)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored lower-triangle entries.
    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Rows and values stored in column `j` (rows `>= j`).
    pub fn column(&self, j: usize) -> (&[usize], &[f64]) {
        let range = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.row_idx[range.clone()], &self.values[range])
    }

    /// Iterates over stored `(row, col, value)` with `row >= col`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |j| {
            (self.col_ptr[j]..self.col_ptr[j + 1]).map(move |p| (self.row_idx[p], j, self.values[p]))
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let (rows, vals) = self.column(c);
        match rows.binary_search(&r) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.get(j, j)).collect()
    }

    /// True when every diagonal position is stored.
    pub fn has_full_diagonal(&self) -> bool {
        (0..self.n).all(|j| {
            let (rows, _) = self.column(j);
            rows.first() == Some(&j)
        })
    }

    pub fn same_pattern(&self, other: &Self) -> bool {
        self.n == other.n && self.col_ptr == other.col_ptr && self.row_idx == other.row_idx
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "mul_vec dimension");
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[p];
                let v = self.values[p];
                y[i] += v * x[j];
                if i != j {
                    y[j] += v * x[i];
                }
            }
        }
        y
    }

    /// `xᵀ Q x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[p];
                let v = self.values[p];
                if i == j {
                    s += v * x[i] * x[i];
                } else {
                    s += 2.0 * v * x[i] * x[j];
                }
            }
        }
        s
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.scale(s);
        self
    }

    /// Entrywise sum over the union pattern.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch {
                context: "sparse add",
                expected: self.n,
                found: other.n,
            });
        }
        Self::from_triplets(self.n, self.iter().chain(other.iter()))
    }

    /// Kronecker product `a ⊗ b`, indexed so that block `(s, t)` of size
    /// `b.n()` carries `a[s, t] * b`.
    pub fn kron(a: &Self, b: &Self) -> Self {
        let nb = b.n;
        let mut t = Vec::with_capacity(a.nnz() * b.nnz() * 2);
        for (s, u, av) in a.iter() {
            for j in 0..nb {
                for p in b.col_ptr[j]..b.col_ptr[j + 1] {
                    let i = b.row_idx[p];
                    let v = av * b.values[p];
                    t.push((s * nb + i, u * nb + j, v));
                    if s != u && i != j {
                        // mirrored block also carries the transposed offdiagonal entry
                        t.push((s * nb + j, u * nb + i, v));
                    }
                }
            }
        }
        Self::from_triplets(a.n * nb, t).expect("kron indices are in range")
    }

    /// Block-diagonal assembly.
    pub fn block_diag(blocks: &[&Self]) -> Self {
        let n: usize = blocks.iter().map(|b| b.n).sum();
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        let mut offset = 0;
        for b in blocks {
            for j in 0..b.n {
                let (rows, vals) = b.column(j);
                row_idx.extend(rows.iter().map(|r| r + offset));
                values.extend_from_slice(vals);
                col_ptr.push(row_idx.len());
            }
            offset += b.n;
        }
        Self {
            n,
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.iter() {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m
    }

    /// Writes the plain-text triplet format: a header `n nnz` followed by
    /// `row col value` lines of the lower triangle, 0-based.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.n, self.nnz())?;
        for (i, j, v) in self.iter() {
            writeln!(w, "{i} {j} {v:e}")?;
        }
        Ok(())
    }

    pub fn read_triplets<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty triplet file".into()))??;
        let mut it = header.split_whitespace();
        let parse_usize = |s: Option<&str>, what: &str| -> Result<usize> {
            s.ok_or_else(|| Error::Parse(format!("missing {what}")))?
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("{what}: {e}")))
        };
        let n = parse_usize(it.next(), "n")?;
        let nnz = parse_usize(it.next(), "nnz")?;
        let mut t = Vec::with_capacity(nnz);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut f = line.split_whitespace();
            let i = parse_usize(f.next(), "row")?;
            let j = parse_usize(f.next(), "col")?;
            let v: f64 = f
                .next()
                .ok_or_else(|| Error::Parse("missing value".into()))?
                .parse()
                .map_err(|e| Error::Parse(format!("value: {e}")))?;
            if i < j {
                return Err(Error::Parse(format!("entry ({i},{j}) is not in the lower triangle")));
            }
            t.push((i, j, v));
        }
        if t.len() != nnz {
            return Err(Error::Parse(format!("header declares {nnz} entries, found {}", t.len())));
        }
        let m = Self::from_triplets(n, t)?;
        if m.nnz() != nnz {
            return Err(Error::Parse("duplicate entries in triplet file".into()));
        }
        Ok(m)
    }
}

/// General sparse matrix in compressed row form (observation matrices,
/// projectors).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from triplets, summing duplicates and dropping nothing.
    pub fn from_triplets<I>(nrows: usize, ncols: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        if let Some(&(r, c, _)) = entries.iter().find(|(r, c, _)| *r >= nrows || *c >= ncols) {
            return Err(Error::DimensionMismatch {
                context: "sparse matrix index",
                expected: if r >= nrows { nrows } else { ncols },
                found: if r >= nrows { r } else { c },
            });
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().expect("nonempty") += v;
                continue;
            }
            last = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Builds row by row from sparse `(col, value)` lists.
    pub fn from_rows(ncols: usize, rows: &[Vec<(usize, f64)>]) -> Result<Self> {
        Self::from_triplets(
            rows.len(),
            ncols,
            rows.iter()
                .enumerate()
                .flat_map(|(i, r)| r.iter().map(move |&(c, v)| (i, c, v))),
        )
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[range.clone()], &self.values[range])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.iter()
            .position(|&c| c == j)
            .map(|p| vals[p])
            .unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |p| (i, self.col_idx[p], self.values[p]))
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "mul_vec dimension");
        (0..self.nrows)
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum()
            })
            .collect()
    }

    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.nrows, "tr_mul_vec dimension");
        let mut x = vec![0.0; self.ncols];
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                x[j] += a * y[i];
            }
        }
        x
    }

    /// Rows `rows` in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for &i in rows {
            let (c, v) = self.row(i);
            col_idx.extend_from_slice(c);
            values.extend_from_slice(v);
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows: rows.len(),
            ncols: self.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Vertical concatenation.
    pub fn vstack(blocks: &[&Self]) -> Result<Self> {
        let ncols = blocks.first().map(|b| b.ncols).unwrap_or(0);
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut nrows = 0;
        for b in blocks {
            if b.ncols != ncols {
                return Err(Error::DimensionMismatch {
                    context: "vstack columns",
                    expected: ncols,
                    found: b.ncols,
                });
            }
            for i in 0..b.nrows {
                let (c, v) = b.row(i);
                col_idx.extend_from_slice(c);
                values.extend_from_slice(v);
                row_ptr.push(col_idx.len());
            }
            nrows += b.nrows;
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.iter() {
            m[(i, j)] += v;
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_are_mirrored_and_summed() {
        let q = SparseSymmetric::from_triplets(3, [(0, 0, 1.0), (0, 2, 2.0), (2, 0, 1.0), (1, 1, 3.0)])
            .unwrap();
        assert_eq!(q.nnz(), 3);
        assert_eq!(q.get(2, 0), 3.0);
        assert_eq!(q.get(0, 2), 3.0);
        assert_eq!(q.get(1, 0), 0.0);
    }

    #[test]
    fn kron_matches_dense() {
        let a = SparseSymmetric::from_triplets(2, [(0, 0, 2.0), (1, 0, -1.0), (1, 1, 3.0)]).unwrap();
        let b = SparseSymmetric::from_triplets(3, [(0, 0, 1.0), (1, 0, 0.5), (2, 2, 4.0), (2, 1, 0.25), (1, 1, 2.0)])
            .unwrap();
        let k = SparseSymmetric::kron(&a, &b).to_dense();
        let (da, db) = (a.to_dense(), b.to_dense());
        let expected = da.kronecker(&db);
        assert!((k - expected).abs().max() < 1e-15);
    }

    #[test]
    fn triplet_file_round_trip() {
        let q = SparseSymmetric::from_triplets(3, [(0, 0, 1.5), (2, 1, -0.25), (1, 1, 2.0), (2, 2, 1.0)])
            .unwrap();
        let mut buf = Vec::new();
        q.write_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("3 4\n"));
        let back = SparseSymmetric::read_triplets(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(q, back);
    }

    #[test]
    fn triplet_file_rejects_upper_entries() {
        let text = "2 2\n0 0 1\n0 1 1\n";
        assert!(SparseSymmetric::read_triplets(std::io::Cursor::new(text)).is_err());
    }

    #[test]
    fn csr_products() {
        let a = SparseMatrix::from_triplets(2, 3, [(0, 0, 1.0), (0, 2, 2.0), (1, 1, -1.0)]).unwrap();
        assert_eq!(a.mul_vec(&[1.0, 2.0, 3.0]), vec![7.0, -2.0]);
        assert_eq!(a.tr_mul_vec(&[1.0, 1.0]), vec![1.0, -1.0, 2.0]);
        let s = SparseMatrix::vstack(&[&a, &a]).unwrap();
        assert_eq!(s.nrows(), 4);
        assert_eq!(s.get(3, 1), -1.0);
    }
}
