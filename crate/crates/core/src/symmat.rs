//! The symmetric problem matrix `A`.
//!
//! A [`SymMatrix`] stores one triangle only, either densely (packed lower
//! triangle, row by row) or as a sorted list of lower-triangle triplets. All
//! products sum in ascending column order, so dense and sparse storage of the
//! same matrix give the same results up to the contribution of explicit zeros.
//!
//! Sparse storage may carry a constant off-diagonal `shift`, so that the
//! matrix is `S + shift (J - I)` with `J` the all-ones matrix. Centered
//! adjacency matrices use this to keep sparse products.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::rng::{self, Tag};

/// Matrices up to this dimension use a dense eigensolver in [`SymMatrix::min_eig`].
pub const DENSE_EIG_THRESHOLD: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    /// Packed lower triangle: entry `(i, j)`, `j <= i`, at `i * (i + 1) / 2 + j`,
    /// plus the mirrored full matrix for contiguous row access.
    Dense { packed: Vec<f64>, full: Vec<f64> },
    /// Lower-triangle triplets sorted by `(i, j)`, plus a full-row index
    /// (both triangles, ascending column) used by the products.
    Sparse {
        entries: Vec<(usize, usize, f64)>,
        row_ptr: Vec<usize>,
        cols: Vec<usize>,
        vals: Vec<f64>,
        shift: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    storage: Storage,
}

fn dense_storage(n: usize, packed: Vec<f64>) -> Storage {
    let mut full = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = packed[i * (i + 1) / 2 + j];
            full[i * n + j] = v;
            full[j * n + i] = v;
        }
    }
    Storage::Dense { packed, full }
}

#[inline]
fn packed_index(i: usize, j: usize) -> usize {
    let (r, c) = if i >= j { (i, j) } else { (j, i) };
    r * (r + 1) / 2 + c
}

impl SymMatrix {
    /// Dense matrix from its packed lower triangle.
    pub fn from_packed_lower(n: usize, data: Vec<f64>) -> Result<Self> {
        check_dim(n * (n + 1) / 2, data.len())?;
        Ok(SymMatrix {
            n,
            storage: dense_storage(n, data),
        })
    }

    /// Dense matrix with entries `f(i, j)` evaluated for `j <= i` only, in
    /// row-major order of the lower triangle.
    pub fn from_lower_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..=i {
                data.push(f(i, j));
            }
        }
        SymMatrix {
            n,
            storage: dense_storage(n, data),
        }
    }

    /// Dense matrix from full rows. The rows must be exactly symmetric.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        for (i, row) in rows.iter().enumerate() {
            check_dim(n, row.len())?;
            for j in 0..i {
                if row[j] != rows[j][i] {
                    return Err(Error::invalid(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self::from_lower_fn(n, |i, j| rows[i][j]))
    }

    /// Sparse matrix from triplets given in either triangle. Duplicate
    /// positions (including `(i, j)` together with `(j, i)`) are rejected.
    pub fn from_triplets(n: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for (i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::invalid(format!(
                    "entry ({i}, {j}) out of range for n = {n}"
                )));
            }
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            entries.push((r, c, v));
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        if let Some(w) = entries.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::invalid(format!(
                "duplicate entry ({}, {})",
                w[0].0, w[0].1
            )));
        }
        Ok(Self::sparse_from_sorted(n, entries))
    }

    /// `S + shift (J - I)`, with `S` given by lower-triangle triplets as in
    /// [`SymMatrix::from_triplets`].
    pub fn from_triplets_shifted(
        n: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
        shift: f64,
    ) -> Result<Self> {
        if !shift.is_finite() {
            return Err(Error::invalid("non-finite shift"));
        }
        let mut m = Self::from_triplets(n, triplets)?;
        if let Storage::Sparse { shift: s, .. } = &mut m.storage {
            *s = shift;
        }
        Ok(m)
    }

    fn sparse_from_sorted(n: usize, entries: Vec<(usize, usize, f64)>) -> Self {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in &entries {
            per_row[i].push((j, v));
            if i != j {
                per_row[j].push((i, v));
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in per_row {
            row.sort_by_key(|&(j, _)| j);
            for (j, v) in row {
                cols.push(j);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        SymMatrix {
            n,
            storage: Storage::Sparse {
                entries,
                row_ptr,
                cols,
                vals,
                shift: 0.0,
            },
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::sparse_from_sorted(n, Vec::new())
    }

    pub fn identity(n: usize) -> Self {
        Self::sparse_from_sorted(n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense { .. })
    }

    /// The constant off-diagonal shift (zero unless built by
    /// [`SymMatrix::from_triplets_shifted`]).
    pub fn shift(&self) -> f64 {
        match &self.storage {
            Storage::Sparse { shift, .. } => *shift,
            Storage::Dense { .. } => 0.0,
        }
    }

    /// Stored lower-triangle entries, excluding the shift: every position for
    /// dense storage, the explicit triplets for sparse storage.
    pub fn stored_lower_entries(&self) -> Vec<(usize, usize, f64)> {
        match &self.storage {
            Storage::Sparse { entries, .. } => entries.clone(),
            Storage::Dense { .. } => self.lower_entries(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            Storage::Dense { packed, .. } => packed[packed_index(i, j)],
            Storage::Sparse { entries, shift, .. } => {
                let key = if i >= j { (i, j) } else { (j, i) };
                let v = entries
                    .binary_search_by(|e| (e.0, e.1).cmp(&key))
                    .map(|p| entries[p].2)
                    .unwrap_or(0.0);
                if i != j && *shift != 0.0 {
                    v + shift
                } else {
                    v
                }
            }
        }
    }

    /// Lower-triangle entries `(i, j, value)` with `j <= i`, in row order.
    /// Dense and shifted storage yield every position, zeros included.
    pub fn lower_entries(&self) -> Vec<(usize, usize, f64)> {
        match &self.storage {
            Storage::Dense { packed: d, .. } => {
                let mut out = Vec::with_capacity(d.len());
                for i in 0..self.n {
                    for j in 0..=i {
                        out.push((i, j, d[packed_index(i, j)]));
                    }
                }
                out
            }
            Storage::Sparse { entries, shift, .. } => {
                if *shift == 0.0 {
                    return entries.clone();
                }
                let mut out = Vec::with_capacity(self.n * (self.n + 1) / 2);
                let mut it = entries.iter().peekable();
                for i in 0..self.n {
                    for j in 0..=i {
                        let mut v = if i == j { 0.0 } else { *shift };
                        if let Some(&&(r, c, x)) = it.peek() {
                            if (r, c) == (i, j) {
                                v = x + v;
                                it.next();
                            }
                        }
                        out.push((i, j, v));
                    }
                }
                out
            }
        }
    }

    pub fn to_dense(&self) -> SymMatrix {
        match &self.storage {
            Storage::Dense { .. } => self.clone(),
            Storage::Sparse { .. } => {
                let mut data = vec![0.0; self.n * (self.n + 1) / 2];
                for (i, j, v) in self.lower_entries() {
                    data[packed_index(i, j)] = v;
                }
                SymMatrix {
                    n: self.n,
                    storage: dense_storage(self.n, data),
                }
            }
        }
    }

    /// Sparse copy keeping only the nonzero entries.
    pub fn to_sparse(&self) -> SymMatrix {
        let entries = self
            .lower_entries()
            .into_iter()
            .filter(|e| e.2 != 0.0)
            .collect();
        Self::sparse_from_sorted(self.n, entries)
    }

    /// Calls `f(j, a_ij)` for the stored entries of row `i` in ascending `j`
    /// (every `j` when the matrix is shifted).
    #[inline]
    pub fn for_each_in_row(&self, i: usize, mut f: impl FnMut(usize, f64)) {
        match &self.storage {
            Storage::Dense { full, .. } => {
                for (j, &v) in full[i * self.n..(i + 1) * self.n].iter().enumerate() {
                    f(j, v);
                }
            }
            Storage::Sparse {
                row_ptr,
                cols,
                vals,
                shift,
                ..
            } => {
                let (lo, hi) = (row_ptr[i], row_ptr[i + 1]);
                if *shift == 0.0 {
                    for p in lo..hi {
                        f(cols[p], vals[p]);
                    }
                    return;
                }
                let mut p = lo;
                for j in 0..self.n {
                    let mut v = if j == i { 0.0 } else { *shift };
                    if p < hi && cols[p] == j {
                        v += vals[p];
                        p += 1;
                    }
                    f(j, v);
                }
            }
        }
    }

    /// Calls `f(j, s_ij)` for the explicit entries of row `i`, ignoring the
    /// shift; dense rows yield every entry.
    #[inline]
    fn for_each_stored_in_row(&self, i: usize, mut f: impl FnMut(usize, f64)) {
        match &self.storage {
            Storage::Sparse {
                row_ptr, cols, vals, ..
            } => {
                for p in row_ptr[i]..row_ptr[i + 1] {
                    f(cols[p], vals[p]);
                }
            }
            Storage::Dense { .. } => self.for_each_in_row(i, f),
        }
    }

    /// Column sums of a row-major `n x k` block, needed by the shifted products.
    pub fn block_column_sum(block: &[f64], k: usize) -> Vec<f64> {
        let mut sum = vec![0.0; k];
        for row in block.chunks_exact(k.max(1)) {
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
        }
        sum
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut s = 0.0;
        for (i, j, v) in self.lower_entries() {
            s += if i == j { v * v } else { 2.0 * v * v };
        }
        s.sqrt()
    }

    /// `y = A x`, summing each row in ascending column order.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n, x.len())?;
        let shift = self.shift();
        let total: f64 = if shift != 0.0 { x.iter().sum() } else { 0.0 };
        let mut y = vec![0.0; self.n];
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            self.for_each_stored_in_row(i, |j, a| s += a * x[j]);
            if shift != 0.0 {
                s += shift * (total - x[i]);
            }
            *yi = s;
        }
        Ok(y)
    }

    /// `G = A S` for a row-major `n x k` block `S`.
    pub fn mul_block(&self, block: &[f64], k: usize) -> Result<Vec<f64>> {
        check_dim(self.n * k, block.len())?;
        let shift = self.shift();
        let sum = if shift != 0.0 {
            Self::block_column_sum(block, k)
        } else {
            Vec::new()
        };
        let mut out = vec![0.0; self.n * k];
        for i in 0..self.n {
            let row = &mut out[i * k..(i + 1) * k];
            self.for_each_stored_in_row(i, |j, a| {
                let src = &block[j * k..(j + 1) * k];
                for (o, s) in row.iter_mut().zip(src) {
                    *o += a * s;
                }
            });
            if shift != 0.0 {
                let own = &block[i * k..(i + 1) * k];
                for ((o, t), s) in row.iter_mut().zip(&sum).zip(own) {
                    *o += shift * (t - s);
                }
            }
        }
        Ok(out)
    }

    /// `out = sum_{j != i} a_ij S_j` (the diagonal term is skipped).
    pub fn row_block_offdiag(&self, i: usize, block: &[f64], k: usize, out: &mut [f64]) {
        if self.shift() != 0.0 {
            let sum = Self::block_column_sum(block, k);
            self.row_block_offdiag_with_sum(i, block, k, &sum, out);
            return;
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        self.for_each_stored_in_row(i, |j, a| {
            if j != i {
                let src = &block[j * k..(j + 1) * k];
                for (o, s) in out.iter_mut().zip(src) {
                    *o += a * s;
                }
            }
        });
    }

    /// As [`SymMatrix::row_block_offdiag`], with the block column sums
    /// supplied by the caller. `sum` is only read when the matrix is shifted.
    pub fn row_block_offdiag_with_sum(&self, i: usize, block: &[f64], k: usize, sum: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        self.for_each_stored_in_row(i, |j, a| {
            if j != i {
                let src = &block[j * k..(j + 1) * k];
                for (o, s) in out.iter_mut().zip(src) {
                    *o += a * s;
                }
            }
        });
        let shift = self.shift();
        if shift != 0.0 {
            let own = &block[i * k..(i + 1) * k];
            for ((o, t), s) in out.iter_mut().zip(sum).zip(own) {
                *o += shift * (t - s);
            }
        }
    }

    /// Dense principal submatrix on `idx` (in the given order).
    pub fn principal_submatrix(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), idx.len(), |r, c| self.get(idx[r], idx[c]))
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.lower_entries() {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m
    }

    /// `||A||_2`: dense eigensolver up to [`DENSE_EIG_THRESHOLD`], power
    /// iteration on `A^2` beyond.
    pub fn op_norm(&self, opts: &PowerOptions) -> OpNormEstimate {
        op_norm(self, opts)
    }

    /// Smallest eigenvalue; dense eigensolver up to [`DENSE_EIG_THRESHOLD`].
    pub fn min_eig(&self, abs_tol: f64) -> MinEigEstimate {
        min_eig(self, abs_tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for PowerOptions {
    fn default() -> Self {
        PowerOptions {
            rel_tol: 1e-8,
            max_iter: 20_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct OpNormEstimate {
    pub value: f64,
    /// Relative eigen-residual of the final iterate, halved to refer to `||A||`.
    pub rel_tol_achieved: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn random_unit(n: usize, seed: u64, tag: Tag) -> Vec<f64> {
    let mut rng = rng::stream(seed, tag, 0);
    let mut x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let nx = norm2(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    x
}

/// Power iteration for the dominant eigenvalue of the PSD operator `apply`.
/// Returns `(rayleigh, rel_residual, iterations, converged)`.
fn power_psd(
    n: usize,
    apply: impl Fn(&[f64]) -> Vec<f64>,
    opts: &PowerOptions,
    tag: Tag,
) -> (f64, f64, usize, bool) {
    if n == 0 {
        return (0.0, 0.0, 0, true);
    }
    let mut x = random_unit(n, opts.seed, tag);
    let mut best = (0.0, f64::INFINITY);
    for it in 1..=opts.max_iter.max(1) {
        let z = apply(&x);
        let rho: f64 = x.iter().zip(&z).map(|(a, b)| a * b).sum();
        let nz = norm2(&z);
        if nz == 0.0 {
            // x is in the null space; nothing larger can be found from here
            // unless the operator is nonzero elsewhere, which the random start
            // makes a measure-zero event.
            return (0.0, 0.0, it, true);
        }
        let resid: f64 = z
            .iter()
            .zip(&x)
            .map(|(zi, xi)| (zi - rho * xi).powi(2))
            .sum::<f64>()
            .sqrt();
        let rel = if rho > 0.0 { resid / rho } else { f64::INFINITY };
        if rho >= best.0 {
            best = (rho, rel);
        }
        if rel <= opts.rel_tol {
            return (rho, rel, it, true);
        }
        x = z.into_iter().map(|v| v / nz).collect();
    }
    (best.0, best.1, opts.max_iter.max(1), false)
}

pub fn op_norm(a: &SymMatrix, opts: &PowerOptions) -> OpNormEstimate {
    if a.n() <= DENSE_EIG_THRESHOLD {
        let value = a
            .to_nalgebra()
            .symmetric_eigenvalues()
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        return OpNormEstimate {
            value,
            rel_tol_achieved: 0.0,
            iterations: 0,
            converged: true,
        };
    }
    power_op_norm(a, opts)
}

/// Power iteration on `A^2`, stopped on the relative eigen-residual.
pub fn power_op_norm(a: &SymMatrix, opts: &PowerOptions) -> OpNormEstimate {
    let apply = |x: &[f64]| {
        let y = a.matvec(x).expect("dimension checked");
        a.matvec(&y).expect("dimension checked")
    };
    // The residual test is on A^2, whose eigenvalues are squared; a relative
    // error e on A^2 is about e/2 on ||A||.
    let inner = PowerOptions {
        rel_tol: 2.0 * opts.rel_tol,
        ..*opts
    };
    let (rho, rel, iterations, converged) = power_psd(a.n(), apply, &inner, Tag::OpNorm);
    let value = rho.max(0.0).sqrt().min(a.frobenius_norm());
    OpNormEstimate {
        value,
        rel_tol_achieved: rel / 2.0,
        iterations,
        converged,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MinEigEstimate {
    pub value: f64,
    pub converged: bool,
}

/// Smallest eigenvalue of a dense symmetric matrix.
pub fn dense_min_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn min_eig(m: &SymMatrix, abs_tol: f64) -> MinEigEstimate {
    let n = m.n();
    if n == 0 {
        return MinEigEstimate {
            value: 0.0,
            converged: true,
        };
    }
    if n <= DENSE_EIG_THRESHOLD {
        return MinEigEstimate {
            value: dense_min_eig(&m.to_nalgebra()),
            converged: true,
        };
    }
    let norm = m.op_norm(&PowerOptions::default());
    // Shift past lambda_max so that mu I - M is PSD even when the norm
    // estimate is slightly low.
    let mu = norm.value * (1.0 + 1e-3) + f64::MIN_POSITIVE;
    let scale = norm.value.max(1.0);
    let opts = PowerOptions {
        rel_tol: (abs_tol * scale / (2.0 * mu)).max(1e-15),
        max_iter: 50_000,
        seed: 1,
    };
    let apply = |x: &[f64]| {
        let y = m.matvec(x).expect("dimension checked");
        x.iter().zip(y).map(|(xi, yi)| mu * xi - yi).collect()
    };
    let (top, _, _, converged) = power_psd(n, apply, &opts, Tag::OpNorm);
    MinEigEstimate {
        value: mu - top,
        converged: converged && norm.converged,
    }
}

// ---------------------------------------------------------------------------
// Matrix Market I/O

const MM_COORD_HEADER: &str = "%%MatrixMarket matrix coordinate real symmetric";
const MM_ARRAY_HEADER: &str = "%%MatrixMarket matrix array real symmetric";

/// Reads a real symmetric Matrix Market file (coordinate or array form).
pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<SymMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix_market(&text).map_err(|(line, msg)| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    })
}

/// Parses Matrix Market text; errors carry a 1-based line number.
pub fn parse_matrix_market(text: &str) -> std::result::Result<SymMatrix, (usize, String)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or((1, "empty file".to_string()))?;
    let tokens: Vec<String> = header.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    let is_coord = match tokens.as_slice() {
        [mm, m, f, r, s] if mm == "%%matrixmarket" && m == "matrix" && r == "real" && s == "symmetric" => {
            match f.as_str() {
                "coordinate" => true,
                "array" => false,
                other => return Err((1, format!("unsupported format '{other}'"))),
            }
        }
        _ => {
            return Err((
                1,
                format!("expected '{MM_COORD_HEADER}' or '{MM_ARRAY_HEADER}', found '{header}'"),
            ))
        }
    };

    let mut body = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });
    let (size_line, size) = body.next().ok_or((1, "missing size line".to_string()))?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| (size_line, format!("bad size line: {e}")))?;

    let parse_f = |line: usize, t: &str| {
        t.parse::<f64>()
            .map_err(|e| (line, format!("bad value '{t}': {e}")))
    };

    if is_coord {
        let [rows, cols, nnz] = dims[..] else {
            return Err((size_line, "coordinate size line needs 'rows cols nnz'".into()));
        };
        if rows != cols {
            return Err((size_line, format!("symmetric matrix must be square, got {rows}x{cols}")));
        }
        let n = rows;
        let mut entries = Vec::with_capacity(nnz);
        let mut seen = std::collections::HashSet::with_capacity(nnz);
        for (lno, line) in body.by_ref() {
            if entries.len() == nnz {
                return Err((lno, format!("more than {nnz} entries")));
            }
            let t: Vec<&str> = line.split_whitespace().collect();
            let [i, j, v] = t[..] else {
                return Err((lno, "entry line needs 'row col value'".into()));
            };
            let idx = |s: &str| {
                s.parse::<usize>()
                    .map_err(|e| (lno, format!("bad index '{s}': {e}")))
            };
            let (i, j, v) = (idx(i)?, idx(j)?, parse_f(lno, v)?);
            if i == 0 || j == 0 || i > n || j > n {
                return Err((lno, format!("index ({i}, {j}) out of range 1..={n}")));
            }
            let key = if i >= j { (i - 1, j - 1) } else { (j - 1, i - 1) };
            if !seen.insert(key) {
                return Err((lno, format!("duplicate entry ({i}, {j})")));
            }
            entries.push((key.0, key.1, v));
        }
        if entries.len() != nnz {
            return Err((size_line, format!("expected {nnz} entries, found {}", entries.len())));
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        Ok(SymMatrix::sparse_from_sorted(n, entries))
    } else {
        let [rows, cols] = dims[..] else {
            return Err((size_line, "array size line needs 'rows cols'".into()));
        };
        if rows != cols {
            return Err((size_line, format!("symmetric matrix must be square, got {rows}x{cols}")));
        }
        let n = rows;
        let mut data = vec![0.0; n * (n + 1) / 2];
        // Column-major lower triangle.
        let mut pos = (0usize, 0usize); // (col, row)
        let mut count = 0usize;
        let total = n * (n + 1) / 2;
        for (lno, line) in body {
            for tok in line.split_whitespace() {
                if count == total {
                    return Err((lno, format!("more than {total} values")));
                }
                let v = parse_f(lno, tok)?;
                let (c, r) = pos;
                data[packed_index(r, c)] = v;
                count += 1;
                pos = if r + 1 < n { (c, r + 1) } else { (c + 1, c + 1) };
            }
        }
        if count != total {
            return Err((size_line, format!("expected {total} values, found {count}")));
        }
        Ok(SymMatrix {
            n,
            storage: dense_storage(n, data),
        })
    }
}

/// Serializes `a`: dense storage as the array form, sparse as coordinates.
pub fn format_matrix_market(a: &SymMatrix) -> String {
    let mut s = String::new();
    match &a.storage {
        Storage::Dense { packed: d, .. } => {
            let _ = writeln!(s, "{MM_ARRAY_HEADER}");
            let _ = writeln!(s, "{} {}", a.n, a.n);
            for c in 0..a.n {
                for r in c..a.n {
                    let _ = writeln!(s, "{:.16e}", d[packed_index(r, c)]);
                }
            }
        }
        Storage::Sparse { shift, .. } if *shift != 0.0 => {
            return format_matrix_market(&a.to_dense());
        }
        Storage::Sparse { entries, .. } => {
            let _ = writeln!(s, "{MM_COORD_HEADER}");
            let _ = writeln!(s, "{} {} {}", a.n, a.n, entries.len());
            for &(i, j, v) in entries {
                let _ = writeln!(s, "{} {} {:.16e}", i + 1, j + 1, v);
            }
        }
    }
    s
}

pub fn write_matrix_market(a: &SymMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_matrix_market(a)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn swap2() -> SymMatrix {
        SymMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    fn ones(n: usize) -> SymMatrix {
        SymMatrix::from_lower_fn(n, |_, _| 1.0)
    }

    #[test]
    fn matvec_examples() {
        assert_eq!(swap2().matvec(&[1.0, 0.0]).unwrap(), vec![0.0, 1.0]);
        assert_eq!(
            SymMatrix::identity(3).matvec(&[1.0, 2.0, 3.0]).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
        assert_eq!(ones(3).matvec(&[1.0; 3]).unwrap(), vec![3.0; 3]);
        assert!(matches!(
            swap2().matvec(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn op_norm_examples() {
        let opts = PowerOptions::default();
        let e = swap2().op_norm(&opts);
        assert!((e.value - 1.0).abs() <= 1e-8, "{e:?}");
        let e = SymMatrix::identity(7).op_norm(&opts);
        assert!((e.value - 1.0).abs() <= 1e-12);
        assert!(e.converged);
        assert_eq!(SymMatrix::zeros(4).op_norm(&opts).value, 0.0);
    }

    #[test]
    fn op_norm_indefinite_diag() {
        let a = SymMatrix::from_triplets(3, [(0, 0, 1.0), (1, 1, -3.0), (2, 2, 2.0)]).unwrap();
        let e = a.op_norm(&PowerOptions::default());
        assert!((e.value - 3.0).abs() <= 3e-8, "{e:?}");
    }

    #[test]
    fn power_op_norm_matches_dense() {
        let a = SymMatrix::from_lower_fn(8, |i, j| ((i * 5 + j * 11) % 7) as f64 - 3.0);
        let dense = a.op_norm(&PowerOptions::default()).value;
        let p = power_op_norm(&a, &PowerOptions::default());
        assert!(p.converged);
        assert!((p.value - dense).abs() <= 1e-7 * dense, "{} vs {dense}", p.value);
        let e = power_op_norm(&swap2(), &PowerOptions::default());
        assert!((e.value - 1.0).abs() <= 1e-8, "{e:?}");
    }

    #[test]
    fn shifted_storage_matches_dense() {
        let trip = [(1, 0, 1.0), (3, 2, 1.0), (4, 0, 1.0), (2, 2, 0.5)];
        let a = SymMatrix::from_triplets_shifted(5, trip, -0.25).unwrap();
        let d = a.to_dense();
        assert_eq!(a.get(1, 0), 0.75);
        assert_eq!(a.get(0, 1), 0.75);
        assert_eq!(a.get(2, 1), -0.25);
        assert_eq!(a.get(2, 2), 0.5);
        assert_eq!(a.get(0, 0), 0.0);
        let x = [0.3, -1.0, 2.0, 0.5, -0.7];
        let (ya, yd) = (a.matvec(&x).unwrap(), d.matvec(&x).unwrap());
        for (u, v) in ya.iter().zip(&yd) {
            assert!((u - v).abs() < 1e-14);
        }
        let block: Vec<f64> = (0..10).map(|v| (v as f64 * 0.37).sin()).collect();
        let (ga, gd) = (a.mul_block(&block, 2).unwrap(), d.mul_block(&block, 2).unwrap());
        for (u, v) in ga.iter().zip(&gd) {
            assert!((u - v).abs() < 1e-14);
        }
        let (mut ha, mut hd) = ([0.0; 2], [0.0; 2]);
        for i in 0..5 {
            a.row_block_offdiag(i, &block, 2, &mut ha);
            d.row_block_offdiag(i, &block, 2, &mut hd);
            assert!((ha[0] - hd[0]).abs() < 1e-14 && (ha[1] - hd[1]).abs() < 1e-14);
        }
        let mut row = Vec::new();
        a.for_each_in_row(2, |j, v| row.push((j, v)));
        assert_eq!(row, vec![(0, -0.25), (1, -0.25), (2, 0.5), (3, 0.75), (4, -0.25)]);
        assert!((a.frobenius_norm() - d.frobenius_norm()).abs() < 1e-14);
        let back = parse_matrix_market(&format_matrix_market(&a)).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn min_eig_examples() {
        let d = SymMatrix::from_triplets(3, [(0, 0, 1.0), (1, 1, 2.0), (2, 2, 3.0)]).unwrap();
        assert!((d.min_eig(1e-10).value - 1.0).abs() < 1e-12);
        assert!((swap2().min_eig(1e-10).value + 1.0).abs() < 1e-12);
        assert!(ones(3).min_eig(1e-10).value.abs() < 1e-12);
    }

    #[test]
    fn shifted_power_min_eig_matches_dense() {
        // Exercise the large-n path directly on a small matrix.
        let a = SymMatrix::from_lower_fn(6, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let dense = dense_min_eig(&a.to_nalgebra());
        let norm = a.op_norm(&PowerOptions::default());
        let mu = norm.value * (1.0 + 1e-3);
        let apply = |x: &[f64]| {
            let y = a.matvec(x).unwrap();
            x.iter().zip(y).map(|(xi, yi)| mu * xi - yi).collect()
        };
        let opts = PowerOptions {
            rel_tol: 1e-12,
            max_iter: 100_000,
            seed: 3,
        };
        let (top, _, _, conv) = power_psd(6, apply, &opts, Tag::OpNorm);
        assert!(conv);
        assert!(((mu - top) - dense).abs() < 1e-8, "{} vs {dense}", mu - top);
    }

    #[test]
    fn triplets_normalize_and_reject_duplicates() {
        let a = SymMatrix::from_triplets(2, [(0, 1, 1.0)]).unwrap();
        assert_eq!(a, SymMatrix::from_triplets(2, [(1, 0, 1.0)]).unwrap());
        assert_eq!(a.get(0, 1), 1.0);
        assert!(SymMatrix::from_triplets(2, [(0, 1, 1.0), (1, 0, 2.0)]).is_err());
        assert!(SymMatrix::from_triplets(2, [(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn matrix_market_single_entry() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n% comment\n2 2 1\n2 1 1.0\n";
        let a = parse_matrix_market(text).unwrap();
        assert_eq!(a.to_dense(), swap2());
    }

    #[test]
    fn matrix_market_empty_coordinate_is_zero() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n3 3 0\n";
        let a = parse_matrix_market(text).unwrap();
        assert_eq!(a.n(), 3);
        assert_eq!(a.to_dense(), SymMatrix::from_lower_fn(3, |_, _| 0.0));
    }

    #[test]
    fn matrix_market_array_form() {
        let text = "%%MatrixMarket matrix array real symmetric\n2 2\n1\n2\n3\n";
        let a = parse_matrix_market(text).unwrap();
        assert_eq!(a.get(0, 0), 1.0);
        assert_eq!(a.get(1, 0), 2.0);
        assert_eq!(a.get(0, 1), 2.0);
        assert_eq!(a.get(1, 1), 3.0);
    }

    #[test]
    fn matrix_market_errors_carry_line_numbers() {
        let bad_header = "%%MatrixMarket matrix coordinate real general\n2 2 0\n";
        assert_eq!(parse_matrix_market(bad_header).unwrap_err().0, 1);
        let out_of_range = "%%MatrixMarket matrix coordinate real symmetric\n2 2 1\n3 1 1.0\n";
        assert_eq!(parse_matrix_market(out_of_range).unwrap_err().0, 3);
        let dup = "%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n2 1 1.0\n%x\n1 2 1.0\n";
        let err = parse_matrix_market(dup).unwrap_err();
        assert_eq!(err.0, 5);
        assert!(err.1.contains("duplicate"));
    }

    #[test]
    fn matrix_market_round_trip_both_forms() {
        let a = SymMatrix::from_lower_fn(5, |i, j| (i as f64 + 0.1) / (j as f64 + 3.0) - 0.7);
        let back = parse_matrix_market(&format_matrix_market(&a)).unwrap();
        assert_eq!(back, a);
        let s = a.to_sparse();
        let back = parse_matrix_market(&format_matrix_market(&s)).unwrap();
        assert_eq!(back, s);
    }
}
