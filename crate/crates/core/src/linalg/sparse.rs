use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

/// Sparse symmetric matrix holding its upper triangle as sorted
/// `(row, col, value)` triplets with `row <= col`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymMatrix {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseSymMatrix {
    /// Builds from triplets given in either triangle. Exact zeros are
    /// dropped; duplicate positions and out-of-range indices are errors.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for &(r, c, v) in triplets {
            if r >= n || c >= n {
                return Err(invalid(format!("entry ({r},{c}) out of range for n = {n}")));
            }
            if !v.is_finite() {
                return Err(invalid(format!("entry ({r},{c}) is not finite")));
            }
            let key = (r.min(c), r.max(c));
            if map.insert(key, v).is_some() {
                return Err(invalid(format!("duplicate entry ({},{})", key.0, key.1)));
            }
        }
        Ok(Self::from_map(n, map))
    }

    fn from_map(n: usize, map: BTreeMap<(usize, usize), f64>) -> Self {
        let entries = map
            .into_iter()
            .filter(|&(_, v)| v != 0.0)
            .map(|((r, c), v)| (r, c, v))
            .collect();
        Self { n, entries }
    }

    pub fn identity(n: usize) -> Self {
        Self { n, entries: (0..n).map(|i| (i, i, 1.0)).collect() }
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self {
            n: d.len(),
            entries: d.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, &v)| (i, i, v)).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Upper-triangle triplets, sorted by `(row, col)`.
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn nnz_upper(&self) -> usize {
        self.entries.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for &(r, c, v) in &self.entries {
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
        m
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.n);
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
            if r != c {
                y[c] += v * x[r];
            }
        }
        y
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|&(r, c, v)| if r == c { v * v } else { 2.0 * v * v })
            .sum::<f64>()
            .sqrt()
    }

    /// Returns the diagonal if the matrix has no off-diagonal entries.
    pub fn as_diagonal(&self) -> Option<Vec<f64>> {
        let mut d = vec![0.0; self.n];
        for &(r, c, v) in &self.entries {
            if r != c {
                return None;
            }
            d[r] = v;
        }
        Some(d)
    }
}

/// Accumulates entries (summing duplicates) into a [`SparseSymMatrix`].
#[derive(Debug, Clone)]
pub struct SparseSymBuilder {
    n: usize,
    map: BTreeMap<(usize, usize), f64>,
}

impl SparseSymBuilder {
    pub fn new(n: usize) -> Self {
        Self { n, map: BTreeMap::new() }
    }

    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.n && c < self.n);
        *self.map.entry((r.min(c), r.max(c))).or_insert(0.0) += v;
    }

    pub fn build(self) -> SparseSymMatrix {
        SparseSymMatrix::from_map(self.n, self.map)
    }
}

/// Minimum-degree elimination ordering on the symmetric pattern.
/// Ties break on the lower index so the ordering is deterministic.
pub fn minimum_degree_order(m: &SparseSymMatrix) -> Vec<usize> {
    let n = m.n();
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &(r, c, _) in m.entries() {
        if r != c {
            adj[r].insert(c);
            adj[c].insert(r);
        }
    }
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|i| (adj[i].len(), i)).collect();
    let mut order = Vec::with_capacity(n);
    while let Some((deg, v)) = queue.pop_first() {
        let remaining = n - order.len();
        if deg + 1 == remaining {
            // what is left is a clique: any order gives the same fill
            order.push(v);
            let mut rest: Vec<usize> = queue.iter().map(|&(_, u)| u).collect();
            rest.sort_unstable();
            order.extend(rest);
            break;
        }
        order.push(v);
        let nbrs: Vec<usize> = std::mem::take(&mut adj[v]).into_iter().collect();
        for &u in &nbrs {
            queue.remove(&(adj[u].len(), u));
            adj[u].remove(&v);
        }
        for (a, &u) in nbrs.iter().enumerate() {
            for &w in &nbrs[a + 1..] {
                adj[u].insert(w);
                adj[w].insert(u);
            }
        }
        for &u in &nbrs {
            queue.insert((adj[u].len(), u));
        }
    }
    order
}

const NONE: usize = usize::MAX;

/// `P K Pᵀ = L D Lᵀ` with unit lower-triangular `L` stored by columns
/// (strictly-lower part only) and signed diagonal `D`.
#[derive(Debug, Clone)]
pub struct QuasiDefFactor {
    /// `perm[k]` is the original index eliminated at step `k`.
    perm: Vec<usize>,
    l_ptr: Vec<usize>,
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    d: Vec<f64>,
    d_inv: Vec<f64>,
}

/// Unpivoted sparse LDLᵀ of a symmetric quasi-definite matrix after a
/// minimum-degree symmetric permutation.
pub fn ldl_quasidef(k: &SparseSymMatrix) -> Result<QuasiDefFactor> {
    let perm = minimum_degree_order(k);
    ldl_with_order(k, perm)
}

/// Same as [`ldl_quasidef`] but with a caller-supplied elimination order.
pub fn ldl_with_order(k: &SparseSymMatrix, perm: Vec<usize>) -> Result<QuasiDefFactor> {
    let n = k.n();
    if perm.len() != n {
        return Err(invalid("permutation length does not match matrix dimension"));
    }
    let mut inv = vec![NONE; n];
    for (pos, &orig) in perm.iter().enumerate() {
        if orig >= n || inv[orig] != NONE {
            return Err(invalid("elimination order is not a permutation"));
        }
        inv[orig] = pos;
    }

    // permuted upper triangle in CSC
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(r, c, v) in k.entries() {
        let (pr, pc) = (inv[r], inv[c]);
        cols[pr.max(pc)].push((pr.min(pc), v));
    }
    let mut a_ptr = Vec::with_capacity(n + 1);
    let mut a_idx = Vec::new();
    let mut a_val = Vec::new();
    a_ptr.push(0);
    for (j, col) in cols.iter_mut().enumerate() {
        if col.is_empty() {
            return Err(Error::ZeroPivot { pivot: perm[j] });
        }
        col.sort_unstable_by_key(|&(i, _)| i);
        for &(i, v) in col.iter() {
            a_idx.push(i);
            a_val.push(v);
        }
        a_ptr.push(a_idx.len());
    }

    // elimination tree and column counts
    let mut etree = vec![NONE; n];
    let mut l_nz = vec![0usize; n];
    let mut work = vec![NONE; n];
    for j in 0..n {
        work[j] = j;
        for p in a_ptr[j]..a_ptr[j + 1] {
            let mut i = a_idx[p];
            while work[i] != j {
                if etree[i] == NONE {
                    etree[i] = j;
                }
                l_nz[i] += 1;
                work[i] = j;
                i = etree[i];
            }
        }
    }

    let mut l_ptr = vec![0usize; n + 1];
    for i in 0..n {
        l_ptr[i + 1] = l_ptr[i] + l_nz[i];
    }
    let total = l_ptr[n];
    let mut l_idx = vec![0usize; total];
    let mut l_val = vec![0.0; total];
    let mut next_in_col = l_ptr[..n].to_vec();
    let mut d = vec![0.0; n];
    let mut d_inv = vec![0.0; n];

    let mut y = vec![0.0; n];
    let mut marker = vec![NONE; n];
    let mut y_idx = Vec::with_capacity(n);
    let mut elim = Vec::with_capacity(n);

    for kk in 0..n {
        y_idx.clear();
        d[kk] = 0.0;
        for p in a_ptr[kk]..a_ptr[kk + 1] {
            let i = a_idx[p];
            if i == kk {
                d[kk] = a_val[p];
                continue;
            }
            y[i] = a_val[p];
            let mut next = i;
            elim.clear();
            while next != NONE && next < kk && marker[next] != kk {
                marker[next] = kk;
                elim.push(next);
                next = etree[next];
            }
            while let Some(e) = elim.pop() {
                y_idx.push(e);
            }
        }
        for &c in y_idx.iter().rev() {
            let yc = y[c];
            let end = next_in_col[c];
            for j in l_ptr[c]..end {
                y[l_idx[j]] -= l_val[j] * yc;
            }
            let lkc = yc * d_inv[c];
            l_idx[end] = kk;
            l_val[end] = lkc;
            d[kk] -= yc * lkc;
            next_in_col[c] += 1;
            y[c] = 0.0;
        }
        if d[kk] == 0.0 || !d[kk].is_finite() {
            return Err(Error::ZeroPivot { pivot: perm[kk] });
        }
        d_inv[kk] = 1.0 / d[kk];
    }

    Ok(QuasiDefFactor { perm, l_ptr, l_idx, l_val, d, d_inv })
}

impl QuasiDefFactor {
    pub fn n(&self) -> usize {
        self.d.len()
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Pivots in elimination order.
    pub fn d(&self) -> &[f64] {
        &self.d
    }

    /// Pivot of the original row/column `i`.
    pub fn pivot_of(&self, i: usize) -> f64 {
        let pos = self.perm.iter().position(|&p| p == i).expect("index in range");
        self.d[pos]
    }

    pub fn nnz_l(&self) -> usize {
        self.l_idx.len()
    }

    pub fn negative_pivots(&self) -> usize {
        self.d.iter().filter(|&&v| v < 0.0).count()
    }

    /// Dense unit lower-triangular `L` in the permuted ordering.
    pub fn l_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut l = DMatrix::identity(n, n);
        for c in 0..n {
            for p in self.l_ptr[c]..self.l_ptr[c + 1] {
                l[(self.l_idx[p], c)] = self.l_val[p];
            }
        }
        l
    }

    /// Solves `K x = b` in place (original ordering).
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.n();
        let mut w: Vec<f64> = self.perm.iter().map(|&p| x[p]).collect();
        for c in 0..n {
            let wc = w[c];
            if wc != 0.0 {
                for p in self.l_ptr[c]..self.l_ptr[c + 1] {
                    w[self.l_idx[p]] -= self.l_val[p] * wc;
                }
            }
        }
        for (wi, di) in w.iter_mut().zip(&self.d_inv) {
            *wi *= di;
        }
        for c in (0..n).rev() {
            let mut s = w[c];
            for p in self.l_ptr[c]..self.l_ptr[c + 1] {
                s -= self.l_val[p] * w[self.l_idx[p]];
            }
            w[c] = s;
        }
        for (pos, &orig) in self.perm.iter().enumerate() {
            x[orig] = w[pos];
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_in_place(x.as_mut_slice());
        x
    }
}

/// Sparse Cholesky of an SPD matrix, realized as an LDLᵀ whose pivots are
/// all required to be positive.
#[derive(Debug, Clone)]
pub struct SparseCholesky {
    factor: QuasiDefFactor,
}

pub fn sparse_cholesky(m: &SparseSymMatrix) -> Result<SparseCholesky> {
    let factor = ldl_quasidef(m).map_err(|e| match e {
        Error::ZeroPivot { pivot } => Error::NotPositiveDefinite { pivot, value: 0.0 },
        other => other,
    })?;
    for (pos, &v) in factor.d.iter().enumerate() {
        if !(v > 0.0) {
            return Err(Error::NotPositiveDefinite { pivot: factor.perm[pos], value: v });
        }
    }
    Ok(SparseCholesky { factor })
}

impl SparseCholesky {
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(b)
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        self.factor.solve_in_place(x)
    }

    pub fn factor(&self) -> &QuasiDefFactor {
        &self.factor
    }
}
