use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Error, Result};

/// Dense symmetric matrix.
///
/// Storage is a full column-major matrix, but every constructor and mutator
/// keeps `m[(i, j)] == m[(j, i)]` bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSymMatrix(DMatrix<f64>);

impl DenseSymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    /// Takes the upper triangle of `m` and mirrors it.
    pub fn from_upper(mut m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        let n = m.nrows();
        for j in 0..n {
            for i in (j + 1)..n {
                m[(i, j)] = m[(j, i)];
            }
        }
        Ok(Self(m))
    }

    /// Replaces `m` by `(m + mᵀ)/2`.
    pub fn symmetrize(mut m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        let n = m.nrows();
        for j in 0..n {
            for i in (j + 1)..n {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Ok(Self(m))
    }

    /// Row-major square array literal, mainly for tests and fixtures.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(invalid("rows must form a square matrix"));
        }
        let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        for i in 0..n {
            for j in 0..i {
                if m[(i, j)] != m[(j, i)] {
                    return Err(invalid(format!("entry ({i},{j}) breaks symmetry")));
                }
            }
        }
        Ok(Self(m))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.0[(i, j)] = v;
        self.0[(j, i)] = v;
    }

    /// Adds `v` at `(i, j)` and, off the diagonal, at `(j, i)`.
    pub fn add_sym(&mut self, i: usize, j: usize, v: f64) {
        self.0[(i, j)] += v;
        if i != j {
            self.0[(j, i)] += v;
        }
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    /// Frobenius inner product `tr(AᵀB)`.
    pub fn dot(&self, other: &Self) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(&self.0 * s)
    }

    pub fn add(&self, other: &Self) -> Self {
        Self(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self(&self.0 - &other.0)
    }

    /// `self + s·other`
    pub fn axpy(&self, s: f64, other: &Self) -> Self {
        Self(&self.0 + &other.0 * s)
    }

    /// `W · M · W`, symmetrized to scrub roundoff.
    pub fn sandwich(w: &Self, m: &Self) -> Self {
        let wm = &w.0 * &m.0;
        let mut out = &wm * &w.0;
        symmetrize_in_place(&mut out);
        Self(out)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(invalid(format!("matrix is {}x{}, expected square", m.nrows(), m.ncols())));
    }
    Ok(())
}

/// Eigendecomposition with eigenvalues sorted in descending order.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: DVector<f64>,
    /// Orthonormal eigenvectors, column `j` pairs with `values[j]`.
    pub vectors: DMatrix<f64>,
}

impl SymEig {
    /// `V · diag(f(λ)) · Vᵀ`
    pub fn recompose_with(&self, f: impl Fn(f64) -> f64) -> DenseSymMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let s = f(self.values[j]);
            scaled.column_mut(j).scale_mut(s);
        }
        let mut m = &scaled * self.vectors.transpose();
        symmetrize_in_place(&mut m);
        DenseSymMatrix(m)
    }

    pub fn min(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn max(&self) -> f64 {
        self.values[0]
    }
}

/// Symmetric eigendecomposition, eigenvalues descending.
pub fn sym_eig(m: &DenseSymMatrix) -> Result<SymEig> {
    if !m.is_finite() {
        return Err(invalid("non-finite entry in matrix passed to sym_eig"));
    }
    let n = m.n();
    if n == 0 {
        return Ok(SymEig { values: DVector::zeros(0), vectors: DMatrix::zeros(0, 0) });
    }
    let eig = SymmetricEigen::new(m.0.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymEig { values, vectors })
}

/// Dense lower Cholesky factor `L` with `L Lᵀ = M`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    l: DMatrix<f64>,
}

const CHOL_BLOCK: usize = 96;

/// Blocked right-looking Cholesky. The trailing update runs through GEMM,
/// which is what makes the dense-Hessian baseline tractable at m ~ 5000.
pub fn cholesky_spd(m: &DenseSymMatrix) -> Result<CholeskyFactor> {
    if !m.is_finite() {
        return Err(invalid("non-finite entry in matrix passed to cholesky_spd"));
    }
    let n = m.n();
    let mut a = m.0.clone();
    let mut kb = 0;
    while kb < n {
        let b = CHOL_BLOCK.min(n - kb);
        factor_diag_block(&mut a, kb, b)?;
        let rest = n - kb - b;
        if rest > 0 {
            // panel ← panel · L11⁻ᵀ, column by column
            for j in kb..kb + b {
                for l in kb..j {
                    let ljl = a[(j, l)];
                    if ljl != 0.0 {
                        let (src, mut dst) = a.columns_range_pair_mut(l, j);
                        let src = src.rows(kb + b, rest);
                        let mut dst = dst.rows_mut(kb + b, rest);
                        dst.axpy(-ljl, &src, 1.0);
                    }
                }
                let d = a[(j, j)];
                a.view_mut((kb + b, j), (rest, 1)).scale_mut(1.0 / d);
            }
            let panel = a.view((kb + b, kb), (rest, b)).clone_owned();
            let panel_t = panel.transpose();
            a.view_mut((kb + b, kb + b), (rest, rest)).gemm(-1.0, &panel, &panel_t, 1.0);
        }
        kb += b;
    }
    for j in 0..n {
        for i in 0..j {
            a[(i, j)] = 0.0;
        }
    }
    Ok(CholeskyFactor { l: a })
}

fn factor_diag_block(a: &mut DMatrix<f64>, kb: usize, b: usize) -> Result<()> {
    for j in kb..kb + b {
        let mut d = a[(j, j)];
        for l in kb..j {
            d -= a[(j, l)] * a[(j, l)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let d = d.sqrt();
        a[(j, j)] = d;
        for i in (j + 1)..kb + b {
            let mut s = a[(i, j)];
            for l in kb..j {
                s -= a[(i, l)] * a[(j, l)];
            }
            a[(i, j)] = s / d;
        }
    }
    Ok(())
}

impl CholeskyFactor {
    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn into_l(self) -> DMatrix<f64> {
        self.l
    }

    pub fn n(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `L Lᵀ x = b` in place.
    pub fn solve_in_place(&self, x: &mut DVector<f64>) {
        self.solve_lower_in_place(x);
        self.solve_upper_in_place(x);
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_in_place(&mut x);
        x
    }

    /// `x ← L⁻¹ x`
    pub fn solve_lower_in_place(&self, x: &mut DVector<f64>) {
        let n = self.n();
        for j in 0..n {
            let xj = x[j] / self.l[(j, j)];
            x[j] = xj;
            if xj != 0.0 {
                let col = self.l.view_range(j + 1.., j);
                let mut tail = x.rows_mut(j + 1, n - j - 1);
                tail.axpy(-xj, &col, 1.0);
            }
        }
    }

    /// `x ← L⁻ᵀ x`
    pub fn solve_upper_in_place(&self, x: &mut DVector<f64>) {
        let n = self.n();
        for j in (0..n).rev() {
            let col = self.l.view_range(j + 1.., j);
            let s = col.dot(&x.rows(j + 1, n - j - 1));
            x[j] = (x[j] - s) / self.l[(j, j)];
        }
    }

    /// `M⁻¹` as a dense symmetric matrix.
    pub fn inverse(&self) -> DenseSymMatrix {
        let n = self.n();
        let mut inv = DMatrix::zeros(n, n);
        let mut e = DVector::zeros(n);
        for j in 0..n {
            e.fill(0.0);
            e[j] = 1.0;
            self.solve_in_place(&mut e);
            inv.set_column(j, &e);
        }
        symmetrize_in_place(&mut inv);
        DenseSymMatrix(inv)
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n()).map(|i| self.l[(i, i)].ln()).sum::<f64>()
    }
}
