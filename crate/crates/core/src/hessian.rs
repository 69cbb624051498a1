//! The Hessian (normal) equation `𝐀ᵀ(W⊗W)𝐀 y = r` of one interior-point
//! iteration, applied matrix-free, plus the low-rank factor
//! `𝐔 = 𝐀ᵀ(U⊗Zf)` and a dense oracle.
//!
//! Vectorization is column-major throughout: an `n × k` block `X` maps to
//! index `a + l·n` for entry `(a, l)`, so `vec(A X Bᵀ) = (B⊗A) vec X`
//! and `𝐔 vec X = [A_i • (Zf X Uᵀ)]_i`.

use nalgebra::{DMatrix, DVector};

use crate::constraints::ConstraintSet;
use crate::error::{invalid, Error, Result};
use crate::linalg::DenseSymMatrix;
use crate::scaling::SpectralSplit;

/// Default size cap for the dense Hessian oracle.
pub const DEFAULT_ORACLE_CAP: usize = 2000;

/// `r_i = b_i + A_i • W(C − Z)W`
pub fn residual_rhs(cs: &ConstraintSet, w: &DenseSymMatrix, z: &DenseSymMatrix) -> Result<DVector<f64>> {
    check_dim(cs, w)?;
    check_dim(cs, z)?;
    let inner = cs.c().sub(z);
    let sw = DenseSymMatrix::sandwich(w, &inner);
    Ok(cs.b() + cs.project(&sw)?)
}

/// `𝐇 y = [A_i • W(∑ y_j A_j)W]_i`
pub fn hess_matvec(cs: &ConstraintSet, w: &DenseSymMatrix, y: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(cs, w)?;
    let e = cs.expand(y)?;
    let we = w.as_matrix() * e.as_matrix();
    let wew = &we * w.as_matrix();
    Ok(cs.project_general(&wew))
}

fn check_dim(cs: &ConstraintSet, m: &DenseSymMatrix) -> Result<()> {
    if m.n() != cs.n() {
        return Err(invalid(format!("matrix is {}x{0}, expected {}", m.n(), cs.n())));
    }
    Ok(())
}

/// Full (both-triangle) entry lists of each `A_i`.
fn full_entries(cs: &ConstraintSet) -> Vec<Vec<(usize, usize, f64)>> {
    cs.a()
        .iter()
        .map(|ai| {
            let mut out = Vec::with_capacity(2 * ai.nnz_upper());
            for &(r, c, v) in ai.entries() {
                out.push((r, c, v));
                if r != c {
                    out.push((c, r, v));
                }
            }
            out
        })
        .collect()
}

/// `[tr A_i X A_j Yᵀ]_{ij}` for general square `X`, `Y`.
pub fn dense_kron_form(cs: &ConstraintSet, x: &DMatrix<f64>, y: &DMatrix<f64>, cap: usize) -> Result<DMatrix<f64>> {
    let m = cs.m();
    if m > cap {
        return Err(Error::OracleRefused { size: m, cap });
    }
    let full = full_entries(cs);
    let mut h = DMatrix::zeros(m, m);
    // tr(A_i X A_j Yᵀ) = ∑ A_i[a,b] A_j[c,d] X[b,c] Y[a,d]
    for j in 0..m {
        for i in 0..m {
            let mut s = 0.0;
            for &(a, b, vi) in &full[i] {
                for &(c, d, vj) in &full[j] {
                    s += vi * vj * x[(b, c)] * y[(a, d)];
                }
            }
            h[(i, j)] = s;
        }
    }
    Ok(h)
}

/// `H_ij = A_i • W A_j W`, refused above `cap` constraints.
pub fn dense_hessian(cs: &ConstraintSet, w: &DenseSymMatrix, cap: usize) -> Result<DenseSymMatrix> {
    check_dim(cs, w)?;
    let m = cs.m();
    if m > cap {
        return Err(Error::OracleRefused { size: m, cap });
    }
    let full = full_entries(cs);
    let wm = w.as_matrix();
    let mut h = DenseSymMatrix::zeros(m);
    for j in 0..m {
        for i in 0..=j {
            let mut s = 0.0;
            for &(a, b, vi) in &full[i] {
                for &(c, d, vj) in &full[j] {
                    s += vi * vj * wm[(b, c)] * wm[(d, a)];
                }
            }
            h.set(i, j, s);
        }
    }
    Ok(h)
}

/// Matrix-free `𝐔 = 𝐀ᵀ(U⊗Zf)` and its adjoint.
#[derive(Debug, Clone, Copy)]
pub struct LowRankOperator<'a> {
    cs: &'a ConstraintSet,
    split: &'a SpectralSplit,
}

impl<'a> LowRankOperator<'a> {
    pub fn new(cs: &'a ConstraintSet, split: &'a SpectralSplit) -> Result<Self> {
        if split.n() != cs.n() {
            return Err(invalid("split dimension does not match constraint set"));
        }
        Ok(Self { cs, split })
    }

    /// Length of the low-rank side, `n·k̃`.
    pub fn cols(&self) -> usize {
        self.split.n() * self.split.ktilde()
    }

    /// `𝐔 x = [A_i • (Zf · mat(x) · Uᵀ)]_i`
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.cols() {
            return Err(invalid(format!("vector has length {}, expected n·k = {}", x.len(), self.cols())));
        }
        let (n, k) = (self.split.n(), self.split.ktilde());
        if k == 0 {
            return Ok(DVector::zeros(self.cs.m()));
        }
        let xm = DMatrix::from_column_slice(n, k, x.as_slice());
        let t = self.split.zf() * xm;
        let u = self.split.u();
        // (T Uᵀ)[r,c] = T[r,:]·U[c,:]
        let entry = |r: usize, c: usize| (0..k).map(|l| t[(r, l)] * u[(c, l)]).sum::<f64>();
        Ok(DVector::from_iterator(
            self.cs.m(),
            self.cs.a().iter().map(|ai| {
                ai.entries()
                    .iter()
                    .map(|&(r, c, v)| if r == c { v * entry(r, r) } else { v * (entry(r, c) + entry(c, r)) })
                    .sum::<f64>()
            }),
        ))
    }

    /// `𝐔ᵀ y = vec(Zfᵀ · (∑ y_i A_i) · U)`
    pub fn apply_adjoint(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.cs.m() {
            return Err(invalid(format!("vector has length {}, expected m = {}", y.len(), self.cs.m())));
        }
        let (n, k) = (self.split.n(), self.split.ktilde());
        if k == 0 {
            return Ok(DVector::zeros(0));
        }
        let u = self.split.u();
        let mut eu = DMatrix::zeros(n, k);
        for (ai, &yi) in self.cs.a().iter().zip(y.iter()) {
            if yi == 0.0 {
                continue;
            }
            for &(r, c, v) in ai.entries() {
                let s = yi * v;
                for l in 0..k {
                    eu[(r, l)] += s * u[(c, l)];
                }
                if r != c {
                    for l in 0..k {
                        eu[(c, l)] += s * u[(r, l)];
                    }
                }
            }
        }
        let out = self.split.zf().tr_mul(&eu);
        Ok(DVector::from_column_slice(out.as_slice()))
    }

    /// Explicit `m × n·k̃` matrix, column by column through [`Self::apply`].
    pub fn to_dense(&self) -> DMatrix<f64> {
        let cols = self.cols();
        let mut out = DMatrix::zeros(self.cs.m(), cols);
        let mut e = DVector::zeros(cols);
        for j in 0..cols {
            e[j] = 1.0;
            out.set_column(j, &self.apply(&e).expect("length checked"));
            e[j] = 0.0;
        }
        out
    }
}

/// `S = C − ∑ y_i A_i`, `X = W(Z − S)W`.
pub fn recover(
    cs: &ConstraintSet,
    w: &DenseSymMatrix,
    z: &DenseSymMatrix,
    y: &DVector<f64>,
) -> Result<(DenseSymMatrix, DenseSymMatrix)> {
    check_dim(cs, w)?;
    check_dim(cs, z)?;
    let s = cs.c().sub(&cs.expand(y)?);
    let x = DenseSymMatrix::sandwich(w, &z.sub(&s));
    Ok((s, x))
}
