//! Spectral preconditioners for the Hessian equation.
//!
//! Both replace `W₀` by `τI` in the Hessian split. The SMW form inverts
//! `τ²𝐀ᵀ𝐀 + 𝐔𝐔ᵀ` through an `n·k̃` Schur complement; the augmented form
//! inverts `τ²𝐀ᵀ𝐀 + 2τ·𝐀ᵀ(UUᵀ⊗I)𝐀` through a sparse quasi-definite
//! factorization.

use nalgebra::{DMatrix, DVector};

use crate::constraints::ConstraintSet;
use crate::error::{invalid, Error, Result};
use crate::hessian::LowRankOperator;
use crate::linalg::{cholesky_spd, ldl_quasidef, CholeskyFactor, DenseSymMatrix, QuasiDefFactor, SparseSymBuilder, SparseSymMatrix};
use crate::scaling::SpectralSplit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PreconditionerKind {
    #[default]
    Augmented,
    Smw,
    /// Form the Hessian densely and solve it by Cholesky (no PCG).
    Dense,
}

impl std::str::FromStr for PreconditionerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "augmented" | "aug" => Ok(Self::Augmented),
            "smw" => Ok(Self::Smw),
            "dense" => Ok(Self::Dense),
            other => Err(invalid(format!("unknown preconditioner '{other}'"))),
        }
    }
}

impl std::fmt::Display for PreconditionerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Augmented => "augmented",
            Self::Smw => "smw",
            Self::Dense => "dense",
        })
    }
}

/// `(τ²𝐀ᵀ𝐀 + 𝐔𝐔ᵀ)⁻¹` via Sherman–Morrison–Woodbury.
#[derive(Debug, Clone)]
pub struct SmwPreconditioner<'a> {
    tau: f64,
    op: LowRankOperator<'a>,
    cs: &'a ConstraintSet,
    /// Cholesky factor of `𝐒 = τ²I + 𝐔ᵀ(𝐀ᵀ𝐀)⁻¹𝐔`; `None` when `k̃ = 0`.
    schur: Option<CholeskyFactor>,
}

pub fn build_smw<'a>(cs: &'a ConstraintSet, split: &'a SpectralSplit) -> Result<SmwPreconditioner<'a>> {
    let op = LowRankOperator::new(cs, split)?;
    let tau = split.tau();
    let dim = op.cols();
    if dim == 0 {
        return Ok(SmwPreconditioner { tau, op, cs, schur: None });
    }
    let mut s = DMatrix::zeros(dim, dim);
    let mut e = DVector::zeros(dim);
    for j in 0..dim {
        e[j] = 1.0;
        let col = op.apply_adjoint(&cs.normal_solve(&op.apply(&e)?)?)?;
        s.set_column(j, &col);
        e[j] = 0.0;
    }
    for j in 0..dim {
        s[(j, j)] += tau * tau;
    }
    let s = DenseSymMatrix::symmetrize(s)?;
    let schur = cholesky_spd(&s).map_err(|e| Error::NumericalBreakdown(format!("SMW Schur complement: {e}")))?;
    Ok(SmwPreconditioner { tau, op, cs, schur: Some(schur) })
}

impl SmwPreconditioner<'_> {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn schur_dim(&self) -> usize {
        self.op.cols()
    }

    /// `τ⁻²(𝐀ᵀ𝐀)⁻¹(r − 𝐔𝐒⁻¹𝐔ᵀ(𝐀ᵀ𝐀)⁻¹r)`
    pub fn apply(&self, r: &DVector<f64>) -> Result<DVector<f64>> {
        let g = self.cs.normal_solve(r)?;
        let Some(schur) = &self.schur else {
            return Ok(g / (self.tau * self.tau));
        };
        let t = schur.solve(&self.op.apply_adjoint(&g)?);
        let v = r - self.op.apply(&t)?;
        Ok(self.cs.normal_solve(&v)? / (self.tau * self.tau))
    }
}

pub fn apply_smw(p: &SmwPreconditioner<'_>, r: &DVector<f64>) -> Result<DVector<f64>> {
    p.apply(r)
}

/// `(τ²𝐀ᵀ𝐀 + 2τ·𝐀ᵀ(UUᵀ⊗I)𝐀)⁻¹` via the quasi-definite system
/// `[τ²𝐀ᵀ𝐀, τ^{3/2}𝐁; τ^{3/2}𝐁ᵀ, −τ²/2·I]` with `𝐁 = 𝐀ᵀ(U⊗I)`.
#[derive(Debug, Clone)]
pub struct AugPreconditioner {
    tau: f64,
    m: usize,
    offdiag_nnz: usize,
    k: SparseSymMatrix,
    factor: QuasiDefFactor,
}

/// Sparse rows of `𝐁 = 𝐀ᵀ(U⊗I)`: `𝐁[i, a + l·n] = (A_i U)[a, l]`.
pub fn lowrank_coupling_rows(cs: &ConstraintSet, u: &DMatrix<f64>) -> Vec<Vec<(usize, f64)>> {
    let (n, k) = (cs.n(), u.ncols());
    cs.a()
        .iter()
        .map(|ai| {
            let mut row: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
            for &(r, c, v) in ai.entries() {
                for l in 0..k {
                    *row.entry(r + l * n).or_default() += v * u[(c, l)];
                    if r != c {
                        *row.entry(c + l * n).or_default() += v * u[(r, l)];
                    }
                }
            }
            row.into_iter().filter(|&(_, v)| v != 0.0).collect()
        })
        .collect()
}

pub fn build_aug(cs: &ConstraintSet, split: &SpectralSplit) -> Result<AugPreconditioner> {
    if split.n() != cs.n() {
        return Err(invalid("split dimension does not match constraint set"));
    }
    let (m, n, kt) = (cs.m(), cs.n(), split.ktilde());
    let tau = split.tau();
    let tau2 = tau * tau;
    let coupling = tau * tau.sqrt();
    let mut builder = SparseSymBuilder::new(m + n * kt);
    for &(r, c, v) in cs.gram().entries() {
        builder.add(r, c, tau2 * v);
    }
    let mut offdiag_nnz = 0;
    for (i, row) in lowrank_coupling_rows(cs, split.u()).into_iter().enumerate() {
        offdiag_nnz += row.len();
        for (col, v) in row {
            builder.add(i, m + col, coupling * v);
        }
    }
    for j in 0..n * kt {
        builder.add(m + j, m + j, -0.5 * tau2);
    }
    let k = builder.build();
    let factor = ldl_quasidef(&k).map_err(|e| Error::NumericalBreakdown(format!("augmented factorization: {e}")))?;
    Ok(AugPreconditioner { tau, m, offdiag_nnz, k, factor })
}

impl AugPreconditioner {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// The assembled quasi-definite matrix.
    pub fn system(&self) -> &SparseSymMatrix {
        &self.k
    }

    pub fn factor(&self) -> &QuasiDefFactor {
        &self.factor
    }

    /// Nonzeros of the coupling block `𝐁`.
    pub fn coupling_nnz(&self) -> usize {
        self.offdiag_nnz
    }

    /// x-block of the solve with right-hand side `(r, 0)`.
    pub fn apply(&self, r: &DVector<f64>) -> Result<DVector<f64>> {
        if r.len() != self.m {
            return Err(invalid(format!("vector has length {}, expected m = {}", r.len(), self.m)));
        }
        let mut z = vec![0.0; self.k.n()];
        z[..self.m].copy_from_slice(r.as_slice());
        self.factor.solve_in_place(&mut z);
        Ok(DVector::from_column_slice(&z[..self.m]))
    }
}

pub fn apply_aug(p: &AugPreconditioner, r: &DVector<f64>) -> Result<DVector<f64>> {
    p.apply(r)
}
