//! Scaling matrix construction, rank estimation from its spectrum, and the
//! well-conditioned plus low-rank split `W = W₀ + UUᵀ`.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::linalg::{cholesky_spd, sym_eig, DenseSymMatrix, SymEig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScalingKind {
    /// `W = X`
    Primal,
    /// `W = S⁻¹`
    Dual,
    /// The unique `W ≻ 0` with `W S W = X`.
    #[default]
    Nt,
}

impl std::str::FromStr for ScalingKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "primal" => Ok(Self::Primal),
            "dual" => Ok(Self::Dual),
            "nt" => Ok(Self::Nt),
            other => Err(invalid(format!("unknown scaling kind '{other}'"))),
        }
    }
}

pub fn compute_scaling(x: &DenseSymMatrix, s: &DenseSymMatrix, kind: ScalingKind) -> Result<DenseSymMatrix> {
    if x.n() != s.n() {
        return Err(invalid("X and S must have the same dimension"));
    }
    match kind {
        ScalingKind::Primal => {
            cholesky_spd(x)?;
            Ok(x.clone())
        }
        ScalingKind::Dual => Ok(cholesky_spd(s)?.inverse()),
        ScalingKind::Nt => nt_scaling(x, s),
    }
}

/// `W = S^{-1/2} (S^{1/2} X S^{1/2})^{1/2} S^{-1/2}`
fn nt_scaling(x: &DenseSymMatrix, s: &DenseSymMatrix) -> Result<DenseSymMatrix> {
    cholesky_spd(x)?;
    cholesky_spd(s)?;
    let es = sym_eig(s)?;
    if es.min() <= 0.0 {
        return Err(crate::Error::NotPositiveDefinite { pivot: s.n() - 1, value: es.min() });
    }
    let s_half = es.recompose_with(f64::sqrt);
    let s_inv_half = es.recompose_with(|v| 1.0 / v.sqrt());
    let inner = DenseSymMatrix::sandwich(&s_half, x);
    let ei = sym_eig(&inner)?;
    let inner_half = ei.recompose_with(|v| v.max(0.0).sqrt());
    Ok(DenseSymMatrix::sandwich(&s_inv_half, &inner_half))
}

/// `k̃ = max{ i ∈ 0..=kmax : λ_i ≥ η λ_{i+1} }` (1-based, `λ_0 = +∞`).
pub fn estimate_rank(eigvals: &[f64], kmax: usize, eta: f64) -> Result<usize> {
    let n = eigvals.len();
    if kmax >= n {
        return Err(invalid(format!("kmax = {kmax} must be below n = {n}")));
    }
    if !(eta > 1.0) {
        return Err(invalid("eigenvalue ratio eta must exceed 1"));
    }
    if let Some(v) = eigvals.iter().find(|v| !(**v > 0.0)) {
        return Err(invalid(format!("scaling eigenvalue {v:e} is not positive")));
    }
    if eigvals.windows(2).any(|w| w[0] < w[1]) {
        return Err(invalid("eigenvalues must be sorted descending"));
    }
    Ok((1..=kmax).rev().find(|&i| eigvals[i - 1] >= eta * eigvals[i]).unwrap_or(0))
}

/// Spectral split of a scaling matrix.
#[derive(Debug, Clone)]
pub struct SpectralSplit {
    eig: SymEig,
    ktilde: usize,
    tau: f64,
    /// `n × k̃`, column `j` is `v_j · sqrt(λ_j − τ)`.
    u: DMatrix<f64>,
    /// Lower-triangular with `Zf Zfᵀ = 2W₀ + UUᵀ`.
    zf: DMatrix<f64>,
}

/// Splits `W` at rank `k̃` with `τ = λ_min(W)`.
pub fn split(w: &DenseSymMatrix, ktilde: usize) -> Result<SpectralSplit> {
    let eig = sym_eig(w)?;
    split_from_eig(eig, ktilde)
}

pub fn split_from_eig(eig: SymEig, ktilde: usize) -> Result<SpectralSplit> {
    let n = eig.values.len();
    if ktilde >= n.max(1) {
        return Err(invalid(format!("rank {ktilde} must be below n = {n}")));
    }
    let tau = eig.min();
    if !(tau > 0.0) {
        return Err(crate::Error::NotPositiveDefinite { pivot: n - 1, value: tau });
    }
    let mut u = DMatrix::zeros(n, ktilde);
    for j in 0..ktilde {
        let s = (eig.values[j] - tau).sqrt();
        u.set_column(j, &(eig.vectors.column(j) * s));
    }
    // 2W₀ + UUᵀ = V diag(2τ + (λ_j − τ) for j < k̃, 2λ_j otherwise) Vᵀ
    let zz = eig.recompose_with_index(|j, v| if j < ktilde { v + tau } else { 2.0 * v });
    let zf = cholesky_spd(&zz)?.into_l();
    Ok(SpectralSplit { eig, ktilde, tau, u, zf })
}

impl SymEig {
    fn recompose_with_index(&self, f: impl Fn(usize, f64) -> f64) -> DenseSymMatrix {
        let mut scaled = self.vectors.clone();
        for j in 0..self.values.len() {
            let s = f(j, self.values[j]);
            scaled.column_mut(j).scale_mut(s);
        }
        let m = &scaled * self.vectors.transpose();
        DenseSymMatrix::symmetrize(m).expect("square")
    }
}

impl SpectralSplit {
    pub fn n(&self) -> usize {
        self.eig.values.len()
    }

    pub fn ktilde(&self) -> usize {
        self.ktilde
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn zf(&self) -> &DMatrix<f64> {
        &self.zf
    }

    pub fn eigvals(&self) -> &DVector<f64> {
        &self.eig.values
    }

    pub fn eigvecs(&self) -> &DMatrix<f64> {
        &self.eig.vectors
    }

    /// `W₀ = V diag(τ,…,τ, λ_{k̃+1},…,λ_n) Vᵀ`
    pub fn w0(&self) -> DenseSymMatrix {
        let k = self.ktilde;
        let tau = self.tau;
        self.eig.recompose_with_index(|j, v| if j < k { tau } else { v })
    }

    /// `W₀ + UUᵀ`
    pub fn reconstruct(&self) -> DenseSymMatrix {
        let uu = &self.u * self.u.transpose();
        DenseSymMatrix::symmetrize(self.w0().into_matrix() + uu).expect("square")
    }

    /// `κ(W₀) = λ_{k̃+1}(W) / τ`
    pub fn kappa_w0(&self) -> f64 {
        self.eig.values[self.ktilde] / self.tau
    }

    /// `(τI + UUᵀ)⁻¹ x` by Sherman–Morrison–Woodbury with the `k̃ × k̃`
    /// Schur complement `τI + UᵀU`.
    pub fn apply_wtilde_inv(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.n() {
            return Err(invalid("vector length does not match split dimension"));
        }
        let tau = self.tau;
        if self.ktilde == 0 {
            return Ok(x / tau);
        }
        let utx = self.u.transpose() * x;
        let schur = DenseSymMatrix::symmetrize(
            DMatrix::identity(self.ktilde, self.ktilde) * tau + self.u.transpose() * &self.u,
        )?;
        let t = cholesky_spd(&schur)?.solve(&utx);
        Ok((x - &self.u * t) / tau)
    }
}
