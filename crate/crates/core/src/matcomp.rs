//! Random low-rank matrix-completion instances and their nuclear-norm SDP.
//!
//! An instance observes `M = G₁G₂ᵀ` on a uniformly random index set Ω.
//! Its SDP relaxation lives in `n = p + q` with
//! `X = [[U, Z], [Zᵀ, V]]`, `C = I` and one constraint `Z_ij = M_ij` per
//! observation.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::constraints::ConstraintSet;
use crate::error::{invalid, Result};
use crate::ipm::Iterate;
use crate::linalg::{DenseSymMatrix, SparseSymMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixCompletionInstance {
    pub p: usize,
    pub q: usize,
    pub k: usize,
    pub seed: u64,
    /// Observed positions, 0-based, sorted row-major.
    pub omega: Vec<(usize, usize)>,
    pub values: Vec<f64>,
    /// Generator factors `(G₁, G₂)` when known.
    pub factors: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

impl MatrixCompletionInstance {
    pub fn m(&self) -> usize {
        self.omega.len()
    }

    pub fn n(&self) -> usize {
        self.p + self.q
    }

    /// Checks ranges, distinctness and finiteness of the observations.
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.q == 0 {
            return Err(invalid("p and q must be positive"));
        }
        if self.omega.len() != self.values.len() {
            return Err(invalid(format!("{} positions but {} values", self.omega.len(), self.values.len())));
        }
        let mut seen = vec![false; self.p * self.q];
        for (t, &(i, j)) in self.omega.iter().enumerate() {
            if i >= self.p || j >= self.q {
                return Err(invalid(format!("observation {t} at ({i}, {j}) is outside {}×{}", self.p, self.q)));
            }
            if std::mem::replace(&mut seen[i * self.q + j], true) {
                return Err(invalid(format!("observation ({i}, {j}) is repeated")));
            }
            if !self.values[t].is_finite() {
                return Err(invalid(format!("observation ({i}, {j}) is not finite")));
            }
        }
        if let Some((g1, g2)) = &self.factors {
            if g1.shape() != (self.p, self.k) || g2.shape() != (self.q, self.k) {
                return Err(invalid("generator factors have the wrong shape"));
            }
        }
        Ok(())
    }

    /// The full matrix `G₁G₂ᵀ`, when the factors are known.
    pub fn ground_truth(&self) -> Option<DMatrix<f64>> {
        self.factors.as_ref().map(|(g1, g2)| g1 * g2.transpose())
    }

    /// Re-derives the generator factors from `(p, q, k, seed)` and keeps
    /// them only if they reproduce every observed value bit for bit.
    pub fn with_regenerated_factors(mut self) -> Self {
        if self.k == 0 || self.k > self.p.min(self.q) {
            return self;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (g1, g2) = sample_factors(self.p, self.q, self.k, &mut rng);
        let consistent = self.omega.iter().zip(&self.values).all(|(&(i, j), &v)| entry(&g1, &g2, i, j) == v);
        if consistent {
            self.factors = Some((g1, g2));
        }
        self
    }
}

fn sample_factors(p: usize, q: usize, k: usize, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DMatrix<f64>) {
    // Row-major draw order, G₁ first.
    let mut draw = |rows: usize| {
        let data: Vec<f64> = (0..rows * k).map(|_| rng.sample(StandardNormal)).collect();
        DMatrix::from_row_slice(rows, k, &data)
    };
    let g1 = draw(p);
    let g2 = draw(q);
    (g1, g2)
}

fn entry(g1: &DMatrix<f64>, g2: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    g1.row(i).dot(&g2.row(j))
}

/// Draws `G₁ ∈ ℝ^{p×k}`, `G₂ ∈ ℝ^{q×k}` with i.i.d. standard normal entries
/// and observes `m` distinct entries of `G₁G₂ᵀ` chosen uniformly.
///
/// The stream is ChaCha8 seeded with `seed`; Ω comes from a partial
/// Fisher–Yates shuffle of the row-major linear indices.
pub fn generate(p: usize, q: usize, k: usize, m: usize, seed: u64) -> Result<MatrixCompletionInstance> {
    if p == 0 || q == 0 {
        return Err(invalid("p and q must be positive"));
    }
    if k == 0 || k > p.min(q) {
        return Err(invalid(format!("rank k = {k} must lie in 1..={}", p.min(q))));
    }
    let total = p * q;
    if m == 0 || m > total {
        return Err(invalid(format!("m = {m} must lie in 1..={total}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (g1, g2) = sample_factors(p, q, k, &mut rng);

    let mut idx: Vec<usize> = (0..total).collect();
    for t in 0..m {
        let pick = rng.random_range(t..total);
        idx.swap(t, pick);
    }
    let mut chosen = idx[..m].to_vec();
    chosen.sort_unstable();

    let omega: Vec<(usize, usize)> = chosen.iter().map(|&l| (l / q, l % q)).collect();
    let values = omega.iter().map(|&(i, j)| entry(&g1, &g2, i, j)).collect();
    Ok(MatrixCompletionInstance { p, q, k, seed, omega, values, factors: Some((g1, g2)) })
}

/// Nuclear-norm SDP: `min I•X` subject to `X_{i, p+j} = M_ij` on Ω.
pub fn to_sdp(inst: &MatrixCompletionInstance) -> Result<ConstraintSet> {
    inst.validate()?;
    let n = inst.n();
    let a = inst
        .omega
        .iter()
        .map(|&(i, j)| SparseSymMatrix::from_triplets(n, &[(i, inst.p + j, 0.5)]))
        .collect::<Result<Vec<_>>>()?;
    ConstraintSet::new(n, a, inst.values.clone(), DenseSymMatrix::identity(n))
}

/// Observed entries as a `p×q` matrix with zeros elsewhere.
pub fn observed_matrix(inst: &MatrixCompletionInstance) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(inst.p, inst.q);
    for (&(i, j), &v) in inst.omega.iter().zip(&inst.values) {
        z[(i, j)] = v;
    }
    z
}

/// `X = [[αI, Z̄], [Z̄ᵀ, αI]]` with `α = 1.1·σ_max(Z̄) + 1`, so that
/// `λ_min(X) = α − σ_max(Z̄) > 0`.
pub fn start_primal(inst: &MatrixCompletionInstance) -> Result<DenseSymMatrix> {
    let n = inst.n();
    let zbar = observed_matrix(inst);
    let alpha = 1.1 * spectral_norm(&zbar) + 1.0;
    let mut x = DMatrix::identity(n, n) * alpha;
    x.view_mut((0, inst.p), (inst.p, inst.q)).copy_from(&zbar);
    x.view_mut((inst.p, 0), (inst.q, inst.p)).copy_from(&zbar.transpose());
    DenseSymMatrix::from_upper(x)
}

/// Strictly feasible start: [`start_primal`] with `y = 0`, `S = I`.
pub fn feasible_start(inst: &MatrixCompletionInstance, cs: &ConstraintSet) -> Result<Iterate> {
    let n = inst.n();
    if cs.n() != n || cs.m() != inst.m() {
        return Err(invalid("constraint set does not belong to this instance"));
    }
    Iterate::new(start_primal(inst)?, nalgebra::DVector::zeros(inst.m()), DenseSymMatrix::identity(n))
}

fn spectral_norm(z: &DMatrix<f64>) -> f64 {
    z.singular_values().iter().copied().fold(0.0, f64::max)
}

fn nuclear_norm(z: &DMatrix<f64>) -> f64 {
    z.singular_values().iter().sum()
}

/// The `Z` block `X[0..p, p..p+q]` of a solution.
pub fn completion_block(inst: &MatrixCompletionInstance, x: &DenseSymMatrix) -> DMatrix<f64> {
    x.as_matrix().view((0, inst.p), (inst.p, inst.q)).into_owned()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryMetrics {
    /// `|‖Z‖_* − ‖M‖_*| / ‖M‖_*`; `None` without generator factors.
    pub objective_error: Option<f64>,
    /// `‖Z_Ω − M_Ω‖ / ‖M_Ω‖`.
    pub relative_residual: f64,
}

pub fn metrics(inst: &MatrixCompletionInstance, x: &DenseSymMatrix) -> Result<RecoveryMetrics> {
    if x.n() != inst.n() {
        return Err(invalid(format!("solution has dimension {} but the instance needs {}", x.n(), inst.n())));
    }
    let z = completion_block(inst, x);
    let (mut num, mut den) = (0.0, 0.0);
    for (&(i, j), &v) in inst.omega.iter().zip(&inst.values) {
        num += (z[(i, j)] - v).powi(2);
        den += v * v;
    }
    let relative_residual = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
    let objective_error = inst.ground_truth().map(|m| {
        let target = nuclear_norm(&m);
        let err = (nuclear_norm(&z) - target).abs();
        if target > 0.0 { err / target } else { err }
    });
    Ok(RecoveryMetrics { objective_error, relative_residual })
}
