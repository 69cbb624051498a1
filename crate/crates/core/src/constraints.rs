//! The data operator `𝐀 = [vec A₁, …, vec A_m]` and its three implicit
//! products: expand (`𝐀y`), project (`𝐀ᵀ vec X`) and normal solve
//! (`(𝐀ᵀ𝐀)⁻¹ v`).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::linalg::{sparse_cholesky, DenseSymMatrix, SparseCholesky, SparseSymBuilder, SparseSymMatrix};

/// Cached inverse action of the normal matrix `𝐀ᵀ𝐀`.
#[derive(Debug, Clone)]
pub enum NormalFactor {
    /// `𝐀ᵀ𝐀` is diagonal; holds the reciprocals.
    Diagonal(Vec<f64>),
    Sparse(SparseCholesky),
}

impl NormalFactor {
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            NormalFactor::Diagonal(inv) => DVector::from_fn(v.len(), |i, _| v[i] * inv[i]),
            NormalFactor::Sparse(f) => f.solve(v),
        }
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self, NormalFactor::Diagonal(_))
    }
}

/// Single-block SDP data `min C•X s.t. A_i•X = b_i, X ⪰ 0`.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    n: usize,
    a: Vec<SparseSymMatrix>,
    b: DVector<f64>,
    c: DenseSymMatrix,
    gram: SparseSymMatrix,
    normal: NormalFactor,
}

impl ConstraintSet {
    /// Validates shapes, assembles `𝐀ᵀ𝐀` from pattern intersections and
    /// factors it. A rank-deficient `𝐀` is rejected here.
    pub fn new(n: usize, a: Vec<SparseSymMatrix>, b: Vec<f64>, c: DenseSymMatrix) -> Result<Self> {
        let m = a.len();
        if m == 0 {
            return Err(invalid("at least one constraint is required"));
        }
        if b.len() != m {
            return Err(invalid(format!("b has length {}, expected {m}", b.len())));
        }
        if c.n() != n {
            return Err(invalid(format!("cost matrix is {}x{0}, expected {n}", c.n())));
        }
        if let Some(i) = a.iter().position(|ai| ai.n() != n) {
            return Err(invalid(format!("A_{} has dimension {}, expected {n}", i + 1, a[i].n())));
        }
        if b.iter().any(|v| !v.is_finite()) || !c.is_finite() {
            return Err(invalid("non-finite problem data"));
        }
        let gram = assemble_gram(&a);
        let normal = factor_gram(&gram)?;
        Ok(Self { n, a, b: DVector::from_vec(b), c, gram, normal })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self) -> &[SparseSymMatrix] {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> &DenseSymMatrix {
        &self.c
    }

    /// `𝐀ᵀ𝐀` as assembled at construction.
    pub fn gram(&self) -> &SparseSymMatrix {
        &self.gram
    }

    pub fn normal_factor(&self) -> &NormalFactor {
        &self.normal
    }

    /// `∑ y_i A_i`
    pub fn expand(&self, y: &DVector<f64>) -> Result<DenseSymMatrix> {
        self.check_m(y.len())?;
        let mut out = DenseSymMatrix::zeros(self.n);
        for (ai, &yi) in self.a.iter().zip(y.iter()) {
            if yi == 0.0 {
                continue;
            }
            for &(r, c, v) in ai.entries() {
                out.add_sym(r, c, yi * v);
            }
        }
        Ok(out)
    }

    /// `[A_i • X]_i`
    pub fn project(&self, x: &DenseSymMatrix) -> Result<DVector<f64>> {
        if x.n() != self.n {
            return Err(invalid(format!("X is {}x{0}, expected {}", x.n(), self.n)));
        }
        Ok(self.project_general(x.as_matrix()))
    }

    /// `[A_i • M]_i` for a general (not necessarily symmetric) square `M`;
    /// equals `project((M + Mᵀ)/2)`.
    pub fn project_general(&self, m: &DMatrix<f64>) -> DVector<f64> {
        debug_assert_eq!(m.nrows(), self.n);
        DVector::from_iterator(
            self.a.len(),
            self.a.iter().map(|ai| {
                ai.entries()
                    .iter()
                    .map(|&(r, c, v)| if r == c { v * m[(r, r)] } else { v * (m[(r, c)] + m[(c, r)]) })
                    .sum::<f64>()
            }),
        )
    }

    /// `(𝐀ᵀ𝐀) v`
    pub fn gram_mul(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_m(v.len())?;
        Ok(self.gram.mul_vec(v))
    }

    /// `(𝐀ᵀ𝐀)⁻¹ v`
    pub fn normal_solve(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_m(v.len())?;
        Ok(self.normal.solve(v))
    }

    /// `C•X`
    pub fn objective(&self, x: &DenseSymMatrix) -> f64 {
        self.c.dot(x)
    }

    /// `‖project(X) − b‖ / (1 + ‖b‖)`
    pub fn primal_residual(&self, x: &DenseSymMatrix) -> f64 {
        let r = self.project_general(x.as_matrix()) - &self.b;
        r.norm() / (1.0 + self.b.norm())
    }

    /// `‖expand(y) + S − C‖_F / (1 + ‖C‖_F)`
    pub fn dual_residual(&self, y: &DVector<f64>, s: &DenseSymMatrix) -> f64 {
        let Ok(ay) = self.expand(y) else { return f64::INFINITY };
        ay.add(s).sub(&self.c).frobenius_norm() / (1.0 + self.c.frobenius_norm())
    }

    fn check_m(&self, len: usize) -> Result<()> {
        if len != self.a.len() {
            return Err(invalid(format!("vector has length {len}, expected m = {}", self.a.len())));
        }
        Ok(())
    }
}

/// `G_ij = ⟨A_i, A_j⟩_F`, accumulated over shared nonzero positions.
fn assemble_gram(a: &[SparseSymMatrix]) -> SparseSymMatrix {
    let mut by_pos: BTreeMap<(usize, usize), Vec<(usize, f64)>> = BTreeMap::new();
    for (i, ai) in a.iter().enumerate() {
        for &(r, c, v) in ai.entries() {
            by_pos.entry((r, c)).or_default().push((i, v));
        }
    }
    let mut g = SparseSymBuilder::new(a.len());
    for (&(r, c), list) in &by_pos {
        // off-diagonal positions appear twice in the full matrix
        let mult = if r == c { 1.0 } else { 2.0 };
        for (s, &(i, vi)) in list.iter().enumerate() {
            for &(j, vj) in &list[s..] {
                g.add(i, j, mult * vi * vj);
            }
        }
    }
    g.build()
}

fn factor_gram(gram: &SparseSymMatrix) -> Result<NormalFactor> {
    let m = gram.n();
    if let Some(d) = gram.as_diagonal() {
        let mut inv = Vec::with_capacity(m);
        for (i, &v) in d.iter().enumerate() {
            if !(v > 0.0) {
                return Err(Error::DegenerateData { pivot: i, value: v });
            }
            inv.push(1.0 / v);
        }
        return Ok(NormalFactor::Diagonal(inv));
    }
    // relative pivot floor: a Gram matrix of dependent constraints produces
    // pivots at roundoff level rather than exact zeros
    let scale = gram.entries().iter().filter(|e| e.0 == e.1).fold(0.0f64, |a, e| a.max(e.2));
    let chol = sparse_cholesky(gram).map_err(|e| match e {
        Error::NotPositiveDefinite { pivot, value } => Error::DegenerateData { pivot, value },
        other => other,
    })?;
    let f = chol.factor();
    for (pos, &d) in f.d().iter().enumerate() {
        if d <= 1e-13 * scale {
            return Err(Error::DegenerateData { pivot: f.permutation()[pos], value: d });
        }
    }
    Ok(NormalFactor::Sparse(chol))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random sparse constraint set. Each `A_i` owns a distinct anchor
    /// position, so `𝐀` is full rank almost surely.
    pub(crate) fn random_constraints(n: usize, m: usize, rng: &mut ChaCha8Rng) -> ConstraintSet {
        let positions: Vec<(usize, usize)> = (0..n).flat_map(|r| (r..n).map(move |c| (r, c))).collect();
        assert!(m <= positions.len());
        let mut a = Vec::with_capacity(m);
        for i in 0..m {
            let anchor = positions[(i * 7919) % positions.len()];
            let mut trips = vec![(anchor.0, anchor.1, 1.0 + rng.random::<f64>())];
            for _ in 0..2 {
                let (r, c) = positions[rng.random_range(0..positions.len())];
                if (r, c) != anchor && !trips.iter().any(|t| (t.0, t.1) == (r, c)) {
                    trips.push((r, c, rng.random_range(-0.5..0.5)));
                }
            }
            a.push(SparseSymMatrix::from_triplets(n, &trips).unwrap());
        }
        let b = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let c = DenseSymMatrix::symmetrize(&g * g.transpose() + DMatrix::identity(n, n)).unwrap();
        ConstraintSet::new(n, a, b, c).expect("full-rank random constraints")
    }

    pub(crate) fn random_sym(n: usize, rng: &mut ChaCha8Rng) -> DenseSymMatrix {
        DenseSymMatrix::symmetrize(DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))).unwrap()
    }

    fn dense_vec_a(cs: &ConstraintSet) -> DMatrix<f64> {
        let n = cs.n();
        let mut a = DMatrix::zeros(n * n, cs.m());
        for (i, ai) in cs.a().iter().enumerate() {
            let d = ai.to_dense();
            for c in 0..n {
                for r in 0..n {
                    a[(r + c * n, i)] = d[(r, c)];
                }
            }
        }
        a
    }

    #[test]
    fn expand_unit_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cs = random_constraints(5, 6, &mut rng);
        let mut e1 = DVector::zeros(6);
        e1[0] = 1.0;
        assert_eq!(cs.expand(&e1).unwrap().into_matrix(), cs.a()[0].to_dense());
        assert_eq!(cs.expand(&DVector::zeros(6)).unwrap(), DenseSymMatrix::zeros(5));
        assert!(cs.expand(&DVector::zeros(5)).is_err());
    }

    #[test]
    fn expand_matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cs = random_constraints(6, 10, &mut rng);
        let y = DVector::from_fn(10, |_, _| rng.random_range(-1.0..1.0));
        let naive = cs.a().iter().zip(y.iter()).fold(DMatrix::zeros(6, 6), |acc, (ai, yi)| acc + ai.to_dense() * *yi);
        assert!((cs.expand(&y).unwrap().into_matrix() - naive).norm() < 1e-14);
    }

    #[test]
    fn project_basic_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cs = random_constraints(4, 5, &mut rng);
        assert_eq!(cs.project(&DenseSymMatrix::zeros(4)).unwrap(), DVector::zeros(5));
        assert!(cs.project(&DenseSymMatrix::zeros(3)).is_err());

        let single = ConstraintSet::new(4, vec![SparseSymMatrix::identity(4)], vec![1.0], DenseSymMatrix::identity(4)).unwrap();
        let x = random_sym(4, &mut rng);
        assert!((single.project(&x).unwrap()[0] - x.trace()).abs() < 1e-15);
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cs = random_constraints(8, 12, &mut rng);
        for _ in 0..100 {
            let y = DVector::from_fn(12, |_, _| rng.random_range(-1.0..1.0));
            let x = random_sym(8, &mut rng);
            let lhs = cs.expand(&y).unwrap().dot(&x);
            let rhs = y.dot(&cs.project(&x).unwrap());
            assert!((lhs - rhs).abs() <= 1e-12 * y.norm() * x.frobenius_norm());
        }
    }

    #[test]
    fn gram_consistency_with_dense_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 2..=8 {
            let m = (n * (n + 1) / 2).min(12);
            let cs = random_constraints(n, m, &mut rng);
            let a = dense_vec_a(&cs);
            let gram = a.transpose() * &a;
            assert!((cs.gram().to_dense() - &gram).norm() <= 1e-12 * gram.norm());
            let y = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
            let pe = cs.project(&cs.expand(&y).unwrap()).unwrap();
            assert!((pe - &gram * &y).norm() <= 1e-12 * gram.norm() * y.norm());
        }
    }

    #[test]
    fn normal_solve_cases() {
        let single = ConstraintSet::new(3, vec![SparseSymMatrix::identity(3)], vec![1.0], DenseSymMatrix::identity(3)).unwrap();
        let v = DVector::from_vec(vec![6.0]);
        assert!((single.normal_solve(&v).unwrap()[0] - 2.0).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cs = random_constraints(6, 10, &mut rng);
        let a = dense_vec_a(&cs);
        let gram = a.transpose() * &a;
        for _ in 0..20 {
            let v = DVector::from_fn(10, |_, _| rng.random_range(-1.0..1.0));
            let x = cs.normal_solve(&v).unwrap();
            let dense = gram.clone().cholesky().unwrap().solve(&v);
            assert!((&x - &dense).norm() <= 1e-10 * dense.norm());
            assert!((cs.gram_mul(&x).unwrap() - &v).norm() <= 1e-10 * v.norm());
        }
    }

    #[test]
    fn rank_deficient_is_degenerate() {
        let a1 = SparseSymMatrix::from_triplets(2, &[(0, 0, 1.0), (0, 1, 1.0)]).unwrap();
        let a2 = SparseSymMatrix::from_triplets(2, &[(0, 0, 2.0), (0, 1, 2.0)]).unwrap();
        let err = ConstraintSet::new(2, vec![a1, a2], vec![1.0, 2.0], DenseSymMatrix::identity(2)).unwrap_err();
        assert!(matches!(err, Error::DegenerateData { .. }));

        let zero = SparseSymMatrix::from_triplets(2, &[]).unwrap();
        let err = ConstraintSet::new(2, vec![zero], vec![0.0], DenseSymMatrix::identity(2)).unwrap_err();
        assert!(matches!(err, Error::DegenerateData { pivot: 0, .. }));
    }
}
