//! Feasible-start primal-dual path-following loop.
//!
//! Each outer iteration scales with `W`, splits its spectrum, solves the
//! Hessian equation by preconditioned CG (or densely) and backtracks along
//! the resulting direction until the trial point is positive definite and
//! inside the wide neighborhood `λ_min(XS) ≥ (γ/n)·tr XS`.

use std::time::{Duration, Instant};

use nalgebra::DVector;

use crate::constraints::ConstraintSet;
use crate::error::{invalid, Error, Result};
use crate::hessian::{dense_hessian, hess_matvec, DEFAULT_ORACLE_CAP};
use crate::linalg::{cholesky_spd, sym_eig, CholeskyFactor, DenseSymMatrix};
use crate::pcg::{pcg_solve_with, KrylovReport, KrylovStatus, StopNorm, STAGNATION_WINDOW};
use crate::precond::{build_aug, build_smw, AugPreconditioner, PreconditionerKind, SmwPreconditioner};
use crate::scaling::{compute_scaling, estimate_rank, split_from_eig, ScalingKind, SpectralSplit};

/// Primal-dual point with `X ≻ 0`, `S ≻ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub x: DenseSymMatrix,
    pub y: DVector<f64>,
    pub s: DenseSymMatrix,
}

impl Iterate {
    pub fn new(x: DenseSymMatrix, y: DVector<f64>, s: DenseSymMatrix) -> Result<Self> {
        if x.n() != s.n() {
            return Err(invalid("X and S must have the same dimension"));
        }
        Ok(Self { x, y, s })
    }

    pub fn n(&self) -> usize {
        self.x.n()
    }

    /// `μ = tr(XS)/n`
    pub fn mu(&self) -> f64 {
        self.x.dot(&self.s) / self.n() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Neighborhood width γ ∈ (0, 1).
    pub gamma: f64,
    /// Centering parameter σ ∈ (0, 1).
    pub sigma: f64,
    pub gap_tol: f64,
    pub max_iter: usize,
    pub scaling: ScalingKind,
    pub precond: PreconditionerKind,
    /// Rank cap for the spectral split; `None` means `n/4`.
    pub kmax: Option<usize>,
    /// Eigenvalue gap ratio η > 1 for rank estimation.
    pub eta: f64,
    /// PCG tolerance is `clamp(pcg_tol_factor·μ/μ₀, pcg_tol_min, pcg_tol_max)`.
    pub pcg_tol_factor: f64,
    pub pcg_tol_min: f64,
    pub pcg_tol_max: f64,
    pub pcg_maxit: usize,
    /// Refinement passes on the Hessian solve while the relative primal
    /// residual of the candidate exceeds `feas_tol`.
    pub max_refine: usize,
    pub feas_tol: f64,
    /// Largest `m` for which the dense Hessian may be formed.
    pub oracle_cap: usize,
    /// Pre-centering steps allowed when the start is outside the neighborhood.
    pub max_precenter: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            gamma: 1e-3,
            sigma: 0.3,
            gap_tol: 1e-9,
            max_iter: 100,
            scaling: ScalingKind::Nt,
            precond: PreconditionerKind::Augmented,
            kmax: None,
            eta: 10.0,
            pcg_tol_factor: 0.1,
            pcg_tol_min: 1e-11,
            pcg_tol_max: 1e-1,
            pcg_maxit: 300,
            max_refine: 2,
            feas_tol: 1e-8,
            oracle_cap: DEFAULT_ORACLE_CAP,
            max_precenter: 20,
            seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.gamma) {
            return Err(invalid("gamma must lie in (0, 1)"));
        }
        if !open_unit(self.sigma) {
            return Err(invalid("sigma must lie in (0, 1)"));
        }
        if !(self.gap_tol > 0.0) {
            return Err(invalid("gap_tol must be positive"));
        }
        if !(self.eta > 1.0) {
            return Err(invalid("eta must exceed 1"));
        }
        if !(self.pcg_tol_factor > 0.0 && 0.0 < self.pcg_tol_min && self.pcg_tol_min <= self.pcg_tol_max) {
            return Err(invalid("PCG tolerance rule needs 0 < min ≤ max and a positive factor"));
        }
        if self.pcg_maxit == 0 {
            return Err(invalid("pcg_maxit must be positive"));
        }
        Ok(())
    }

    pub fn pcg_tol(&self, mu: f64, mu0: f64) -> f64 {
        (self.pcg_tol_factor * mu / mu0).clamp(self.pcg_tol_min, self.pcg_tol_max)
    }

    fn kmax_for(&self, n: usize) -> usize {
        self.kmax.unwrap_or((n / 4).max(1)).min(n.saturating_sub(1))
    }
}

/// How the Hessian equation of one iteration was finally solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerSolve {
    Pcg(KrylovStatus),
    /// Second PCG attempt with a relaxed tolerance.
    Retry(KrylovStatus),
    Dense,
}

impl std::fmt::Display for InnerSolve {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Pcg(s) => write!(f, "{s}"),
            Self::Retry(s) => write!(f, "retry-{s}"),
            Self::Dense => f.write_str("dense"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// μ after the step.
    pub mu: f64,
    /// `C•X − bᵀy` after the step.
    pub gap: f64,
    pub pinf: f64,
    pub dinf: f64,
    pub ktilde: usize,
    pub tau: f64,
    pub kappa_w0: f64,
    pub pcg_iters: usize,
    pub pcg_status: InnerSolve,
    pub alpha: f64,
    /// True for pre-centering steps (σ = 1).
    pub centering: bool,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    NumericalFailure(String),
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Optimal => f.write_str("optimal"),
            Self::MaxIter => f.write_str("max-iter"),
            Self::NumericalFailure(msg) => write!(f, "numerical failure: {msg}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub iterate: Iterate,
    pub status: SolveStatus,
    pub log: Vec<IterationRecord>,
}

/// `λ_min(L_Xᵀ S L_X) ≥ (γ/n)·tr(XS)`; non-PD input counts as outside.
pub fn in_neighborhood(x: &DenseSymMatrix, s: &DenseSymMatrix, gamma: f64) -> bool {
    match centrality(x, s) {
        Some(c) => c >= gamma,
        None => false,
    }
}

/// `λ_min(XS)/μ`, or `None` when X or S is not positive definite.
pub fn centrality(x: &DenseSymMatrix, s: &DenseSymMatrix) -> Option<f64> {
    let lx = cholesky_spd(x).ok()?;
    cholesky_spd(s).ok()?;
    let l = lx.l();
    let inner = DenseSymMatrix::symmetrize(l.transpose() * s.as_matrix() * l).ok()?;
    let lmin = sym_eig(&inner).ok()?.min();
    let mu = x.dot(s) / x.n() as f64;
    if !(mu > 0.0) {
        return None;
    }
    Some(lmin / mu)
}

/// `Z = S + σμX⁻¹`
pub fn newton_target(it: &Iterate, sigma: f64) -> Result<DenseSymMatrix> {
    let xinv = cholesky_spd(&it.x)?.inverse();
    Ok(it.s.axpy(sigma * it.mu(), &xinv))
}

/// Smallest step length tried before giving up.
const MIN_STEP: f64 = 1e-8;
const BACKTRACK: f64 = 0.8;

/// One outer iteration with the configured σ. `mu0` anchors the PCG
/// tolerance rule.
pub fn ipm_step(cs: &ConstraintSet, it: &Iterate, opts: &SolverOptions, mu0: f64) -> Result<(Iterate, IterationRecord)> {
    step(cs, it, opts, mu0, opts.sigma, false, &mut true)
}

fn step(
    cs: &ConstraintSet,
    it: &Iterate,
    opts: &SolverOptions,
    mu0: f64,
    sigma: f64,
    centering: bool,
    refine: &mut bool,
) -> Result<(Iterate, IterationRecord)> {
    let start = Instant::now();
    let n = it.n();
    let mu = it.mu();

    let w = compute_scaling(&it.x, &it.s, opts.scaling)?;
    let eig = sym_eig(&w)?;
    let eigvals: Vec<f64> = eig.values.iter().copied().collect();
    let ktilde = estimate_rank(&eigvals, opts.kmax_for(n), opts.eta)?;
    let sp = split_from_eig(eig, ktilde)?;

    // Solve for the increment: H(y⁺ − y) = r − Hy = b − 𝐀ᵀ(W(Z − S)W), with
    // Z − S = σμX⁻¹ formed directly so the right-hand side carries no
    // cancellation and the tolerance is relative to the step.
    let shift = cholesky_spd(&it.x)?.inverse().scale(sigma * mu);
    let r = cs.b() - cs.project(&DenseSymMatrix::sandwich(&w, &shift))?;
    let tol = opts.pcg_tol(mu, mu0);
    let mut solver = HessianSolver::new(cs, &w, &sp, opts)?;
    let (mut dy, mut pcg_iters, pcg_status) = solver.solve(&r, tol)?;

    // X⁺ = W(Z − S⁺)W with Z − S⁺ = σμX⁻¹ + Σ Δyᵢ Aᵢ, which avoids
    // subtracting two nearly equal matrices late in the solve. Its primal
    // residual 𝐀ᵀX⁺ − b equals H·Δy − r, so a loose inner tolerance shows
    // up as infeasibility; refinement removes it while moving X and S
    // along the same linearization, leaving the decrease of μ intact.
    let recover_x = |dy: &DVector<f64>| -> Result<(DenseSymMatrix, f64)> {
        let x = DenseSymMatrix::sandwich(&w, &shift.add(&cs.expand(dy)?));
        let pinf = cs.primal_residual(&x);
        Ok((x, pinf))
    };
    let (mut x_new, mut pinf) = recover_x(&dy)?;
    // Once a pass fails to help, the residual is at the roundoff floor of
    // the recovery, which only rises as μ falls; later steps skip it.
    for _ in 0..opts.max_refine {
        if !*refine || pinf <= opts.feas_tol {
            break;
        }
        let pres = cs.b() - cs.project(&x_new)?;
        let Ok((ddy, iters)) = solver.correction(&pres, tol) else {
            *refine = false;
            break;
        };
        pcg_iters += iters;
        let dy_try = &dy + ddy;
        let (x_try, pinf_try) = recover_x(&dy_try)?;
        if !(pinf_try < 0.5 * pinf) {
            *refine = false;
            break;
        }
        (dy, x_new, pinf) = (dy_try, x_try, pinf_try);
    }
    let y_new = &it.y + &dy;

    let dx = x_new.sub(&it.x);
    let dy = &y_new - &it.y;
    let floor = if centering { centrality(&it.x, &it.s).unwrap_or(0.0).min(opts.gamma) } else { opts.gamma };
    let mut alpha = 1.0;
    let next = loop {
        if alpha < MIN_STEP {
            return Err(Error::NumericalBreakdown(format!("step length fell below {MIN_STEP:e}")));
        }
        let x_t = it.x.axpy(alpha, &dx);
        let y_t = &it.y + &dy * alpha;
        let s_t = cs.c().sub(&cs.expand(&y_t)?);
        let mu_t = x_t.dot(&s_t) / n as f64;
        let decreased = if sigma < 1.0 { mu_t < mu } else { mu_t <= mu * (1.0 + 1e-8) };
        if decreased && centrality(&x_t, &s_t).is_some_and(|c| c >= floor) {
            break Iterate { x: x_t, y: y_t, s: s_t };
        }
        alpha *= BACKTRACK;
    };

    let record = IterationRecord {
        iter: 0,
        mu: next.mu(),
        gap: cs.objective(&next.x) - cs.b().dot(&next.y),
        pinf: cs.primal_residual(&next.x),
        dinf: cs.dual_residual(&next.y, &next.s),
        ktilde,
        tau: sp.tau(),
        kappa_w0: sp.kappa_w0(),
        pcg_iters,
        pcg_status,
        alpha,
        centering,
        elapsed: start.elapsed(),
    };
    Ok((next, record))
}

enum Inner<'a> {
    Aug(AugPreconditioner),
    Smw(SmwPreconditioner<'a>),
    Dense,
}

/// Hessian-equation solver for one iteration. The preconditioner is built
/// once and reused by refinement passes; the dense factor is built on
/// first use.
struct HessianSolver<'a> {
    cs: &'a ConstraintSet,
    w: &'a DenseSymMatrix,
    opts: &'a SolverOptions,
    inner: Inner<'a>,
    dense: Option<CholeskyFactor>,
}

impl<'a> HessianSolver<'a> {
    fn new(cs: &'a ConstraintSet, w: &'a DenseSymMatrix, sp: &'a SpectralSplit, opts: &'a SolverOptions) -> Result<Self> {
        let inner = match opts.precond {
            PreconditionerKind::Augmented => Inner::Aug(build_aug(cs, sp)?),
            PreconditionerKind::Smw => Inner::Smw(build_smw(cs, sp)?),
            PreconditionerKind::Dense => Inner::Dense,
        };
        Ok(Self { cs, w, opts, inner, dense: None })
    }

    fn pcg(&self, r: &DVector<f64>, tol: f64) -> Result<(DVector<f64>, KrylovReport)> {
        let h = |v: &DVector<f64>| hess_matvec(self.cs, self.w, v);
        let (maxit, norm, window) = (self.opts.pcg_maxit, StopNorm::Preconditioned, Some(STAGNATION_WINDOW));
        match &self.inner {
            Inner::Aug(p) => pcg_solve_with(h, |v: &DVector<f64>| p.apply(v), r, tol, maxit, norm, window),
            Inner::Smw(p) => pcg_solve_with(h, |v: &DVector<f64>| p.apply(v), r, tol, maxit, norm, window),
            Inner::Dense => unreachable!("dense solves skip PCG"),
        }
    }

    /// One PCG pass for a refinement right-hand side; never falls back.
    fn correction(&mut self, r: &DVector<f64>, tol: f64) -> Result<(DVector<f64>, usize)> {
        if matches!(self.inner, Inner::Dense) {
            return self.solve(r, tol).map(|(y, iters, _)| (y, iters));
        }
        self.pcg(r, tol).map(|(y, rep)| (y, rep.iterations))
    }

    /// PCG, then PCG at a tenfold looser tolerance, then the dense
    /// factorization when `m` is within the oracle cap. If the dense
    /// Hessian is unavailable or numerically indefinite, the better of the
    /// two PCG iterates is returned and the line search judges it.
    fn solve(&mut self, r: &DVector<f64>, tol: f64) -> Result<(DVector<f64>, usize, InnerSolve)> {
        let (cs, opts) = (self.cs, self.opts);
        let mut fallback = None;
        if !matches!(self.inner, Inner::Dense) {
            let (y, rep) = self.pcg(r, tol)?;
            if rep.status == KrylovStatus::Converged {
                return Ok((y, rep.iterations, InnerSolve::Pcg(rep.status)));
            }
            let (y2, rep2) = self.pcg(r, 10.0 * tol)?;
            let iters = rep.iterations + rep2.iterations;
            if rep2.status == KrylovStatus::Converged {
                return Ok((y2, iters, InnerSolve::Retry(rep2.status)));
            }
            let best = if rep2.relative_residual < rep.relative_residual { (y2, rep2) } else { (y, rep) };
            let usable = best.1.relative_residual < 1.0;
            if cs.m() > opts.oracle_cap {
                if usable {
                    return Ok((best.0, iters, InnerSolve::Retry(best.1.status)));
                }
                return Err(Error::NumericalBreakdown(format!(
                    "PCG {} twice and m = {} exceeds the dense fallback cap {}",
                    best.1.status,
                    cs.m(),
                    opts.oracle_cap
                )));
            }
            fallback = usable.then_some((best.0, iters, InnerSolve::Retry(best.1.status)));
        }
        if self.dense.is_none() {
            let hd = dense_hessian(cs, self.w, opts.oracle_cap)?;
            match cholesky_spd(&hd) {
                Ok(factor) => self.dense = Some(factor),
                Err(e) => return fallback.ok_or_else(|| Error::NumericalBreakdown(format!("dense Hessian: {e}"))),
            }
        }
        let y = self.dense.as_ref().map(|f| f.solve(r)).expect("factor was just built");
        Ok((y, 0, InnerSolve::Dense))
    }
}

fn is_optimal(cs: &ConstraintSet, it: &Iterate, gap_tol: f64) -> bool {
    let scale = 1.0 + cs.objective(&it.x).abs() + cs.b().dot(&it.y).abs();
    it.n() as f64 * it.mu() <= gap_tol * scale
}

/// Runs the path-following loop from a strictly feasible start.
pub fn solve(cs: &ConstraintSet, start: Iterate, opts: &SolverOptions) -> Result<SolveOutcome> {
    solve_with_observer(cs, start, opts, |_| {})
}

/// [`solve`], reporting each iteration record as it is produced.
pub fn solve_with_observer(
    cs: &ConstraintSet,
    start: Iterate,
    opts: &SolverOptions,
    mut observer: impl FnMut(&IterationRecord),
) -> Result<SolveOutcome> {
    opts.validate()?;
    if start.n() != cs.n() || start.y.len() != cs.m() {
        return Err(invalid("starting point does not match the problem dimensions"));
    }
    if cholesky_spd(&start.x).is_err() || cholesky_spd(&start.s).is_err() {
        return Err(invalid("starting X and S must be positive definite"));
    }

    let mu0 = start.mu();
    let mut it = start;
    let mut log = Vec::new();
    let mut push = |mut rec: IterationRecord, log: &mut Vec<IterationRecord>| {
        rec.iter = log.len() + 1;
        observer(&rec);
        log.push(rec);
    };

    let mut refine = true;
    let mut centering_steps = 0;
    while !in_neighborhood(&it.x, &it.s, opts.gamma) {
        if centering_steps == opts.max_precenter {
            let status = SolveStatus::NumericalFailure("start could not be brought into the neighborhood".into());
            return Ok(SolveOutcome { iterate: it, status, log });
        }
        match step(cs, &it, opts, mu0, 1.0, true, &mut refine) {
            Ok((next, rec)) => {
                it = next;
                push(rec, &mut log);
            }
            Err(e) => return Ok(SolveOutcome { iterate: it, status: SolveStatus::NumericalFailure(e.to_string()), log }),
        }
        centering_steps += 1;
    }

    for _ in 0..opts.max_iter {
        if is_optimal(cs, &it, opts.gap_tol) {
            return Ok(SolveOutcome { iterate: it, status: SolveStatus::Optimal, log });
        }
        match step(cs, &it, opts, mu0, opts.sigma, false, &mut refine) {
            Ok((next, rec)) => {
                it = next;
                push(rec, &mut log);
            }
            Err(e) => return Ok(SolveOutcome { iterate: it, status: SolveStatus::NumericalFailure(e.to_string()), log }),
        }
    }
    let status = if is_optimal(cs, &it, opts.gap_tol) { SolveStatus::Optimal } else { SolveStatus::MaxIter };
    Ok(SolveOutcome { iterate: it, status, log })
}
