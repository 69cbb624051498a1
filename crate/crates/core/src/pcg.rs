//! Restart-free preconditioned conjugate gradients.

use nalgebra::DVector;

use crate::error::Result;

/// Relative decrease the preconditioned residual must achieve within
/// [`STAGNATION_WINDOW`] iterations.
pub const STAGNATION_DECREASE: f64 = 1e-3;
pub const STAGNATION_WINDOW: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KrylovStatus {
    Converged,
    MaxIter,
    Stagnated,
}

impl std::fmt::Display for KrylovStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Converged => "converged",
            Self::MaxIter => "maxiter",
            Self::Stagnated => "stagnated",
        })
    }
}

/// Norm in which the stopping test `‖r − H y‖ ≤ tol·‖r‖` is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StopNorm {
    #[default]
    Euclidean,
    /// `‖v‖_P = √(vᵀ P v)`. With `P ≈ H⁻¹` this tracks the error in the
    /// `H`-norm, which weighs badly scaled components of `y` evenly.
    Preconditioned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrylovReport {
    pub iterations: usize,
    /// `‖r − H y‖ / ‖r‖` for the returned `y`, in the stopping norm.
    pub relative_residual: f64,
    pub status: KrylovStatus,
    /// Preconditioned residual norms `√(rᵢᵀ P rᵢ)`, relative to the first.
    pub residual_history: Vec<f64>,
}

/// Solves `H y = r` from `y = 0`. Operator errors propagate; loss of
/// positivity or non-finite values end the solve as `Stagnated`.
pub fn pcg_solve<H, P>(apply_h: H, apply_p: P, r: &DVector<f64>, tol: f64, maxit: usize) -> Result<(DVector<f64>, KrylovReport)>
where
    H: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    P: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    pcg_solve_with(apply_h, apply_p, r, tol, maxit, StopNorm::Euclidean, Some(STAGNATION_WINDOW))
}

/// [`pcg_solve`] with a chosen stopping norm and stagnation window;
/// `None` disables the stagnation check. Unpreconditioned residuals on badly conditioned systems can
/// plateau for longer than the default window before dropping.
pub fn pcg_solve_with<H, P>(
    mut apply_h: H,
    mut apply_p: P,
    r: &DVector<f64>,
    tol: f64,
    maxit: usize,
    norm: StopNorm,
    window: Option<usize>,
) -> Result<(DVector<f64>, KrylovReport)>
where
    H: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    P: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let window = window.unwrap_or(usize::MAX);
    let m = r.len();
    let mut y = DVector::zeros(m);
    if r.norm() == 0.0 {
        let report = KrylovReport {
            iterations: 0,
            relative_residual: 0.0,
            status: KrylovStatus::Converged,
            residual_history: vec![0.0],
        };
        return Ok((y, report));
    }

    let mut res = r.clone();
    let mut z = apply_p(&res)?;
    let mut rz = res.dot(&z);
    let mut p = z.clone();
    let pnorm0 = rz.max(0.0).sqrt();
    let rnorm = match norm {
        StopNorm::Euclidean => r.norm(),
        StopNorm::Preconditioned => pnorm0,
    };
    let mut history = vec![1.0];
    let mut best = 1.0;
    let mut best_at = 0;
    let mut status = KrylovStatus::MaxIter;
    let mut iterations = 0;

    if !(rz > 0.0) || !rz.is_finite() {
        status = KrylovStatus::Stagnated;
    } else {
        while iterations < maxit {
            let hp = apply_h(&p)?;
            let php = p.dot(&hp);
            if !(php > 0.0) || !php.is_finite() {
                status = KrylovStatus::Stagnated;
                break;
            }
            let alpha = rz / php;
            y.axpy(alpha, &p, 1.0);
            res.axpy(-alpha, &hp, 1.0);
            iterations += 1;

            z = apply_p(&res)?;
            let rz_next = res.dot(&z);
            if !(rz_next > 0.0) || !rz_next.is_finite() {
                status = KrylovStatus::Stagnated;
                break;
            }
            let current = match norm {
                StopNorm::Euclidean => res.norm(),
                StopNorm::Preconditioned => rz_next.sqrt(),
            };
            if current <= tol * rnorm {
                // Confirm against the true residual before stopping.
                let true_res = r - apply_h(&y)?;
                let true_z = apply_p(&true_res)?;
                let true_pnorm = true_res.dot(&true_z).max(0.0).sqrt();
                let true_norm = match norm {
                    StopNorm::Euclidean => true_res.norm(),
                    StopNorm::Preconditioned => true_pnorm,
                };
                if true_norm <= tol * rnorm {
                    status = KrylovStatus::Converged;
                    history.push(true_pnorm / pnorm0);
                    break;
                }
                res = true_res;
                z = true_z;
            }
            let rz_next = res.dot(&z);
            if !(rz_next > 0.0) || !rz_next.is_finite() {
                status = KrylovStatus::Stagnated;
                break;
            }
            let level = rz_next.sqrt() / pnorm0;
            history.push(level);
            if level <= best * (1.0 - STAGNATION_DECREASE) {
                best = level;
                best_at = iterations;
            } else if iterations - best_at >= window {
                status = KrylovStatus::Stagnated;
                break;
            }
            let beta = rz_next / rz;
            rz = rz_next;
            p = &z + &p * beta;
        }
    }

    if !y.iter().all(|v| v.is_finite()) {
        y.fill(0.0);
        status = KrylovStatus::Stagnated;
    }
    let final_res = r - apply_h(&y)?;
    let relative_residual = match norm {
        StopNorm::Euclidean => final_res.norm(),
        StopNorm::Preconditioned => apply_p(&final_res)?.dot(&final_res).max(0.0).sqrt(),
    } / rnorm;
    if status == KrylovStatus::Converged && relative_residual > tol {
        status = KrylovStatus::MaxIter;
    }
    let report = KrylovReport { iterations, relative_residual, status, residual_history: history };
    Ok((y, report))
}
