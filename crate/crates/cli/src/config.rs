//! Run configuration: TOML file merged under command-line flags.

use std::path::{Path, PathBuf};

use lrsdp::ipm::SolverOptions;
use lrsdp::precond::PreconditionerKind;
use lrsdp::scaling::ScalingKind;
use serde::Deserialize;

use crate::CliError;

/// Solver settings as they appear in a config file or on the command line;
/// unset fields fall through to the next layer.
#[derive(Debug, Clone, Default, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    /// Neighborhood width in (0, 1)
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Centering parameter in (0, 1)
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Relative duality-gap tolerance
    #[arg(long)]
    pub gap_tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Scaling: primal, dual or nt
    #[arg(long)]
    pub scaling: Option<String>,
    /// Preconditioner: augmented, smw or dense
    #[arg(long)]
    pub precond: Option<String>,
    /// Rank cap for the spectral split (default n/4)
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Eigenvalue gap ratio for rank estimation
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub pcg_tol_factor: Option<f64>,
    #[arg(long)]
    pub pcg_tol_min: Option<f64>,
    #[arg(long)]
    pub pcg_tol_max: Option<f64>,
    #[arg(long)]
    pub pcg_maxit: Option<usize>,
    #[arg(long)]
    pub max_refine: Option<usize>,
    #[arg(long)]
    pub feas_tol: Option<f64>,
    /// Largest m for which the dense Hessian may be formed
    #[arg(long)]
    pub oracle_cap: Option<usize>,
    #[arg(long)]
    pub max_precenter: Option<usize>,
}

impl SolverSettings {
    /// `self` where set, otherwise `fallback`.
    pub fn or(self, fallback: SolverSettings) -> SolverSettings {
        SolverSettings {
            gamma: self.gamma.or(fallback.gamma),
            sigma: self.sigma.or(fallback.sigma),
            gap_tol: self.gap_tol.or(fallback.gap_tol),
            max_iter: self.max_iter.or(fallback.max_iter),
            scaling: self.scaling.or(fallback.scaling),
            precond: self.precond.or(fallback.precond),
            kmax: self.kmax.or(fallback.kmax),
            eta: self.eta.or(fallback.eta),
            pcg_tol_factor: self.pcg_tol_factor.or(fallback.pcg_tol_factor),
            pcg_tol_min: self.pcg_tol_min.or(fallback.pcg_tol_min),
            pcg_tol_max: self.pcg_tol_max.or(fallback.pcg_tol_max),
            pcg_maxit: self.pcg_maxit.or(fallback.pcg_maxit),
            max_refine: self.max_refine.or(fallback.max_refine),
            feas_tol: self.feas_tol.or(fallback.feas_tol),
            oracle_cap: self.oracle_cap.or(fallback.oracle_cap),
            max_precenter: self.max_precenter.or(fallback.max_precenter),
        }
    }

    pub fn resolve(&self, seed: u64) -> Result<SolverOptions, CliError> {
        let d = SolverOptions::default();
        let scaling = match &self.scaling {
            Some(s) => s.parse::<ScalingKind>().map_err(|e| CliError::Usage(e.to_string()))?,
            None => d.scaling,
        };
        let precond = match &self.precond {
            Some(s) => s.parse::<PreconditionerKind>().map_err(|e| CliError::Usage(e.to_string()))?,
            None => d.precond,
        };
        let opts = SolverOptions {
            gamma: self.gamma.unwrap_or(d.gamma),
            sigma: self.sigma.unwrap_or(d.sigma),
            gap_tol: self.gap_tol.unwrap_or(d.gap_tol),
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            scaling,
            precond,
            kmax: self.kmax.or(d.kmax),
            eta: self.eta.unwrap_or(d.eta),
            pcg_tol_factor: self.pcg_tol_factor.unwrap_or(d.pcg_tol_factor),
            pcg_tol_min: self.pcg_tol_min.unwrap_or(d.pcg_tol_min),
            pcg_tol_max: self.pcg_tol_max.unwrap_or(d.pcg_tol_max),
            pcg_maxit: self.pcg_maxit.unwrap_or(d.pcg_maxit),
            max_refine: self.max_refine.unwrap_or(d.max_refine),
            feas_tol: self.feas_tol.unwrap_or(d.feas_tol),
            oracle_cap: self.oracle_cap.unwrap_or(d.oracle_cap),
            max_precenter: self.max_precenter.unwrap_or(d.max_precenter),
            seed,
        };
        opts.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(opts)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSettings {
    pub p: Option<usize>,
    pub q: Option<usize>,
    pub k: Option<usize>,
    pub m: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSettings {
    pub input: Option<PathBuf>,
    pub start: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub solution: Option<PathBuf>,
    pub reproducible: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSettings {
    pub sizes: Option<Vec<usize>>,
    pub m: Option<Vec<String>>,
    pub preconds: Option<Vec<String>>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub iters: Option<usize>,
    pub budget_mb: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Layout of a config file. Every table is optional and unknown keys are
/// rejected.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub generate: GenerateSettings,
    #[serde(default)]
    pub solve: SolveSettings,
    #[serde(default)]
    pub bench: BenchSettings,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

/// Observation count for a bench point: an integer, `<c>n` (c·(p+q)) or
/// `<f>pq` (f·p·q, rounded).
pub fn parse_m_rule(rule: &str, p: usize, q: usize) -> Result<usize, CliError> {
    let bad = || CliError::Usage(format!("invalid m rule '{rule}', expected an integer, '<c>n' or '<f>pq'"));
    let rule = rule.trim();
    let m = if let Some(f) = rule.strip_suffix("pq") {
        let f: f64 = f.parse().map_err(|_| bad())?;
        (f * (p * q) as f64).round()
    } else if let Some(c) = rule.strip_suffix('n') {
        let c: f64 = c.parse().map_err(|_| bad())?;
        (c * (p + q) as f64).round()
    } else {
        rule.parse::<usize>().map_err(|_| bad())? as f64
    };
    if !(m >= 1.0) {
        return Err(bad());
    }
    Ok(m as usize)
}
