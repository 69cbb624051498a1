//! Per-iteration timing sweeps over matrix-completion instances.

use std::path::Path;
use std::time::Duration;

use lrsdp::ipm::{solve, SolveStatus, SolverOptions};
use lrsdp::matcomp;
use lrsdp::precond::PreconditionerKind;

use crate::config::{parse_m_rule, SolverSettings};
use crate::CliError;

pub const BENCH_COLUMNS: [&str; 14] = [
    "p",
    "q",
    "n",
    "m",
    "precond",
    "outcome",
    "outer_iters",
    "median_iter_ms",
    "median_pcg_iters",
    "max_pcg_iters",
    "flop_proxy",
    "final_mu",
    "est_mib",
    "note",
];

pub struct Sweep {
    pub sizes: Vec<usize>,
    pub m_rules: Vec<String>,
    pub preconds: Vec<String>,
    pub k: usize,
    pub seed: u64,
    pub iters: usize,
    pub budget_mb: u64,
    pub solver: SolverSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub p: usize,
    pub n: usize,
    pub m: usize,
    pub precond: PreconditionerKind,
    pub outcome: String,
    pub outer_iters: usize,
    pub median_iter: Option<Duration>,
    pub median_pcg: Option<f64>,
    pub max_pcg: Option<usize>,
    pub final_mu: Option<f64>,
    pub est_mib: u64,
    pub note: String,
}

impl BenchRow {
    fn record(&self) -> Vec<String> {
        let opt = |v: Option<String>| v.unwrap_or_default();
        let flop = self.median_pcg.filter(|_| self.precond != PreconditionerKind::Dense).map(|it| format!("{:e}", it.max(1.0) * (self.n as f64).powi(3)));
        vec![
            self.p.to_string(),
            self.p.to_string(),
            self.n.to_string(),
            self.m.to_string(),
            self.precond.to_string(),
            self.outcome.clone(),
            self.outer_iters.to_string(),
            opt(self.median_iter.map(|d| format!("{:.3}", d.as_secs_f64() * 1e3))),
            opt(self.median_pcg.map(|v| v.to_string())),
            opt(self.max_pcg.map(|v| v.to_string())),
            opt(flop),
            opt(self.final_mu.map(|v| format!("{v:e}"))),
            self.est_mib.to_string(),
            self.note.clone(),
        ]
    }
}

/// A-priori working-set estimate: a few dozen dense n×n matrices, the
/// constraint data, and the m×m Hessian for the dense baseline.
pub fn memory_estimate_mib(n: usize, m: usize, precond: PreconditionerKind) -> u64 {
    let mut words = 40 * n * n + 20 * m;
    if precond == PreconditionerKind::Dense {
        words += 2 * m * m;
    }
    (words as u64 * 8).div_ceil(1 << 20)
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) })
}

fn skipped(p: usize, m: usize, precond: PreconditionerKind, est_mib: u64, note: String) -> BenchRow {
    BenchRow {
        p,
        n: 2 * p,
        m,
        precond,
        outcome: "skipped".into(),
        outer_iters: 0,
        median_iter: None,
        median_pcg: None,
        max_pcg: None,
        final_mu: None,
        est_mib,
        note,
    }
}

fn run_point(p: usize, m: usize, precond: PreconditionerKind, sweep: &Sweep, base: &SolverOptions) -> Result<BenchRow, CliError> {
    let n = 2 * p;
    let est = memory_estimate_mib(n, m, precond);
    if est > sweep.budget_mb {
        return Ok(skipped(p, m, precond, est, format!("estimate {est} MiB exceeds budget {} MiB", sweep.budget_mb)));
    }
    if precond == PreconditionerKind::Dense && m > base.oracle_cap {
        return Ok(skipped(p, m, precond, est, format!("m exceeds oracle cap {}", base.oracle_cap)));
    }
    if m > p * p {
        return Ok(skipped(p, m, precond, est, format!("m exceeds p·q = {}", p * p)));
    }
    let inst = matcomp::generate(p, p, sweep.k.min(p), m, sweep.seed)?;
    let cs = matcomp::to_sdp(&inst)?;
    let start = matcomp::feasible_start(&inst, &cs)?;
    let opts = SolverOptions { precond, max_iter: sweep.iters, ..base.clone() };
    let out = solve(&cs, start, &opts)?;

    let times: Vec<f64> = out.log.iter().map(|r| r.elapsed.as_secs_f64()).collect();
    let pcg: Vec<f64> = out.log.iter().map(|r| r.pcg_iters as f64).collect();
    let outcome = match &out.status {
        SolveStatus::Optimal => "optimal",
        SolveStatus::MaxIter => "maxiter",
        SolveStatus::NumericalFailure(_) => "failure",
    };
    let note = match &out.status {
        SolveStatus::NumericalFailure(msg) => msg.clone(),
        _ => String::new(),
    };
    Ok(BenchRow {
        p,
        n,
        m,
        precond,
        outcome: outcome.into(),
        outer_iters: out.log.len(),
        median_iter: median(times).map(Duration::from_secs_f64),
        median_pcg: median(pcg),
        max_pcg: out.log.iter().map(|r| r.pcg_iters).max(),
        final_mu: Some(out.iterate.mu()),
        est_mib: est,
        note,
    })
}

/// Runs every (size, m rule, preconditioner) point, adding the dense
/// baseline wherever `m` is within the oracle cap.
pub fn run_sweep(sweep: &Sweep, mut on_row: impl FnMut(&BenchRow)) -> Result<Vec<BenchRow>, CliError> {
    let base = sweep.solver.resolve(sweep.seed)?;
    let mut kinds = Vec::new();
    for name in &sweep.preconds {
        let kind: PreconditionerKind = name.parse().map_err(|e: lrsdp::Error| CliError::Usage(e.to_string()))?;
        if !kinds.contains(&kind) {
            kinds.push(kind);
        }
    }
    if sweep.iters == 0 {
        return Err(CliError::Usage("bench needs at least one outer iteration per point".into()));
    }
    let mut rows = Vec::new();
    for &p in &sweep.sizes {
        if p == 0 {
            return Err(CliError::Usage("sizes must be positive".into()));
        }
        for rule in &sweep.m_rules {
            let m = parse_m_rule(rule, p, p)?;
            let mut point_kinds = kinds.clone();
            if m <= base.oracle_cap && !point_kinds.contains(&PreconditionerKind::Dense) {
                point_kinds.push(PreconditionerKind::Dense);
            }
            for kind in point_kinds {
                let row = run_point(p, m, kind, sweep, &base)?;
                on_row(&row);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

pub fn cmd_bench(sweep: &Sweep, out: Option<&Path>) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Io(e.to_string());
    let mut writer: csv::Writer<Box<dyn std::io::Write>> = match out {
        Some(path) => {
            let file = std::fs::File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            csv::Writer::from_writer(Box::new(file))
        }
        None => csv::Writer::from_writer(Box::new(std::io::stdout())),
    };
    writer.write_record(BENCH_COLUMNS).map_err(io)?;
    let mut failure = None;
    run_sweep(sweep, |row| {
        if failure.is_none() {
            if let Err(e) = writer.write_record(row.record()).and_then(|_| writer.flush().map_err(Into::into)) {
                failure = Some(io(e));
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    writer.flush().map_err(|e| CliError::Io(e.to_string()))
}
