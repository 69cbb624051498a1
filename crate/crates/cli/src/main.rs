//! `lrsdp`: generate matrix-completion instances, solve SDPs and sweep
//! per-iteration timings.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod bench;
mod config;

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lrsdp::constraints::ConstraintSet;
use lrsdp::io as formats;
use lrsdp::ipm::{solve_with_observer, IterationRecord, Iterate, SolveStatus};
use lrsdp::matcomp::{self, MatrixCompletionInstance};

use config::{RunConfig, SolverSettings};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Solver(#[from] lrsdp::Error),
}

#[derive(Parser, Debug)]
#[command(name = "lrsdp", version, about = "Interior-point SDP solver with a low-rank spectral preconditioner")]
struct Cli {
    /// TOML config file; command-line flags take precedence over it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a random matrix-completion instance
    Generate {
        #[arg(long)]
        p: Option<usize>,
        #[arg(long)]
        q: Option<usize>,
        /// Rank of the hidden matrix
        #[arg(long)]
        k: Option<usize>,
        /// Number of observed entries
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Solve an instance file or an SDPA sparse file
    Solve {
        input: Option<PathBuf>,
        /// Strictly feasible starting point (required for SDPA input)
        #[arg(long)]
        start: Option<PathBuf>,
        /// CSV iteration log
        #[arg(long)]
        log: Option<PathBuf>,
        /// Write the final iterate in start-file format
        #[arg(long)]
        solution: Option<PathBuf>,
        /// Keep wall times out of the log (written to <log>.timing.csv)
        #[arg(long)]
        reproducible: bool,
        #[command(flatten)]
        solver: SolverSettings,
    },
    /// Sweep per-iteration time over sizes, observation counts and
    /// preconditioners
    Bench {
        /// Values of p = q
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        /// Observation rules: an integer, '<c>n' or '<f>pq'
        #[arg(long, value_delimiter = ',')]
        m: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        preconds: Option<Vec<String>>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Outer iterations per point
        #[arg(long)]
        iters: Option<usize>,
        /// Memory budget per point in MiB
        #[arg(long)]
        budget_mb: Option<u64>,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverSettings,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Generate { p, q, k, m, seed, out } => {
            let g = cfg.generate;
            let need = |v: Option<usize>, name: &str| v.ok_or_else(|| CliError::Usage(format!("--{name} is required")));
            let p = need(p.or(g.p), "p")?;
            let q = need(q.or(g.q), "q")?;
            let k = need(k.or(g.k), "k")?;
            let m = need(m.or(g.m), "m")?;
            let seed = seed.or(g.seed).unwrap_or(0);
            let out = out.or(g.out).ok_or_else(|| CliError::Usage("--out is required".into()))?;
            cmd_generate(p, q, k, m, seed, &out)?;
            Ok(0)
        }
        Command::Solve { input, start, log, solution, reproducible, solver } => {
            let s = cfg.solve;
            let input = input.or(s.input).ok_or_else(|| CliError::Usage("an input file is required".into()))?;
            let job = SolveJob {
                input,
                start: start.or(s.start),
                log: log.or(s.log),
                solution: solution.or(s.solution),
                reproducible: reproducible || s.reproducible.unwrap_or(false),
                solver: solver.or(cfg.solver),
            };
            cmd_solve(&job)
        }
        Command::Bench { sizes, m, preconds, k, seed, iters, budget_mb, out, solver } => {
            let b = cfg.bench;
            let sweep = bench::Sweep {
                sizes: sizes.or(b.sizes).unwrap_or_else(|| vec![50, 100]),
                m_rules: m.or(b.m).unwrap_or_else(|| vec!["25n".into()]),
                preconds: preconds.or(b.preconds).unwrap_or_else(|| vec!["augmented".into()]),
                k: k.or(b.k).unwrap_or(1),
                seed: seed.or(b.seed).unwrap_or(0),
                iters: iters.or(b.iters).unwrap_or(5),
                budget_mb: budget_mb.or(b.budget_mb).unwrap_or(4096),
                solver: solver.or(cfg.solver),
            };
            let out = out.or(b.out);
            bench::cmd_bench(&sweep, out.as_deref())?;
            Ok(0)
        }
    }
}

fn cmd_generate(p: usize, q: usize, k: usize, m: usize, seed: u64, out: &Path) -> Result<(), CliError> {
    let inst = matcomp::generate(p, q, k, m, seed).map_err(|e| CliError::Usage(e.to_string()))?;
    formats::save_instance(out, &inst)?;
    println!("wrote {} ({}x{}, rank {}, {} observations, seed {})", out.display(), p, q, k, m, seed);
    Ok(())
}

struct SolveJob {
    input: PathBuf,
    start: Option<PathBuf>,
    log: Option<PathBuf>,
    solution: Option<PathBuf>,
    reproducible: bool,
    solver: SolverSettings,
}

enum Problem {
    Completion(MatrixCompletionInstance),
    Sdpa,
}

fn is_instance_file(path: &Path) -> Result<bool, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut first = String::new();
    BufReader::new(file).read_line(&mut first).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(first.split_whitespace().next() == Some(formats::INSTANCE_MAGIC))
}

fn load_problem(job: &SolveJob) -> Result<(Problem, ConstraintSet, Iterate), CliError> {
    if is_instance_file(&job.input)? {
        let inst = formats::load_instance(&job.input)?;
        let cs = matcomp::to_sdp(&inst)?;
        let start = match &job.start {
            Some(path) => formats::load_start(path)?,
            None => matcomp::feasible_start(&inst, &cs)?,
        };
        return Ok((Problem::Completion(inst), cs, start));
    }
    let cs = formats::load_sdpa(&job.input)?;
    let path = job
        .start
        .as_ref()
        .ok_or_else(|| CliError::Usage("SDPA input needs a strictly feasible start file (--start)".into()))?;
    Ok((Problem::Sdpa, cs, formats::load_start(path)?))
}

fn exit_code(status: &SolveStatus) -> u8 {
    match status {
        SolveStatus::Optimal => 0,
        SolveStatus::MaxIter => 2,
        SolveStatus::NumericalFailure(_) => 3,
    }
}

fn cmd_solve(job: &SolveJob) -> Result<u8, CliError> {
    let opts = job.solver.resolve(0)?;
    let (problem, cs, start) = load_problem(job)?;

    let mut log = match &job.log {
        Some(path) => Some(LogSink::create(path, job.reproducible)?),
        None => None,
    };
    let mut sink_err = None;
    let out = solve_with_observer(&cs, start, &opts, |rec| {
        if let Some(sink) = log.as_mut() {
            if let Err(e) = sink.push(rec) {
                sink_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = sink_err {
        return Err(e);
    }
    if let Some(sink) = log {
        sink.finish()?;
    }

    let x = &out.iterate.x;
    let gap = cs.objective(x) - cs.b().dot(&out.iterate.y);
    println!("status      {}", out.status);
    println!("iterations  {}", out.log.len());
    println!("objective   {:.12e}", cs.objective(x));
    println!("gap         {gap:.3e}");
    println!("mu          {:.3e}", out.iterate.mu());
    println!("pinf        {:.3e}", cs.primal_residual(x));
    println!("dinf        {:.3e}", cs.dual_residual(&out.iterate.y, &out.iterate.s));
    if let Problem::Completion(inst) = &problem {
        let met = matcomp::metrics(inst, x)?;
        println!("relres      {:.3e}", met.relative_residual);
        match met.objective_error {
            Some(e) => println!("objerr      {e:.3e}"),
            None => println!("objerr      unavailable (no generator factors)"),
        }
    }
    if let Some(path) = &job.solution {
        let mut buf = Vec::new();
        formats::write_start(&mut buf, &out.iterate).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        fs::write(path, buf).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(exit_code(&out.status))
}

/// CSV iteration log, plus a timing sidecar in reproducible mode.
struct LogSink {
    csv: csv::Writer<fs::File>,
    timing: Option<csv::Writer<fs::File>>,
    path: PathBuf,
}

impl LogSink {
    fn create(path: &Path, reproducible: bool) -> Result<Self, CliError> {
        let open = |p: &Path| csv::Writer::from_path(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())));
        let mut csv = open(path)?;
        csv.write_record(formats::LOG_COLUMNS).map_err(|e| CliError::Io(e.to_string()))?;
        let timing = if reproducible {
            let mut side = open(&timing_path(path))?;
            side.write_record(["iter", "time_ms"]).map_err(|e| CliError::Io(e.to_string()))?;
            Some(side)
        } else {
            None
        };
        Ok(Self { csv, timing, path: path.to_path_buf() })
    }

    fn push(&mut self, rec: &IterationRecord) -> Result<(), CliError> {
        let err = |e: csv::Error| CliError::Io(e.to_string());
        self.csv.write_record(formats::log_row(rec, self.timing.is_none())).map_err(err)?;
        if let Some(side) = self.timing.as_mut() {
            let ms = format!("{:.3}", rec.elapsed.as_secs_f64() * 1e3);
            side.write_record([rec.iter.to_string(), ms]).map_err(err)?;
        }
        Ok(())
    }

    fn finish(mut self) -> Result<(), CliError> {
        let err = |e: std::io::Error| CliError::Io(format!("{}: {e}", self.path.display()));
        self.csv.flush().map_err(err)?;
        if let Some(side) = self.timing.as_mut() {
            side.flush().map_err(err)?;
        }
        Ok(())
    }
}

fn timing_path(log: &Path) -> PathBuf {
    let mut name = log.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".timing.csv");
    log.with_file_name(name)
}
