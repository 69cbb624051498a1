//! Text formats: matrix-completion instances, SDPA sparse problems,
//! starting points and iteration logs.
//!
//! Floats are written with Rust's shortest round-trip representation, so
//! every reader recovers the exact binary value that was written.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::ipm::{IterationRecord, Iterate};
use crate::linalg::{DenseSymMatrix, SparseSymBuilder, SparseSymMatrix};
use crate::matcomp::MatrixCompletionInstance;

pub const INSTANCE_MAGIC: &str = "MCI";
pub const INSTANCE_VERSION: u32 = 1;
pub const START_MAGIC: &str = "START";
pub const START_VERSION: u32 = 1;

pub const LOG_COLUMNS: [&str; 12] =
    ["iter", "mu", "gap", "pinf", "dinf", "ktilde", "tau", "kappaW0", "pcg_iters", "pcg_status", "alpha", "time_ms"];

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), msg: e.to_string() }
}

/// Non-blank lines with their 1-based line numbers.
struct Lines<R> {
    inner: std::io::Lines<R>,
    line: usize,
    skip_comments: bool,
}

impl<R: BufRead> Lines<R> {
    fn new(reader: R, skip_comments: bool) -> Self {
        Self { inner: reader.lines(), line: 0, skip_comments }
    }

    fn next_line(&mut self) -> Result<Option<(usize, String)>> {
        for text in self.inner.by_ref() {
            self.line += 1;
            let text = text.map_err(|e| parse_err(self.line, e.to_string()))?;
            let trimmed = text.trim();
            if trimmed.is_empty() {
                continue;
            }
            if self.skip_comments && (trimmed.starts_with('"') || trimmed.starts_with('*') || trimmed.starts_with('#')) {
                continue;
            }
            return Ok(Some((self.line, trimmed.to_string())));
        }
        Ok(None)
    }

    fn expect_line(&mut self, what: &str) -> Result<(usize, String)> {
        self.next_line()?.ok_or_else(|| parse_err(self.line + 1, format!("unexpected end of file, expected {what}")))
    }
}

fn field<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    tok.parse().map_err(|_| parse_err(line, format!("invalid {what} '{tok}'")))
}

fn finite(v: f64, line: usize, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(parse_err(line, format!("{what} is not finite")))
    }
}

fn no_trailing<'a>(mut toks: impl Iterator<Item = &'a str>, line: usize) -> Result<()> {
    match toks.next() {
        Some(t) => Err(parse_err(line, format!("unexpected trailing field '{t}'"))),
        None => Ok(()),
    }
}

/// One-based index in `1..=bound`, returned 0-based.
fn index(tok: Option<&str>, bound: usize, line: usize, what: &str) -> Result<usize> {
    let i: usize = field(tok, line, what)?;
    if i == 0 || i > bound {
        return Err(parse_err(line, format!("{what} {i} outside 1..={bound}")));
    }
    Ok(i - 1)
}

// ---------------------------------------------------------------------------
// Matrix-completion instances

/// `MCI 1`, then `p q k m seed`, then `m` lines `i j value` (1-based).
pub fn write_instance(mut w: impl Write, inst: &MatrixCompletionInstance) -> std::io::Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "{INSTANCE_MAGIC} {INSTANCE_VERSION}");
    let _ = writeln!(out, "{} {} {} {} {}", inst.p, inst.q, inst.k, inst.m(), inst.seed);
    for (&(i, j), v) in inst.omega.iter().zip(&inst.values) {
        let _ = writeln!(out, "{} {} {v}", i + 1, j + 1);
    }
    w.write_all(out.as_bytes())
}

/// Reads an instance; generator factors are re-derived from the seed when
/// they reproduce the stored values.
pub fn read_instance(r: impl BufRead) -> Result<MatrixCompletionInstance> {
    let mut lines = Lines::new(r, false);
    let (ln, header) = lines.expect_line("header")?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some(INSTANCE_MAGIC) {
        return Err(parse_err(ln, format!("expected '{INSTANCE_MAGIC} {INSTANCE_VERSION}' header")));
    }
    let version: u32 = field(toks.next(), ln, "format version")?;
    if version != INSTANCE_VERSION {
        return Err(parse_err(ln, format!("unsupported instance version {version}")));
    }
    no_trailing(toks, ln)?;

    let (ln, dims) = lines.expect_line("'p q k m seed'")?;
    let mut toks = dims.split_whitespace();
    let p: usize = field(toks.next(), ln, "p")?;
    let q: usize = field(toks.next(), ln, "q")?;
    let k: usize = field(toks.next(), ln, "k")?;
    let m: usize = field(toks.next(), ln, "m")?;
    let seed: u64 = field(toks.next(), ln, "seed")?;
    no_trailing(toks, ln)?;
    if p == 0 || q == 0 {
        return Err(parse_err(ln, "p and q must be positive"));
    }
    if m > p * q {
        return Err(parse_err(ln, format!("m = {m} exceeds p·q = {}", p * q)));
    }

    let mut omega = Vec::with_capacity(m);
    let mut values = Vec::with_capacity(m);
    let mut seen = vec![false; p * q];
    for _ in 0..m {
        let (ln, text) = lines.expect_line("an observation 'i j value'")?;
        let mut toks = text.split_whitespace();
        let i = index(toks.next(), p, ln, "row")?;
        let j = index(toks.next(), q, ln, "column")?;
        let v = finite(field(toks.next(), ln, "value")?, ln, "value")?;
        no_trailing(toks, ln)?;
        if std::mem::replace(&mut seen[i * q + j], true) {
            return Err(parse_err(ln, format!("observation ({}, {}) repeated", i + 1, j + 1)));
        }
        omega.push((i, j));
        values.push(v);
    }
    if let Some((ln, _)) = lines.next_line()? {
        return Err(parse_err(ln, format!("more than m = {m} observations")));
    }
    let inst = MatrixCompletionInstance { p, q, k, seed, omega, values, factors: None };
    Ok(inst.with_regenerated_factors())
}

pub fn save_instance(path: &Path, inst: &MatrixCompletionInstance) -> Result<()> {
    let mut buf = Vec::new();
    write_instance(&mut buf, inst).map_err(|e| io_err(path, e))?;
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

pub fn load_instance(path: &Path) -> Result<MatrixCompletionInstance> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    read_instance(BufReader::new(file))
}

// ---------------------------------------------------------------------------
// SDPA sparse format

/// Parses an SDPA sparse (`.dat-s`) problem with a single PSD block.
///
/// SDPA states the primal as `min cᵀx s.t. Σ xᵢFᵢ − F₀ ⪰ 0` and the dual as
/// `max F₀•Y s.t. Fᵢ•Y = cᵢ, Y ⪰ 0`. The dual is read as this crate's
/// problem: `Aᵢ = Fᵢ`, `b = c` and `C = −F₀`, so `C•X` is the negated SDPA
/// dual objective. Entries are upper-triangle and mirrored; entries given
/// below the diagonal are moved to the upper triangle.
pub fn parse_sdpa(r: impl BufRead) -> Result<ConstraintSet> {
    let mut lines = Lines::new(r, true);
    let (ln, text) = lines.expect_line("the number of constraints")?;
    let m: usize = field(clean(&text).split_whitespace().next(), ln, "number of constraints")?;
    if m == 0 {
        return Err(parse_err(ln, "at least one constraint is required"));
    }
    let (ln, text) = lines.expect_line("the number of blocks")?;
    let nblocks: usize = field(clean(&text).split_whitespace().next(), ln, "number of blocks")?;
    let (ln, text) = lines.expect_line("the block sizes")?;
    let sizes: Vec<i64> = clean(&text)
        .split_whitespace()
        .take(nblocks)
        .map(|t| t.parse().map_err(|_| parse_err(ln, format!("invalid block size '{t}'"))))
        .collect::<Result<_>>()?;
    if sizes.len() != nblocks {
        return Err(parse_err(ln, format!("expected {nblocks} block sizes")));
    }
    if nblocks != 1 {
        return Err(Error::Unsupported(format!("{nblocks} blocks; only a single PSD block is supported")));
    }
    if sizes[0] < 0 {
        return Err(Error::Unsupported(format!("diagonal (LP) block of size {}", -sizes[0])));
    }
    let n = sizes[0] as usize;
    if n == 0 {
        return Err(parse_err(ln, "block size must be positive"));
    }

    let mut b = Vec::with_capacity(m);
    while b.len() < m {
        let (ln, text) = lines.expect_line("the objective vector")?;
        for t in clean(&text).split_whitespace() {
            if b.len() == m {
                return Err(parse_err(ln, format!("objective vector has more than {m} entries")));
            }
            let v: f64 = t.parse().map_err(|_| parse_err(ln, format!("invalid objective entry '{t}'")))?;
            b.push(finite(v, ln, "objective entry")?);
        }
    }

    let mut builders: Vec<SparseSymBuilder> = (0..=m).map(|_| SparseSymBuilder::new(n)).collect();
    while let Some((ln, text)) = lines.next_line()? {
        let mut toks = text.split_whitespace();
        let mat: usize = field(toks.next(), ln, "matrix number")?;
        if mat > m {
            return Err(parse_err(ln, format!("matrix number {mat} outside 0..={m}")));
        }
        let blk: usize = field(toks.next(), ln, "block number")?;
        if blk != 1 {
            return Err(parse_err(ln, format!("block number {blk} outside 1..=1")));
        }
        let i = index(toks.next(), n, ln, "row")?;
        let j = index(toks.next(), n, ln, "column")?;
        let v = finite(field(toks.next(), ln, "value")?, ln, "value")?;
        no_trailing(toks, ln)?;
        let (r, c) = if i <= j { (i, j) } else { (j, i) };
        builders[mat].add(r, c, v);
    }

    let mut mats = builders.into_iter().map(SparseSymBuilder::build);
    let f0 = mats.next().expect("cost matrix builder");
    let a: Vec<SparseSymMatrix> = mats.collect();
    let c = DenseSymMatrix::from_upper(f0.to_dense())?.scale(-1.0);
    ConstraintSet::new(n, a, b, c)
}

/// SDPA punctuation around vectors: `{`, `}`, `(`, `)` and `,` act as blanks.
fn clean(text: &str) -> String {
    text.chars().map(|ch| if matches!(ch, '{' | '}' | '(' | ')' | ',') { ' ' } else { ch }).collect()
}

/// Writes `cs` in SDPA sparse format with the sign convention of
/// [`parse_sdpa`].
pub fn write_sdpa(mut w: impl Write, cs: &ConstraintSet) -> std::io::Result<()> {
    let n = cs.n();
    let mut out = String::new();
    let _ = writeln!(out, "{}", cs.m());
    let _ = writeln!(out, "1");
    let _ = writeln!(out, "{n}");
    let b: Vec<String> = cs.b().iter().map(|v| v.to_string()).collect();
    let _ = writeln!(out, "{}", b.join(" "));
    let c = cs.c();
    for j in 0..n {
        for i in 0..=j {
            let v = c.get(i, j);
            if v != 0.0 {
                let _ = writeln!(out, "0 1 {} {} {}", i + 1, j + 1, -v);
            }
        }
    }
    for (k, a) in cs.a().iter().enumerate() {
        for &(i, j, v) in a.entries() {
            let _ = writeln!(out, "{} 1 {} {} {v}", k + 1, i + 1, j + 1);
        }
    }
    w.write_all(out.as_bytes())
}

pub fn load_sdpa(path: &Path) -> Result<ConstraintSet> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    parse_sdpa(BufReader::new(file))
}

// ---------------------------------------------------------------------------
// Starting points

/// `START 1`, then `n m`, then lines `X i j v`, `S i j v` (upper triangle,
/// 1-based) and `y i v`. Entries not listed are zero.
pub fn read_start(r: impl BufRead) -> Result<Iterate> {
    let mut lines = Lines::new(r, true);
    let (ln, header) = lines.expect_line("header")?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some(START_MAGIC) {
        return Err(parse_err(ln, format!("expected '{START_MAGIC} {START_VERSION}' header")));
    }
    let version: u32 = field(toks.next(), ln, "format version")?;
    if version != START_VERSION {
        return Err(parse_err(ln, format!("unsupported start version {version}")));
    }
    let (ln, dims) = lines.expect_line("'n m'")?;
    let mut toks = dims.split_whitespace();
    let n: usize = field(toks.next(), ln, "n")?;
    let m: usize = field(toks.next(), ln, "m")?;
    no_trailing(toks, ln)?;

    let mut x = DMatrix::zeros(n, n);
    let mut s = DMatrix::zeros(n, n);
    let mut y = DVector::zeros(m);
    while let Some((ln, text)) = lines.next_line()? {
        let mut toks = text.split_whitespace();
        match toks.next() {
            Some(kind @ ("X" | "S")) => {
                let i = index(toks.next(), n, ln, "row")?;
                let j = index(toks.next(), n, ln, "column")?;
                let v = finite(field(toks.next(), ln, "value")?, ln, "value")?;
                let target = if kind == "X" { &mut x } else { &mut s };
                target[(i, j)] = v;
                target[(j, i)] = v;
            }
            Some("y") => {
                let i = index(toks.next(), m, ln, "index")?;
                y[i] = finite(field(toks.next(), ln, "value")?, ln, "value")?;
            }
            Some(other) => return Err(parse_err(ln, format!("unknown entry kind '{other}', expected X, S or y"))),
            None => unreachable!("blank lines are skipped"),
        }
        no_trailing(toks, ln)?;
    }
    Iterate::new(DenseSymMatrix::from_upper(x)?, y, DenseSymMatrix::from_upper(s)?)
}

pub fn write_start(mut w: impl Write, it: &Iterate) -> std::io::Result<()> {
    let n = it.n();
    let mut out = String::new();
    let _ = writeln!(out, "{START_MAGIC} {START_VERSION}");
    let _ = writeln!(out, "{n} {}", it.y.len());
    for (tag, mat) in [("X", &it.x), ("S", &it.s)] {
        for j in 0..n {
            for i in 0..=j {
                let v = mat.get(i, j);
                if v != 0.0 {
                    let _ = writeln!(out, "{tag} {} {} {v}", i + 1, j + 1);
                }
            }
        }
    }
    for (i, v) in it.y.iter().enumerate() {
        if *v != 0.0 {
            let _ = writeln!(out, "y {} {v}", i + 1);
        }
    }
    w.write_all(out.as_bytes())
}

pub fn load_start(path: &Path) -> Result<Iterate> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    read_start(BufReader::new(file))
}

// ---------------------------------------------------------------------------
// Iteration logs

/// One CSV row in [`LOG_COLUMNS`] order. With `timing` off the `time_ms`
/// field is left empty so that rows depend only on the arithmetic.
pub fn log_row(rec: &IterationRecord, timing: bool) -> Vec<String> {
    let time = if timing { format!("{:.3}", rec.elapsed.as_secs_f64() * 1e3) } else { String::new() };
    vec![
        rec.iter.to_string(),
        format!("{:e}", rec.mu),
        format!("{:e}", rec.gap),
        format!("{:e}", rec.pinf),
        format!("{:e}", rec.dinf),
        rec.ktilde.to_string(),
        format!("{:e}", rec.tau),
        format!("{:e}", rec.kappa_w0),
        rec.pcg_iters.to_string(),
        rec.pcg_status.to_string(),
        format!("{:e}", rec.alpha),
        time,
    ]
}
