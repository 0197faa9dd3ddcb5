//! Triangular solvers: dense forward substitution (FS) and the fast
//! divide-and-conquer solver (FDAC) on the structured approximation.

use std::fmt;
use std::time::Instant;

use crate::assembly::{assemble_packed, fill_exact_row, DenseLowerSystem, RowCoefficients};
use crate::assembly::assemble_rhs;
use crate::error::{Error, Result};
use crate::model::{ApproxParams, Grid, Problem};
use crate::structured::{BlockOperator, BlockSpec, EntryTap, StructuredTables};

/// Largest `N` the dense solver accepts by default.
pub const DEFAULT_DENSE_LIMIT: usize = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolverKind {
    Fs,
    Fdac,
}

impl SolverKind {
    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::Fs => "fs",
            SolverKind::Fdac => "fdac",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// `v_1..v_{N+1}`
    pub v: Vec<f64>,
    pub assembly_seconds: f64,
    pub solve_seconds: f64,
    pub solver_kind: SolverKind,
    pub params_used: Option<ApproxParams>,
}

/// Record of the work an FDAC solve performed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub off_diagonal: Vec<BlockSpec>,
    /// Half-open global ranges solved densely.
    pub base_blocks: Vec<(usize, usize)>,
    /// Exact entries evaluated inside off-diagonal blocks.
    pub taps: Vec<EntryTap>,
}

/// Forward substitution on the packed lower-triangular system.
pub fn forward_substitution(system: &DenseLowerSystem) -> Result<Vec<f64>> {
    substitute_packed(system.size(), |i| system.row(i), system.rhs())
}

fn substitute_packed<'a, R>(size: usize, row: R, rhs: &[f64]) -> Result<Vec<f64>>
where
    R: Fn(usize) -> &'a [f64],
{
    if rhs.len() != size {
        return Err(Error::DimensionMismatch {
            expected: size,
            actual: rhs.len(),
        });
    }
    let mut v = Vec::with_capacity(size);
    for i in 1..=size {
        let r = row(i);
        let diag = r[i - 1];
        if diag == 0.0 {
            return Err(Error::Singular { row: i });
        }
        let dot: f64 = r[..i - 1].iter().zip(&v).map(|(a, b)| a * b).sum();
        v.push((rhs[i - 1] - dot) / diag);
    }
    Ok(v)
}

/// Solves `A~ v = rhs` with the fast divide-and-conquer recursion.
pub fn fdac_solve(
    problem: &Problem,
    grid: &Grid,
    params: &ApproxParams,
    rhs: &[f64],
) -> Result<SolveReport> {
    fdac_solve_inner(problem, grid, params, rhs, None)
}

/// [`fdac_solve`] that also records the blocks visited and exact entries used.
pub fn fdac_solve_traced(
    problem: &Problem,
    grid: &Grid,
    params: &ApproxParams,
    rhs: &[f64],
) -> Result<(SolveReport, Trace)> {
    let mut trace = Trace::default();
    let report = fdac_solve_inner(problem, grid, params, rhs, Some(&mut trace))?;
    Ok((report, trace))
}

fn fdac_solve_inner(
    problem: &Problem,
    grid: &Grid,
    params: &ApproxParams,
    rhs: &[f64],
    trace: Option<&mut Trace>,
) -> Result<SolveReport> {
    let size = grid.system_size();
    if rhs.len() != size {
        return Err(Error::DimensionMismatch {
            expected: size,
            actual: rhs.len(),
        });
    }
    let params = ApproxParams::new(params.s, params.k, params.band, params.base)?;

    let start = Instant::now();
    let tables = StructuredTables::new(problem, grid, &params);
    let assembly_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let op = BlockOperator::new(&tables, params.band);
    let mut v = rhs.to_vec();
    let mut scratch = Vec::with_capacity(params.base.min(size));
    Recursion {
        op: &op,
        base: params.base,
        trace,
        scratch: &mut scratch,
    }
    .solve(1, size + 1, &mut v)?;
    let solve_seconds = start.elapsed().as_secs_f64();

    Ok(SolveReport {
        v,
        assembly_seconds,
        solve_seconds,
        solver_kind: SolverKind::Fdac,
        params_used: Some(params),
    })
}

struct Recursion<'a, 'b> {
    op: &'a BlockOperator<'a>,
    base: usize,
    trace: Option<&'b mut Trace>,
    scratch: &'b mut Vec<f64>,
}

impl Recursion<'_, '_> {
    /// Solves rows `[lo, hi)` in place; `v` holds their right-hand side.
    fn solve(&mut self, lo: usize, hi: usize, v: &mut [f64]) -> Result<()> {
        let m = hi - lo;
        if m <= self.base {
            return self.solve_base(lo, hi, v);
        }
        let m1 = m.div_ceil(2);
        let mid = lo + m1;
        let (lead, trail) = v.split_at_mut(m1);
        self.solve(lo, mid, lead)?;

        let spec = BlockSpec::new(mid, hi, lo, mid)?;
        let y = match self.trace.as_deref_mut() {
            Some(t) => {
                t.off_diagonal.push(spec);
                self.op.apply_traced(&spec, lead, Some(&mut t.taps))?
            }
            None => self.op.apply(&spec, lead)?,
        };
        for (f, a) in trail.iter_mut().zip(&y) {
            *f -= a;
        }
        self.solve(mid, hi, trail)
    }

    fn solve_base(&mut self, lo: usize, hi: usize, v: &mut [f64]) -> Result<()> {
        if let Some(t) = self.trace.as_deref_mut() {
            t.base_blocks.push((lo, hi));
        }
        let rows: &RowCoefficients = self.op.tables().rows();
        for i in lo..hi {
            let width = i - lo + 1;
            self.scratch.clear();
            self.scratch.resize(width, 0.0);
            fill_exact_row(rows, i, lo, self.scratch);
            let diag = self.scratch[width - 1];
            if diag == 0.0 {
                return Err(Error::Singular { row: i });
            }
            let dot: f64 = self.scratch[..width - 1]
                .iter()
                .zip(&v[..width - 1])
                .map(|(a, b)| a * b)
                .sum();
            v[width - 1] = (v[width - 1] - dot) / diag;
        }
        Ok(())
    }
}

/// Bytes of packed dense storage for a system of the given size.
pub fn dense_bytes(size: usize) -> Option<usize> {
    size.checked_mul(size + 1)?.checked_div(2)?.checked_mul(8)
}

fn available_memory() -> Option<usize> {
    let info = std::fs::read_to_string("/proc/meminfo").ok()?;
    let line = info.lines().find(|l| l.starts_with("MemAvailable:"))?;
    let kib: usize = line.split_whitespace().nth(1)?.parse().ok()?;
    kib.checked_mul(1024)
}

fn check_dense_feasible(grid: &Grid, dense_limit: usize) -> Result<()> {
    if grid.n() > dense_limit {
        return Err(Error::Resource(format!(
            "FS stores the dense matrix and is limited to N <= {dense_limit} (got N = {}); use FDAC",
            grid.n()
        )));
    }
    let need = dense_bytes(grid.system_size()).ok_or_else(|| {
        Error::Resource("dense system size overflows; use FDAC".to_string())
    })?;
    if let Some(avail) = available_memory() {
        if need > avail {
            return Err(Error::Resource(format!(
                "FS needs {:.2} GiB for the dense matrix but only {:.2} GiB is available; use FDAC",
                need as f64 / (1u64 << 30) as f64,
                avail as f64 / (1u64 << 30) as f64
            )));
        }
    }
    Ok(())
}

/// Solves with the given method, assembling the right-hand side first.
pub fn solve(
    problem: &Problem,
    grid: &Grid,
    kind: SolverKind,
    params: Option<&ApproxParams>,
) -> Result<SolveReport> {
    let rhs = assemble_rhs(problem, grid)?;
    solve_with_rhs(problem, grid, kind, params, &rhs, DEFAULT_DENSE_LIMIT)
}

/// Solves with a precomputed right-hand side. FDAC uses
/// [`ApproxParams::defaults_for`] when `params` is `None`.
pub fn solve_with_rhs(
    problem: &Problem,
    grid: &Grid,
    kind: SolverKind,
    params: Option<&ApproxParams>,
    rhs: &[f64],
    dense_limit: usize,
) -> Result<SolveReport> {
    match kind {
        SolverKind::Fs => {
            check_dense_feasible(grid, dense_limit)?;
            if rhs.len() != grid.system_size() {
                return Err(Error::DimensionMismatch {
                    expected: grid.system_size(),
                    actual: rhs.len(),
                });
            }
            let start = Instant::now();
            let rows = RowCoefficients::new(problem, grid);
            let packed = assemble_packed(&rows)?;
            let assembly_seconds = start.elapsed().as_secs_f64();

            let start = Instant::now();
            let v = substitute_packed(
                rows.len(),
                |i| &packed[(i - 1) * i / 2..(i - 1) * i / 2 + i],
                rhs,
            )?;
            let solve_seconds = start.elapsed().as_secs_f64();
            Ok(SolveReport {
                v,
                assembly_seconds,
                solve_seconds,
                solver_kind: SolverKind::Fs,
                params_used: None,
            })
        }
        SolverKind::Fdac => {
            let defaults;
            let params = match params {
                Some(p) => p,
                None => {
                    defaults = ApproxParams::defaults_for(grid.n());
                    &defaults
                }
            };
            fdac_solve(problem, grid, params, rhs)
        }
    }
}
