//! `vofde` command-line front end.

pub mod table;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vofde_core::experiments::{
    experiment1, experiment2, run_once, scaling_benchmark, ManufacturedProblem, ParamsPolicy,
    StudyOptions,
};
use vofde_core::structured::{block_matvec, lag_entry_error, max_entry_error, precompute_tables, BlockSpec};
use vofde_core::{
    assemble_rhs, convergence_study, exact_entry, max_nodal_error, ApproxParams, Error, Grid,
    SolverKind, DEFAULT_DENSE_LIMIT,
};

use table::{fmt_float, write_csv, write_study_table, write_text_table, CsvRow};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_ACCURACY: i32 = 3;
pub const EXIT_RESOURCE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "vofde", version, about = "Variable-order space-fractional diffusion solvers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve once and print nodal values of u.
    Solve(SolveArgs),
    /// Errors and convergence orders over a range of grid sizes.
    Convergence(StudyArgs),
    /// Median timings over a range of grid sizes.
    Bench(BenchArgs),
    /// Entry error of the structured approximation across parameter grids.
    ApproxError(ApproxErrorArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverChoice {
    Fs,
    Fdac,
    Both,
}

impl SolverChoice {
    fn kinds(self) -> Vec<SolverKind> {
        match self {
            SolverChoice::Fs => vec![SolverKind::Fs],
            SolverChoice::Fdac => vec![SolverKind::Fdac],
            SolverChoice::Both => vec![SolverKind::Fs, SolverKind::Fdac],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Table,
}

#[derive(Debug, Clone, Args)]
pub struct ProblemArgs {
    /// Built-in experiment.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub experiment: u8,
    #[arg(long, default_value_t = 1.2)]
    pub alpha0: f64,
    #[arg(long, default_value_t = 1.6)]
    pub alpha1: f64,
    /// Replace the diffusivity by this constant (the exact solution is then
    /// only meaningful for the original value 1).
    #[arg(long)]
    pub diffusivity: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ParamArgs {
    #[arg(long)]
    pub s: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub band: Option<usize>,
    #[arg(long)]
    pub base: Option<usize>,
}

impl ParamArgs {
    fn policy(&self) -> ParamsPolicy {
        ParamsPolicy {
            s: self.s,
            k: self.k,
            band: self.band,
            base: self.base,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Write to this file instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long)]
    pub n: usize,
    #[arg(long, value_enum, default_value_t = SolverChoice::Fdac)]
    pub solver: SolverChoice,
    #[command(flatten)]
    pub params: ParamArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, default_value_t = DEFAULT_DENSE_LIMIT)]
    pub dense_limit: usize,
}

#[derive(Debug, Clone, Args)]
pub struct StudyArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Grid sizes: `A..B` (doublings), `a,b,c`, or a single value.
    #[arg(long)]
    pub n: String,
    #[arg(long, value_enum, default_value_t = SolverChoice::Both)]
    pub solver: SolverChoice,
    #[command(flatten)]
    pub params: ParamArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, default_value_t = DEFAULT_DENSE_LIMIT)]
    pub dense_limit: usize,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub study: StudyArgs,
    #[arg(long, default_value_t = 3)]
    pub repetitions: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ApproxErrorArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, default_value_t = 1024)]
    pub n: usize,
    /// Log-expansion orders to tabulate.
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
    pub s: Vec<usize>,
    /// Binomial-expansion orders to tabulate.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub k: Vec<usize>,
    /// Exact band widths (default: the grid-size default).
    #[arg(long, value_delimiter = ',')]
    pub band: Vec<usize>,
    /// Seeds the random vector of the block product check.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// Failure of a command, mapped to an exit status.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
    Io(io::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.into())
    }
}

pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::InvalidInput(_) | Error::DimensionMismatch { .. } => EXIT_USAGE,
        Error::Singular { .. } | Error::Accuracy { .. } => EXIT_ACCURACY,
        Error::Resource(_) => EXIT_RESOURCE,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) => exit_code_for(e),
            CliError::Io(_) => EXIT_RESOURCE,
        }
    }
}

/// Expands `A..B` into `A, 2A, 4A, ... <= B`; also accepts `a,b,c` or `a`.
pub fn parse_sizes(spec: &str) -> Result<Vec<usize>, CliError> {
    let bad = |m: String| CliError::Usage(format!("grid sizes {spec:?}: {m}"));
    let num = |s: &str| -> Result<usize, CliError> {
        s.trim().parse::<usize>().map_err(|e| bad(format!("{s:?}: {e}")))
    };
    let sizes = if let Some((a, b)) = spec.split_once("..") {
        let (mut a, b) = (num(a)?, num(b)?);
        if a == 0 || a > b {
            return Err(bad("range needs 1 <= A <= B".into()));
        }
        let mut out = Vec::new();
        while a <= b {
            out.push(a);
            a = a.checked_mul(2).ok_or_else(|| bad("range overflows".into()))?;
        }
        out
    } else {
        spec.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if sizes.is_empty() || sizes[0] == 0 || sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(bad("sizes must be positive and strictly increasing".into()));
    }
    Ok(sizes)
}

/// Sets the global worker pool size from `VOFDE_THREADS` (0 or unset keeps the default).
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("VOFDE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("VOFDE_THREADS={v:?} is not a thread count")))?;
    if n > 0 {
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn manufactured(p: &ProblemArgs) -> Result<ManufacturedProblem, CliError> {
    let mp = match p.experiment {
        1 => experiment1(p.alpha0, p.alpha1)?,
        2 => experiment2(p.alpha0, p.alpha1)?,
        e => return Err(CliError::Usage(format!("unknown experiment {e}"))),
    };
    match p.diffusivity {
        Some(d) => Ok(mp.with_diffusivity(move |_| d)?),
        None => Ok(mp),
    }
}

fn open_output<'a>(out: &OutputArgs, stdout: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>, CliError> {
    Ok(match &out.output {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(stdout),
    })
}

/// Runs a parsed command, writing results to `stdout` unless an output file is given.
/// Returns the exit status; diagnostics go to `stderr`.
pub fn run(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let result = configure_threads().and_then(|_| match &cli.command {
        Command::Solve(a) => run_solve(a, stdout),
        Command::Convergence(a) => run_study(a, None, stdout, stderr),
        Command::Bench(a) => run_study(&a.study, Some(a.repetitions), stdout, stderr),
        Command::ApproxError(a) => run_approx_error(a, stdout),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "vofde: {e}");
            e.exit_code()
        }
    }
}

fn run_solve(a: &SolveArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let kind = match a.solver {
        SolverChoice::Fs => SolverKind::Fs,
        SolverChoice::Fdac => SolverKind::Fdac,
        SolverChoice::Both => {
            return Err(CliError::Usage("solve takes a single solver (fs or fdac)".into()))
        }
    };
    let mp = manufactured(&a.problem)?;
    let grid = Grid::new(a.n)?;
    let rhs = assemble_rhs(&mp.problem, &grid)?;
    let opts = StudyOptions {
        policy: a.params.policy(),
        dense_limit: a.dense_limit,
    };
    let run = run_once(&mp, &grid, kind, &rhs, &opts)?;
    let exact: Vec<f64> = (1..=a.n)
        .map(|m| mp.exact(grid.x(m)))
        .collect::<Result<_, _>>()?;
    let error = max_nodal_error(&run.u, |x| mp.exact(x), &grid)?;

    let mut out = open_output(&a.output, stdout)?;
    let header = ["m", "x", "u", "u_exact"];
    match a.output.format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(header)?;
            for m in 1..=a.n {
                w.write_record([
                    m.to_string(),
                    fmt_float(grid.x(m)),
                    fmt_float(run.u[m - 1]),
                    fmt_float(exact[m - 1]),
                ])?;
            }
            w.flush()?;
        }
        Format::Table => {
            let rows: Vec<Vec<String>> = (1..=a.n)
                .map(|m| {
                    vec![
                        m.to_string(),
                        format!("{:.6}", grid.x(m)),
                        format!("{:.10e}", run.u[m - 1]),
                        format!("{:.10e}", exact[m - 1]),
                    ]
                })
                .collect();
            write_text_table(&header, &rows, &mut out)?;
            writeln!(
                out,
                "{} N={} max nodal error {error:.5e} (assembly {:.3}s, solve {:.3}s)",
                kind,
                a.n,
                run.report.assembly_seconds,
                run.report.solve_seconds
            )?;
        }
    }
    out.flush()?;
    Ok(EXIT_OK)
}

fn run_study(
    a: &StudyArgs,
    repetitions: Option<usize>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<i32, CliError> {
    let sizes = parse_sizes(&a.n)?;
    let mp = manufactured(&a.problem)?;
    let opts = StudyOptions {
        policy: a.params.policy(),
        dense_limit: a.dense_limit,
    };
    // validate overrides up front so a bad flag is a usage error, not a failed row
    opts.policy.params_for(sizes[0])?;

    let kinds = a.solver.kinds();
    let rows = match repetitions {
        Some(reps) => scaling_benchmark(&mp, &kinds, &sizes, reps, &opts)?,
        None => {
            let mut rows = Vec::new();
            for &kind in &kinds {
                rows.extend(convergence_study(&mp, kind, &sizes, &opts)?);
            }
            rows
        }
    };

    let csv_rows: Vec<CsvRow> = rows.iter().map(CsvRow::from).collect();
    let mut out = open_output(&a.output, stdout)?;
    match a.output.format {
        Format::Csv => write_csv(&csv_rows, &mut out)?,
        Format::Table => write_study_table(&csv_rows, &mut out)?,
    }
    out.flush()?;

    let mut code = EXIT_OK;
    for r in &rows {
        if let Some(e) = &r.failure {
            writeln!(stderr, "vofde: {} N={}: {e}", r.solver, r.n)?;
            code = code.max(exit_code_for(e));
        }
        if !r.quadrature_adequate() {
            writeln!(
                stderr,
                "vofde: {} N={}: quadrature tolerance is not below 1% of the measured error",
                r.solver, r.n
            )?;
        }
    }
    Ok(code)
}

fn run_approx_error(a: &ApproxErrorArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let mp = manufactured(&a.problem)?;
    let grid = Grid::new(a.n)?;
    let size = grid.system_size();
    if size < 3 {
        return Err(CliError::Usage("approx-error needs n >= 2".into()));
    }
    let defaults = ApproxParams::defaults_for(a.n);
    let bands = if a.band.is_empty() {
        vec![defaults.band]
    } else {
        a.band.clone()
    };

    // leading off-diagonal block of the recursion and a seeded random vector
    let mid = 1 + size.div_ceil(2);
    let spec = BlockSpec::new(mid, size + 1, 1, mid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let x: Vec<f64> = (0..spec.cols()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let exact_y: Vec<f64> = (spec.row_lo..spec.row_hi)
        .map(|i| {
            (spec.col_lo..spec.col_hi)
                .map(|j| Ok(exact_entry(i, j, &mp.problem, &grid)? * x[j - 1]))
                .sum::<Result<f64, Error>>()
        })
        .collect::<Result<_, _>>()?;
    let y_norm = exact_y.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let header = [
        "n",
        "s",
        "k",
        "band",
        "max_entry_error",
        "first_approximated_lag_error",
        "block_matvec_rel_error",
    ];
    let mut records = Vec::new();
    for &band in &bands {
        for &k in &a.k {
            for &s in &a.s {
                let params = ApproxParams::new(s, k, band, defaults.base.max(band))?;
                let tables = precompute_tables(&mp.problem, &grid, &params);
                let max_err = max_entry_error(&tables, band);
                let lag_err = if band + 1 < size {
                    Some(lag_entry_error(&tables, band + 1))
                } else {
                    None
                };
                let y = block_matvec(&spec, &tables, &params, &x)?;
                let diff = y
                    .iter()
                    .zip(&exact_y)
                    .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
                records.push([
                    a.n.to_string(),
                    s.to_string(),
                    k.to_string(),
                    band.to_string(),
                    fmt_float(max_err),
                    lag_err.map(fmt_float).unwrap_or_default(),
                    fmt_float(if y_norm > 0.0 { diff / y_norm } else { diff }),
                ]);
            }
        }
    }

    let mut out = open_output(&a.output, stdout)?;
    match a.output.format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(header)?;
            for r in &records {
                w.write_record(r)?;
            }
            w.flush()?;
        }
        Format::Table => {
            let rows: Vec<Vec<String>> = records.iter().map(|r| r.to_vec()).collect();
            write_text_table(&header, &rows, &mut out)?;
        }
    }
    out.flush()?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_ranges() {
        assert_eq!(parse_sizes("256..8192").unwrap(), vec![256, 512, 1024, 2048, 4096, 8192]);
        assert_eq!(parse_sizes("3..20").unwrap(), vec![3, 6, 12]);
        assert_eq!(parse_sizes("5").unwrap(), vec![5]);
        assert_eq!(parse_sizes("8, 16,64").unwrap(), vec![8, 16, 64]);
        for bad in ["", "0..8", "16..8", "a..8", "8,8", "16,8", "0"] {
            assert!(parse_sizes(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code_for(&Error::InvalidInput("x".into())), EXIT_USAGE);
        assert_eq!(
            exit_code_for(&Error::Accuracy {
                estimate: 0.0,
                achieved: 1.0,
                requested: 0.1
            }),
            EXIT_ACCURACY
        );
        assert_eq!(exit_code_for(&Error::Resource("x".into())), EXIT_RESOURCE);
        assert_eq!(CliError::Usage("x".into()).exit_code(), EXIT_USAGE);
    }
}
