//! Manufactured test problems, error metrics, and convergence and timing studies.

pub mod quadrature;

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::assembly::assemble_rhs;
use crate::error::{Error, Result};
use crate::model::{gamma_fn, ApproxParams, Grid, Problem};
use crate::postprocess::{reconstruct_u, with_v0};
use crate::solver::{solve_with_rhs, SolveReport, SolverKind, DEFAULT_DENSE_LIMIT};

use quadrature::{singular_quad, smooth_quad, weighted_singular, QuadConfig, Weight};

/// Exact-solution evaluator.
pub type ExactFn = Arc<dyn Fn(f64) -> Result<f64> + Send + Sync>;

/// Default quadrature tolerance for exact-solution values.
pub const U_QUAD_TOL: f64 = 1e-11;
/// Default quadrature tolerance for right-hand-side values.
pub const F_QUAD_TOL: f64 = 1e-10;

/// A problem together with its exact solution.
#[derive(Clone)]
pub struct ManufacturedProblem {
    pub name: String,
    pub problem: Problem,
    pub exact: ExactFn,
    /// Tolerance of the quadrature behind `f` and `exact`, if any.
    pub quad_tol: Option<f64>,
}

impl fmt::Debug for ManufacturedProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ManufacturedProblem")
            .field("name", &self.name)
            .field("problem", &self.problem)
            .field("quad_tol", &self.quad_tol)
            .finish()
    }
}

impl ManufacturedProblem {
    pub fn exact(&self, x: f64) -> Result<f64> {
        (self.exact)(x)
    }

    /// Same manufactured solution with `d` replaced; only the exact solution
    /// handle is kept, so `f` is no longer consistent with it unless `d` is
    /// unchanged.
    pub fn with_diffusivity<D>(&self, d: D) -> Result<Self>
    where
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Ok(Self {
            name: self.name.clone(),
            problem: self.problem.with_diffusivity(d)?,
            exact: self.exact.clone(),
            quad_tol: self.quad_tol,
        })
    }
}

fn check_order(name: &str, a: f64) -> Result<()> {
    if !(1.0..2.0).contains(&a) {
        return Err(Error::invalid(format!("{name} = {a} must lie in [1, 2)")));
    }
    Ok(())
}

/// `alpha(x) = (a0 - a1)(1 - x - sin(2 pi (1-x)) / (2 pi)) + a1`.
pub fn experiment1_alpha(alpha0: f64, alpha1: f64) -> impl Fn(f64) -> f64 + Clone + Send + Sync {
    move |x: f64| {
        let w = 1.0 - x;
        (alpha0 - alpha1) * (w - (2.0 * PI * w).sin() / (2.0 * PI)) + alpha1
    }
}

/// Closed-form source of the first experiment.
pub fn experiment1_source(alpha: f64, x: f64) -> Result<f64> {
    let second = 12.0 * x * x - 20.0 * x * x * x;
    if x == 0.0 {
        return Ok(0.0);
    }
    Ok(-second - 24.0 / gamma_fn(5.0 - alpha)? * x.powf(4.0 - alpha)
        + 120.0 / gamma_fn(6.0 - alpha)? * x.powf(5.0 - alpha))
}

/// Smooth solution `u = x^4 (1 - x)` with a sine-modulated order profile.
pub fn experiment1(alpha0: f64, alpha1: f64) -> Result<ManufacturedProblem> {
    check_order("alpha0", alpha0)?;
    check_order("alpha1", alpha1)?;
    let alpha = experiment1_alpha(alpha0, alpha1);
    // the profile is monotone between its endpoint values
    let (lo, hi) = (alpha0.min(alpha1), alpha0.max(alpha1));
    let a = alpha.clone();
    let problem = Problem::with_source(
        Arc::new(alpha),
        Arc::new(|_| 1.0),
        Arc::new(move |x| experiment1_source(a(x), x)),
        lo,
        hi,
    )?;
    Ok(ManufacturedProblem {
        name: format!("experiment1(alpha0={alpha0}, alpha1={alpha1})"),
        problem,
        exact: Arc::new(|x| Ok(x.powi(4) * (1.0 - x))),
        quad_tol: None,
    })
}

type Cache = Arc<Mutex<HashMap<u64, f64>>>;

fn cached<F>(cache: &Cache, x: f64, eval: F) -> Result<f64>
where
    F: FnOnce() -> Result<f64>,
{
    if let Some(v) = cache.lock().expect("value cache poisoned").get(&x.to_bits()) {
        return Ok(*v);
    }
    let v = eval()?;
    cache
        .lock()
        .expect("value cache poisoned")
        .insert(x.to_bits(), v);
    Ok(v)
}

/// Solution with a boundary layer at 0, `alpha(x) = (a1 - a0) x + a0`.
///
/// `f` and `u` come from quadrature and are cached per node.
pub fn experiment2(alpha0: f64, alpha1: f64) -> Result<ManufacturedProblem> {
    experiment2_with_tol(alpha0, alpha1, U_QUAD_TOL, F_QUAD_TOL)
}

pub fn experiment2_with_tol(
    alpha0: f64,
    alpha1: f64,
    u_tol: f64,
    f_tol: f64,
) -> Result<ManufacturedProblem> {
    check_order("alpha0", alpha0)?;
    check_order("alpha1", alpha1)?;
    if alpha0 > alpha1 {
        return Err(Error::invalid(format!(
            "alpha0 = {alpha0} must not exceed alpha1 = {alpha1}"
        )));
    }
    let alpha = move |x: f64| (alpha1 - alpha0) * x + alpha0;
    let f_cfg = QuadConfig::with_tol(f_tol);
    let u_cfg = QuadConfig::with_tol(u_tol);

    let f_cache: Cache = Arc::default();
    let source = move |x: f64| -> Result<f64> {
        if x == 0.0 {
            return Ok(0.0);
        }
        cached(&f_cache, x, || {
            let a = alpha(x);
            let j = singular_quad(x, alpha, a, &f_cfg)?;
            Ok(-x.powf(2.0 - a) - j / gamma_fn(2.0 - a)?)
        })
    };

    let big_i = smooth_quad(1.0, Weight::OneMinusS, alpha, &u_cfg)?;
    let u_cache: Cache = Arc::default();
    let exact = move |x: f64| -> Result<f64> {
        if x == 0.0 {
            return Ok(0.0);
        }
        cached(&u_cache, x, || {
            Ok(smooth_quad(x, Weight::XMinusS, alpha, &u_cfg)? - x * big_i)
        })
    };

    let problem = Problem::with_source(
        Arc::new(alpha),
        Arc::new(|_| 1.0),
        Arc::new(source),
        alpha0,
        alpha1,
    )?;
    Ok(ManufacturedProblem {
        name: format!("experiment2(alpha0={alpha0}, alpha1={alpha1})"),
        problem,
        exact: Arc::new(exact),
        quad_tol: Some(u_tol.max(f_tol)),
    })
}

/// `|f(x) - (-u''(x) - D^{alpha(x)} u(x))|` for the first experiment, with
/// the fractional derivative of `u = x^4(1-x)` computed by quadrature.
pub fn experiment1_residual(alpha0: f64, alpha1: f64, x: f64, tol: f64) -> Result<f64> {
    let mp = experiment1(alpha0, alpha1)?;
    let a = mp.problem.alpha(x);
    let second = |s: f64| 12.0 * s * s - 20.0 * s * s * s;
    let caputo =
        weighted_singular(second, x, 1.0 - a, &QuadConfig::with_tol(tol))? / gamma_fn(2.0 - a)?;
    let lhs = -second(x) - mp.problem.d(x) * caputo;
    Ok((mp.problem.f(x)? - lhs).abs())
}

/// `max_{1<=n<=N} |u_n - u(x_n)|`.
pub fn max_nodal_error<F>(u_numeric: &[f64], exact: F, grid: &Grid) -> Result<f64>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    if u_numeric.len() != grid.n() {
        return Err(Error::DimensionMismatch {
            expected: grid.n(),
            actual: u_numeric.len(),
        });
    }
    let errs: Vec<f64> = u_numeric
        .par_iter()
        .enumerate()
        .map(|(m, u)| Ok((u - exact(grid.x(m + 1))?).abs()))
        .collect::<Result<_>>()?;
    Ok(errs.into_iter().fold(0.0, f64::max))
}

/// `log2(prev / cur)`.
pub fn convergence_order(prev: f64, cur: f64) -> f64 {
    (prev / cur).log2()
}

/// How FDAC parameters are chosen per grid size: defaults with optional overrides.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParamsPolicy {
    pub s: Option<usize>,
    pub k: Option<usize>,
    pub band: Option<usize>,
    pub base: Option<usize>,
}

impl ParamsPolicy {
    pub fn params_for(&self, n: usize) -> Result<ApproxParams> {
        let d = ApproxParams::defaults_for(n);
        ApproxParams::new(
            self.s.unwrap_or(d.s),
            self.k.unwrap_or(d.k),
            self.band.unwrap_or(d.band),
            self.base.unwrap_or(d.base),
        )
    }
}

/// One row of a convergence or timing table.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub n: usize,
    pub solver: SolverKind,
    pub error: Option<f64>,
    pub order: Option<f64>,
    pub cpu_m: Option<f64>,
    pub cpu_s: Option<f64>,
    pub params: Option<ApproxParams>,
    pub quad_tol: Option<f64>,
    pub failure: Option<Error>,
}

impl StudyRow {
    fn failed(n: usize, solver: SolverKind, err: &Error) -> Self {
        Self {
            n,
            solver,
            error: None,
            order: None,
            cpu_m: None,
            cpu_s: None,
            params: None,
            quad_tol: None,
            failure: Some(err.clone()),
        }
    }

    /// Whether the quadrature tolerance stays below 1% of the measured error.
    pub fn quadrature_adequate(&self) -> bool {
        match (self.quad_tol, self.error) {
            (Some(tol), Some(err)) => tol <= 0.01 * err,
            _ => true,
        }
    }
}

/// Options shared by the studies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyOptions {
    pub policy: ParamsPolicy,
    pub dense_limit: usize,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            policy: ParamsPolicy::default(),
            dense_limit: DEFAULT_DENSE_LIMIT,
        }
    }
}

/// Solves, reconstructs `u`, and measures the nodal error.
pub struct Run {
    pub report: SolveReport,
    pub u: Vec<f64>,
}

/// Solves `mp` on `grid` with a precomputed right-hand side.
pub fn run_once(
    mp: &ManufacturedProblem,
    grid: &Grid,
    kind: SolverKind,
    rhs: &[f64],
    opts: &StudyOptions,
) -> Result<Run> {
    let params = match kind {
        SolverKind::Fs => None,
        SolverKind::Fdac => Some(opts.policy.params_for(grid.n())?),
    };
    let report = solve_with_rhs(&mp.problem, grid, kind, params.as_ref(), rhs, opts.dense_limit)?;
    let v0 = -mp.problem.f(0.0)?;
    let u = reconstruct_u(&with_v0(v0, &report.v), grid)?;
    Ok(Run { report, u })
}

fn study_row(
    mp: &ManufacturedProblem,
    n: usize,
    kind: SolverKind,
    opts: &StudyOptions,
    rhs_cache: &mut HashMap<usize, Vec<f64>>,
) -> Result<StudyRow> {
    let grid = Grid::new(n)?;
    let rhs = match rhs_cache.get(&n) {
        Some(r) => r.clone(),
        None => {
            let r = assemble_rhs(&mp.problem, &grid)?;
            rhs_cache.insert(n, r.clone());
            r
        }
    };
    let run = run_once(mp, &grid, kind, &rhs, opts)?;
    let error = max_nodal_error(&run.u, |x| mp.exact(x), &grid)?;
    Ok(StudyRow {
        n,
        solver: kind,
        error: Some(error),
        order: None,
        cpu_m: Some(run.report.assembly_seconds),
        cpu_s: Some(run.report.solve_seconds),
        params: run.report.params_used,
        quad_tol: mp.quad_tol,
        failure: None,
    })
}

fn fill_orders(rows: &mut [StudyRow]) {
    for i in 1..rows.len() {
        rows[i].order = match (rows[i - 1].error, rows[i].error) {
            (Some(p), Some(c)) if rows[i].n == 2 * rows[i - 1].n => Some(convergence_order(p, c)),
            _ => None,
        };
    }
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.is_empty() || sizes[0] == 0 || sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!(
            "grid sizes {sizes:?} must be positive and strictly increasing"
        )));
    }
    Ok(())
}

/// Errors and orders over `sizes` for one solver. Rows that fail keep their
/// place with the failure recorded.
pub fn convergence_study(
    mp: &ManufacturedProblem,
    kind: SolverKind,
    sizes: &[usize],
    opts: &StudyOptions,
) -> Result<Vec<StudyRow>> {
    check_sizes(sizes)?;
    let mut cache = HashMap::new();
    let mut rows: Vec<StudyRow> = sizes
        .iter()
        .map(|&n| study_row(mp, n, kind, opts, &mut cache).unwrap_or_else(|e| StudyRow::failed(n, kind, &e)))
        .collect();
    fill_orders(&mut rows);
    Ok(rows)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

/// Median-of-`repetitions` timings per solver and size. FS is skipped above
/// the dense limit. Repetitions are interleaved across sizes so that slow
/// periods on a shared machine hit every size alike.
pub fn scaling_benchmark(
    mp: &ManufacturedProblem,
    kinds: &[SolverKind],
    sizes: &[usize],
    repetitions: usize,
    opts: &StudyOptions,
) -> Result<Vec<StudyRow>> {
    check_sizes(sizes)?;
    if repetitions == 0 {
        return Err(Error::invalid("at least one repetition is required"));
    }
    let mut out = Vec::new();
    for &kind in kinds {
        let mut benches: Vec<(usize, Result<Bench>)> = sizes
            .iter()
            .filter(|&&n| !(kind == SolverKind::Fs && n > opts.dense_limit))
            .map(|&n| (n, Bench::new(mp, n, repetitions)))
            .collect();
        for _ in 0..repetitions {
            for (_, b) in benches.iter_mut() {
                if let Ok(bench) = b {
                    if let Err(e) = bench.run(mp, kind, opts) {
                        *b = Err(e);
                    }
                }
            }
        }
        let mut rows: Vec<StudyRow> = benches
            .into_iter()
            .map(|(n, b)| b.and_then(|b| b.finish(mp, kind)).unwrap_or_else(|e| StudyRow::failed(n, kind, &e)))
            .collect();
        fill_orders(&mut rows);
        out.extend(rows);
    }
    Ok(out)
}

struct Bench {
    grid: Grid,
    rhs: Vec<f64>,
    cpu_m: Vec<f64>,
    cpu_s: Vec<f64>,
    last: Option<Run>,
}

impl Bench {
    fn new(mp: &ManufacturedProblem, n: usize, repetitions: usize) -> Result<Self> {
        let grid = Grid::new(n)?;
        let rhs = assemble_rhs(&mp.problem, &grid)?;
        Ok(Self {
            grid,
            rhs,
            cpu_m: Vec::with_capacity(repetitions),
            cpu_s: Vec::with_capacity(repetitions),
            last: None,
        })
    }

    fn run(&mut self, mp: &ManufacturedProblem, kind: SolverKind, opts: &StudyOptions) -> Result<()> {
        let run = run_once(mp, &self.grid, kind, &self.rhs, opts)?;
        self.cpu_m.push(run.report.assembly_seconds);
        self.cpu_s.push(run.report.solve_seconds);
        self.last = Some(run);
        Ok(())
    }

    fn finish(self, mp: &ManufacturedProblem, kind: SolverKind) -> Result<StudyRow> {
        let run = self.last.expect("at least one repetition");
        let error = max_nodal_error(&run.u, |x| mp.exact(x), &self.grid)?;
        Ok(StudyRow {
            n: self.grid.n(),
            solver: kind,
            error: Some(error),
            order: None,
            cpu_m: Some(median(self.cpu_m)),
            cpu_s: Some(median(self.cpu_s)),
            params: run.report.params_used,
            quad_tol: mp.quad_tol,
            failure: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment1_profile_and_source() {
        let mp = experiment1(1.2, 1.6).unwrap();
        assert!((mp.problem.alpha(0.0) - 1.2).abs() < 1e-15);
        assert!((mp.problem.alpha(1.0) - 1.6).abs() < 1e-15);
        assert_eq!(mp.problem.f(0.0).unwrap(), 0.0);
        assert_eq!(mp.exact(0.0).unwrap(), 0.0);
        assert_eq!(mp.exact(1.0).unwrap(), 0.0);
        assert!(experiment1(0.9, 1.6).is_err());
        assert!(experiment1(1.2, 2.0).is_err());
    }

    #[test]
    fn experiment1_residual_is_small() {
        for x in [0.05, 0.3, 0.77, 1.0] {
            assert!(experiment1_residual(1.2, 1.6, x, 1e-13).unwrap() < 1e-9);
        }
    }

    #[test]
    fn experiment2_values_match_extended_precision() {
        let mp = experiment2(1.2, 1.6).unwrap();
        assert_eq!(mp.problem.f(0.0).unwrap(), 0.0);
        assert_eq!(mp.exact(0.0).unwrap(), 0.0);
        for (x, f, u) in [
            (0.5, -0.986_063_088_686_746_772, -0.079_357_267_518_063_736),
            (1.0 / 3.0, -0.644_027_827_135_914_400, -0.064_213_915_096_352_127),
        ] {
            assert!((mp.problem.f(x).unwrap() - f).abs() < 1e-10);
            assert!((mp.exact(x).unwrap() - u).abs() < 1e-11);
            // cached path returns the same value
            assert_eq!(mp.exact(x).unwrap(), mp.exact(x).unwrap());
        }
        assert!(mp.exact(1.0).unwrap().abs() < 1e-11);
        assert!(experiment2(1.6, 1.2).is_err());
    }

    #[test]
    fn nodal_error_examples() {
        let grid = Grid::new(4).unwrap();
        let exact = |x: f64| Ok(x * (1.0 - x));
        let mut u: Vec<f64> = (1..=4).map(|m| exact(grid.x(m)).unwrap()).collect();
        assert_eq!(max_nodal_error(&u, exact, &grid).unwrap(), 0.0);
        u[2] += 1e-6;
        assert!((max_nodal_error(&u, exact, &grid).unwrap() - 1e-6).abs() < 1e-15);
        assert!(max_nodal_error(&u[1..], exact, &grid).is_err());
    }

    #[test]
    fn order_is_shift_invariant() {
        let errs = [3.1e-4, 7.4e-5, 1.9e-5];
        for c in [1.0, 1e-3, 7.5] {
            assert_eq!(
                convergence_order(errs[0] * c, errs[1] * c).to_bits(),
                convergence_order(errs[0], errs[1]).to_bits()
            );
        }
    }

    #[test]
    fn zero_diffusivity_reaches_rounding_floor() {
        // with d = 0 the scheme reduces to v = -f and exact reconstruction
        // of the interpolant; u'' = 1 is reproduced exactly
        let problem = Problem::new(|_| 1.5, |_| 0.0, |_| -1.0, 1.5, 1.5).unwrap();
        let mp = ManufacturedProblem {
            name: "quadratic".into(),
            problem,
            exact: Arc::new(|x| Ok(x * (x - 1.0) / 2.0)),
            quad_tol: None,
        };
        let rows =
            convergence_study(&mp, SolverKind::Fdac, &[16, 32, 64], &StudyOptions::default())
                .unwrap();
        for r in &rows {
            assert!(r.error.unwrap() < 1e-14);
        }
        assert!(rows[0].order.is_none());
    }

    #[test]
    fn study_keeps_failed_rows() {
        let mp = experiment1(1.2, 1.6).unwrap();
        let opts = StudyOptions {
            dense_limit: 40,
            ..StudyOptions::default()
        };
        let rows = convergence_study(&mp, SolverKind::Fs, &[16, 32, 64], &opts).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(matches!(rows[2].failure, Some(Error::Resource(ref m)) if m.contains("FDAC")));
        assert!(rows[1].order.is_some());
        assert!(rows[2].order.is_none());
        assert!(convergence_study(&mp, SolverKind::Fs, &[32, 16], &opts).is_err());
    }

    #[test]
    fn benchmark_rows() {
        let mp = experiment1(1.2, 1.6).unwrap();
        let opts = StudyOptions {
            dense_limit: 64,
            ..StudyOptions::default()
        };
        let rows = scaling_benchmark(
            &mp,
            &[SolverKind::Fs, SolverKind::Fdac],
            &[32, 64, 128],
            3,
            &opts,
        )
        .unwrap();
        assert_eq!(rows.len(), 5);
        assert!(rows.iter().all(|r| r.cpu_s.unwrap() >= 0.0));
        assert!(rows[2].params.is_some());
        assert!(scaling_benchmark(&mp, &[SolverKind::Fs], &[32], 0, &opts).is_err());
    }

    #[test]
    fn policy_overrides() {
        let p = ParamsPolicy {
            band: Some(3),
            ..Default::default()
        };
        let got = p.params_for(1024).unwrap();
        assert_eq!(got.band, 3);
        assert_eq!(got.s, ApproxParams::defaults_for(1024).s);
        assert_eq!(ParamsPolicy::default().params_for(100).unwrap(), ApproxParams::defaults_for(100));
    }
}
