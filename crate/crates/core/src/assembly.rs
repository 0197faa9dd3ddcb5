//! Exact collocation system `A v = f`.
//!
//! Rows and columns use the global indices `1..=N+1` of the unknowns
//! `v_1..v_{N+1}`; row `i` is the collocation equation at node `x_i`. The
//! unknown `v_0 = -f(0)` is eliminated into the right-hand side.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{gamma_pos, pow0, Grid, Problem};

/// Second difference `(m-1)^e - 2 m^e + (m+1)^e` of `m^e`, `e = 3 - alpha_i`.
pub fn t_exact(lag: usize, alpha_i: f64) -> Result<f64> {
    if lag == 0 {
        return Err(Error::invalid("lag 0 is the diagonal and has no t value"));
    }
    Ok(second_difference(lag, 3.0 - alpha_i))
}

#[inline]
pub(crate) fn second_difference(lag: usize, exponent: f64) -> f64 {
    let m = lag as f64;
    combine(
        pow0(m - 1.0, exponent),
        pow0(m, exponent),
        pow0(m + 1.0, exponent),
    )
}

/// The single expression every exact off-diagonal evaluation goes through, so
/// that cached-power and direct evaluations agree bit for bit.
#[inline(always)]
pub(crate) fn combine(below: f64, at: f64, above: f64) -> f64 {
    below - 2.0 * at + above
}

/// Per-row coefficients `alpha(x_i)` and `d(x_i) h^{2-alpha(x_i)} / Gamma(4-alpha(x_i))`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowCoefficients {
    alpha: Vec<f64>,
    scale: Vec<f64>,
}

impl RowCoefficients {
    pub fn new(problem: &Problem, grid: &Grid) -> Self {
        let (alpha, scale) = (1..=grid.system_size())
            .map(|i| {
                let a = problem.alpha(grid.x(i));
                (a, row_scale_with(problem, grid, i, a))
            })
            .unzip();
        Self { alpha, scale }
    }

    /// `alpha(x_i)`, `1 <= i <= N+1`.
    #[inline]
    pub fn alpha(&self, i: usize) -> f64 {
        self.alpha[i - 1]
    }

    /// Common factor of row `i`.
    #[inline]
    pub fn scale(&self, i: usize) -> f64 {
        self.scale[i - 1]
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Exact entry `A_{i,j}` from the cached row data.
    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        debug_assert!(j <= i);
        let scale = self.scale(i);
        if i == j {
            1.0 + scale
        } else {
            scale * second_difference(i - j, 3.0 - self.alpha(i))
        }
    }
}

#[inline]
fn row_scale_with(problem: &Problem, grid: &Grid, i: usize, alpha_i: f64) -> f64 {
    problem.d(grid.x(i)) * grid.h().powf(2.0 - alpha_i) / gamma_pos(4.0 - alpha_i)
}

/// Exact stiffness entry `A_{i,j}`.
pub fn exact_entry(i: usize, j: usize, problem: &Problem, grid: &Grid) -> Result<f64> {
    let size = grid.system_size();
    if i == 0 || j == 0 || i > size {
        return Err(Error::invalid(format!(
            "entry ({i}, {j}) outside 1..={size}"
        )));
    }
    if j > i {
        return Err(Error::invalid(format!(
            "entry ({i}, {j}) lies above the diagonal"
        )));
    }
    let alpha_i = problem.alpha(grid.x(i));
    let scale = row_scale_with(problem, grid, i, alpha_i);
    Ok(if i == j {
        1.0 + scale
    } else {
        scale * second_difference(i - j, 3.0 - alpha_i)
    })
}

/// Right-hand side `f_1..f_{N+1}` after eliminating `v_0 = -f(0)`.
pub fn assemble_rhs(problem: &Problem, grid: &Grid) -> Result<Vec<f64>> {
    let v0 = -problem.f(0.0)?;
    let h = grid.h();
    let x1 = grid.x(1);
    (1..=grid.system_size())
        .into_par_iter()
        .map(|n| {
            let x = grid.x(n);
            let fx = problem.f(x)?;
            let dx = problem.d(x);
            if v0 == 0.0 || dx == 0.0 {
                return Ok(-fx);
            }
            let a = problem.alpha(x);
            let correction = pow0(x, 2.0 - a) / gamma_pos(3.0 - a)
                + (pow0(x - x1, 3.0 - a) - pow0(x, 3.0 - a)) / (h * gamma_pos(4.0 - a));
            Ok(-fx - dx * v0 * correction)
        })
        .collect()
}

/// Dense lower-triangular system stored row by row (packed, diagonal included).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLowerSystem {
    size: usize,
    packed: Vec<f64>,
    rhs: Vec<f64>,
}

#[inline]
fn row_start(i: usize) -> usize {
    // row i (1-based) holds columns 1..=i
    (i - 1) * i / 2
}

impl DenseLowerSystem {
    /// Builds a system from explicit rows; `rows[r]` holds columns `1..=r+1`.
    pub fn from_rows(rows: &[Vec<f64>], rhs: Vec<f64>) -> Result<Self> {
        if rhs.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                actual: rhs.len(),
            });
        }
        let mut packed = Vec::with_capacity(rows.len() * (rows.len() + 1) / 2);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != r + 1 {
                return Err(Error::DimensionMismatch {
                    expected: r + 1,
                    actual: row.len(),
                });
            }
            packed.extend_from_slice(row);
        }
        Ok(Self {
            size: rows.len(),
            packed,
            rhs,
        })
    }

    /// Dimension `N + 1`.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Entries `A_{i,1..=i}` of row `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.packed[row_start(i)..row_start(i + 1)]
    }

    /// `A_{i,j}`, zero above the diagonal.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.packed[row_start(i) + j - 1]
        }
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    /// `A x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (1..=self.size)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Assembles the dense exact system.
pub fn assemble_dense(problem: &Problem, grid: &Grid) -> Result<DenseLowerSystem> {
    let rhs = assemble_rhs(problem, grid)?;
    let rows = RowCoefficients::new(problem, grid);
    let packed = assemble_packed(&rows)?;
    Ok(DenseLowerSystem {
        size: grid.system_size(),
        packed,
        rhs,
    })
}

pub(crate) fn assemble_packed(rows: &RowCoefficients) -> Result<Vec<f64>> {
    let size = rows.len();
    let total = size
        .checked_mul(size + 1)
        .map(|t| t / 2)
        .ok_or_else(|| Error::Resource(format!("dense system of size {size} overflows")))?;
    let mut packed: Vec<f64> = Vec::new();
    packed.try_reserve_exact(total).map_err(|e| {
        Error::Resource(format!(
            "cannot allocate {:.1} GiB for the dense system of size {size}: {e}",
            (total * 8) as f64 / (1u64 << 30) as f64
        ))
    })?;
    packed.resize(total, 0.0);

    let mut slices = Vec::with_capacity(size);
    let mut rest = packed.as_mut_slice();
    for i in 1..=size {
        let (row, tail) = rest.split_at_mut(i);
        slices.push(row);
        rest = tail;
    }
    slices.into_par_iter().enumerate().for_each(|(r, row)| {
        fill_exact_row(rows, r + 1, 1, row);
    });
    Ok(packed)
}

/// Writes `A_{i, col_lo..=i}` into `out` (length `i - col_lo + 1`).
pub(crate) fn fill_exact_row(rows: &RowCoefficients, i: usize, col_lo: usize, out: &mut [f64]) {
    let scale = rows.scale(i);
    let exponent = 3.0 - rows.alpha(i);
    let max_lag = i - col_lo;
    debug_assert_eq!(out.len(), max_lag + 1);
    // powers m^e for m = 0..=max_lag+1
    let mut below = 0.0;
    let mut at = pow0(1.0, exponent);
    for lag in 1..=max_lag {
        let above = pow0((lag + 1) as f64, exponent);
        out[max_lag - lag] = scale * combine(below, at, above);
        below = at;
        at = above;
    }
    out[max_lag] = 1.0 + scale;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gamma_fn, make_grid};

    fn constant_order(alpha: f64, d: f64, f: f64) -> Problem {
        Problem::new(move |_| alpha, move |_| d, move |_| f, alpha, alpha).unwrap()
    }

    #[test]
    fn t_exact_examples() {
        let t = t_exact(1, 1.5).unwrap();
        assert!((t - (2f64.powf(1.5) - 2.0)).abs() < 1e-15);
        assert!((t - 0.828_427_124_7).abs() < 1e-10);
        assert!(t_exact(1, 2.0 - 1e-12).unwrap().abs() < 1e-10);
        assert!(t_exact(0, 1.5).is_err());
    }

    #[test]
    fn t_exact_lag_ten_matches_extended_precision() {
        // second difference of m^1.6 at m = 10, 30-digit evaluation
        let want = 0.382_361_722_930_419_58;
        let got = t_exact(10, 1.4).unwrap();
        assert!((got - want).abs() < 1e-13, "{got}");
    }

    #[test]
    fn telescoping_sum() {
        for alpha in [1.05, 1.3, 1.5, 1.77, 1.95] {
            let e = 3.0 - alpha;
            let mut acc = 0.0;
            for m in 1..=300usize {
                acc += t_exact(m, alpha).unwrap();
                let closed = ((m + 1) as f64).powf(e) - (m as f64).powf(e) - 1.0;
                assert!((acc - closed).abs() <= 1e-10 * closed.abs().max(1.0));
            }
        }
    }

    #[test]
    fn t_exact_positive() {
        for alpha in [1.01, 1.2, 1.5, 1.9, 1.99] {
            for lag in [1, 2, 3, 10, 100, 1000, 10_000] {
                assert!(t_exact(lag, alpha).unwrap() > 0.0, "lag {lag} alpha {alpha}");
            }
        }
    }

    #[test]
    fn entries_with_unit_diffusivity() {
        let grid = make_grid(255).unwrap();
        let p = constant_order(1.5, 1.0, 0.0);
        let g25 = gamma_fn(2.5).unwrap();
        let diag = exact_entry(7, 7, &p, &grid).unwrap();
        assert!((diag - (1.0 + 0.0625 / g25)).abs() < 1e-14);
        assert!((diag - 1.047_015_8).abs() < 1e-7);
        let sub = exact_entry(7, 6, &p, &grid).unwrap();
        let want = 0.0625 / g25 * (2f64.powf(1.5) - 2.0);
        assert!((sub - want).abs() < 1e-15);
        assert!((sub - 0.038_949_2).abs() < 1e-7);
        assert!(exact_entry(3, 4, &p, &grid).is_err());
    }

    #[test]
    fn zero_diffusivity_gives_identity() {
        let grid = make_grid(9).unwrap();
        let p = constant_order(1.3, 0.0, 2.0);
        let sys = assemble_dense(&p, &grid).unwrap();
        for i in 1..=10 {
            for j in 1..=10 {
                assert_eq!(sys.entry(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
        assert!(sys.rhs().iter().all(|&f| f == -2.0));
    }

    #[test]
    fn dense_matches_scalar_loop() {
        let grid = make_grid(3).unwrap();
        let p = constant_order(1.5, 1.0, 0.0);
        let sys = assemble_dense(&p, &grid).unwrap();
        let h: f64 = 0.25;
        let c = h.sqrt() / gamma_fn(2.5).unwrap();
        for i in 1..=4usize {
            for j in 1..=4usize {
                let want = if j > i {
                    0.0
                } else if i == j {
                    1.0 + c
                } else {
                    let m = (i - j) as f64;
                    let t = (m - 1.0).powf(1.5) - 2.0 * m.powf(1.5) + (m + 1.0).powf(1.5);
                    c * t
                };
                assert!((sys.entry(i, j) - want).abs() < 1e-15, "({i},{j})");
            }
        }
    }

    #[test]
    fn dense_rows_match_exact_entry_bitwise() {
        let grid = make_grid(40).unwrap();
        let p = Problem::new(
            |x| 1.2 + 0.5 * x * x,
            |x| 1.0 + x,
            |x| x.sin(),
            1.2,
            1.7,
        )
        .unwrap();
        let sys = assemble_dense(&p, &grid).unwrap();
        for i in 1..=41 {
            for j in 1..=i {
                let e = exact_entry(i, j, &p, &grid).unwrap();
                assert_eq!(sys.entry(i, j).to_bits(), e.to_bits(), "({i},{j})");
            }
            assert!(sys.entry(i, i) >= 1.0);
        }
    }

    #[test]
    fn row_locality_of_order() {
        let grid = make_grid(20).unwrap();
        let a = Problem::new(|x| 1.3 + 0.3 * x, |_| 1.0, |_| 0.0, 1.3, 1.6).unwrap();
        let x7 = grid.x(7);
        let b = Problem::new(
            move |x| if x == x7 { 1.3 + 0.3 * x } else { 1.45 },
            |_| 1.0,
            |_| 0.0,
            1.3,
            1.6,
        )
        .unwrap();
        for j in 1..=7 {
            assert_eq!(
                exact_entry(7, j, &a, &grid).unwrap(),
                exact_entry(7, j, &b, &grid).unwrap()
            );
        }
    }

    #[test]
    fn rhs_examples() {
        let grid = make_grid(1).unwrap();
        let p = constant_order(1.5, 1.0, -1.0);
        let rhs = assemble_rhs(&p, &grid).unwrap();
        let g15 = gamma_fn(1.5).unwrap();
        let g25 = gamma_fn(2.5).unwrap();
        let want = 1.0 - (0.5f64.sqrt() / g15 + (0.0 - 0.5f64.powf(1.5)) / (0.5 * g25));
        assert!((rhs[0] - want).abs() < 1e-15);

        let grid = make_grid(15).unwrap();
        let p = Problem::new(|_| 1.4, |_| 0.0, |x| 3.0 + x, 1.4, 1.4).unwrap();
        let rhs = assemble_rhs(&p, &grid).unwrap();
        for (n, f) in rhs.iter().enumerate() {
            assert_eq!(*f, -(3.0 + grid.x(n + 1)));
        }
    }

    #[test]
    fn row_sums_stay_bounded() {
        // sum_j |A_ij| - 1 = scale_i * (i^e - (i-1)^e) <= e * x_i^{2-alpha} / Gamma(4-alpha),
        // independent of the grid
        for log_n in 6..=10 {
            let n = 1usize << log_n;
            let grid = make_grid(n).unwrap();
            let p = Problem::new(|x| 1.2 + 0.4 * x, |_| 1.0, |_| 0.0, 1.2, 1.6).unwrap();
            let sys = assemble_dense(&p, &grid).unwrap();
            for i in 1..=n + 1 {
                let a = p.alpha(grid.x(i));
                let e = 3.0 - a;
                let excess = sys.row(i).iter().map(|v| v.abs()).sum::<f64>() - 1.0;
                let scale = grid.h().powf(2.0 - a) / gamma_fn(4.0 - a).unwrap();
                let closed = scale * ((i as f64).powf(e) - ((i - 1) as f64).powf(e));
                assert!((excess - closed).abs() <= 1e-11 * closed.max(1.0), "n={n} i={i}");
                assert!(excess <= e / gamma_fn(4.0 - a).unwrap() + 1e-12);
            }
        }
    }
}
