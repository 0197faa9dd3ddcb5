//! Structured approximation of the stiffness matrix.
//!
//! For lags `m = i - j` beyond the exact band, the off-diagonal factor
//! `t(m, alpha_i)` is replaced by the truncated double expansion
//!
//! ```text
//! 2 m^{3-abar} * sum_{p=0}^{s} (abar - alpha_i)^p ln^p(m) / p!
//!              * sum_{q=1}^{k} binom(3 - alpha_i, 2q) m^{-2q}
//! ```
//!
//! which separates into `sum_{p,q} K^{p,q}(i) g^{p,q}(m)`: a row scaling times
//! a lag-only generator. Every off-diagonal block of the solver is therefore a
//! sum of diagonal-times-Toeplitz matrices, applied with FFTs, plus an exact
//! correction on the lags `1..=band` near its top-right corner.

mod toeplitz;

pub use toeplitz::{
    apply_generator, embedding_len, toeplitz_matvec, toeplitz_matvec_naive, FftPlans,
};

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use realfft::num_complex::Complex64;

use crate::assembly::{combine, RowCoefficients};
use crate::error::{Error, Result};
use crate::model::{binom_real, pow0, ApproxParams, Grid, Problem};

/// Lag-only generators `g^{p,q}(m)` and row scalings `K^{p,q}(i)`.
#[derive(Debug, Clone)]
pub struct StructuredTables {
    s: usize,
    k: usize,
    alpha_bar: f64,
    size: usize,
    /// layer-major: `generators[layer * size + (m - 1)]`
    generators: Vec<f64>,
    /// layer-major: `scalings[layer * size + (i - 1)]`
    scalings: Vec<f64>,
    rows: RowCoefficients,
}

/// Layer index of `(p, q)`, `q` counted from 1.
#[inline]
fn layer(p: usize, q: usize, k: usize) -> usize {
    p * k + (q - 1)
}

impl StructuredTables {
    /// Precomputes the tables for lags and rows `1..=N+1`.
    pub fn new(problem: &Problem, grid: &Grid, params: &ApproxParams) -> Self {
        let rows = RowCoefficients::new(problem, grid);
        Self::from_rows(rows, problem.alpha_bar(), params)
    }

    pub fn from_rows(rows: RowCoefficients, alpha_bar: f64, params: &ApproxParams) -> Self {
        let (s, k) = (params.s, params.k);
        let size = rows.len();
        let layers = (s + 1) * k;

        let mut generators = vec![0.0; layers * size];
        for m in 1..=size {
            let mf = m as f64;
            let ln = mf.ln();
            for q in 1..=k {
                let power = mf.powf(3.0 - alpha_bar - 2.0 * q as f64);
                let mut ln_p = 1.0;
                for p in 0..=s {
                    generators[layer(p, q, k) * size + m - 1] = ln_p * power;
                    ln_p *= ln;
                }
            }
        }

        let mut scalings = vec![0.0; layers * size];
        for i in 1..=size {
            let alpha = rows.alpha(i);
            let lead = 2.0 * rows.scale(i);
            let delta = alpha_bar - alpha;
            for q in 1..=k {
                let b = binom_real(3.0 - alpha, 2 * q);
                let mut taylor = 1.0;
                for p in 0..=s {
                    scalings[layer(p, q, k) * size + i - 1] = lead * taylor * b;
                    taylor *= delta / (p + 1) as f64;
                }
            }
        }

        Self {
            s,
            k,
            alpha_bar,
            size,
            generators,
            scalings,
            rows,
        }
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn alpha_bar(&self) -> f64 {
        self.alpha_bar
    }

    pub fn layers(&self) -> usize {
        (self.s + 1) * self.k
    }

    /// System size `N + 1`.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn rows(&self) -> &RowCoefficients {
        &self.rows
    }

    /// `g^{p,q}(m)`, `1 <= m <= N+1`.
    pub fn generator(&self, p: usize, q: usize, m: usize) -> f64 {
        self.generators[layer(p, q, self.k) * self.size + m - 1]
    }

    /// `K^{p,q}(i)`, `1 <= i <= N+1`.
    pub fn scaling(&self, p: usize, q: usize, i: usize) -> f64 {
        self.scalings[layer(p, q, self.k) * self.size + i - 1]
    }

    fn generator_layer(&self, l: usize) -> &[f64] {
        &self.generators[l * self.size..(l + 1) * self.size]
    }

    fn scaling_layer(&self, l: usize) -> &[f64] {
        &self.scalings[l * self.size..(l + 1) * self.size]
    }

    /// Approximated entry `sum_{p,q} K^{p,q}(i) g^{p,q}(i - j)` for `j < i`.
    pub fn approx_entry(&self, i: usize, j: usize) -> f64 {
        let lag = i - j;
        (0..self.layers())
            .map(|l| self.scaling_layer(l)[i - 1] * self.generator_layer(l)[lag - 1])
            .sum()
    }
}

/// `max |A~_{ij} - A_{ij}|` over all entries with lag greater than `band`.
pub fn max_entry_error(tables: &StructuredTables, band: usize) -> f64 {
    let size = tables.size();
    (band + 1..size)
        .into_par_iter()
        .map(|lag| lag_entry_error(tables, lag))
        .reduce(|| 0.0, f64::max)
}

/// `max_i |A~_{i,i-lag} - A_{i,i-lag}|`.
pub fn lag_entry_error(tables: &StructuredTables, lag: usize) -> f64 {
    let rows = tables.rows();
    (lag + 1..=tables.size())
        .map(|i| (tables.approx_entry(i, i - lag) - rows.entry(i, i - lag)).abs())
        .fold(0.0, f64::max)
}

/// Shorthand for [`StructuredTables::new`].
pub fn precompute_tables(problem: &Problem, grid: &Grid, params: &ApproxParams) -> StructuredTables {
    StructuredTables::new(problem, grid, params)
}

/// Truncated expansion of `t(lag, alpha_i)` about `alpha_bar`.
pub fn t_approx(lag: usize, alpha_i: f64, alpha_bar: f64, s: usize, k: usize) -> f64 {
    let m = lag as f64;
    let ln = m.ln();
    let delta = alpha_bar - alpha_i;
    let mut log_series = 0.0;
    let mut term = 1.0;
    for p in 0..=s {
        log_series += term;
        term *= delta * ln / (p + 1) as f64;
    }
    let binom_series: f64 = (1..=k)
        .map(|q| binom_real(3.0 - alpha_i, 2 * q) * m.powi(-2 * q as i32))
        .sum();
    2.0 * m.powf(3.0 - alpha_bar) * log_series * binom_series
}

/// Bound on the local truncation error of [`t_approx`] without its generic
/// constant. Only meaningful for relative comparisons.
pub fn truncation_surrogate(lag: usize, alpha_i: f64, alpha_bar: f64, s: usize, k: usize) -> f64 {
    let m = lag as f64;
    let sp1 = (s + 1) as f64;
    let log_part = sp1.powf(-0.5)
        * m.powf(-(alpha_bar - 1.0))
        * (std::f64::consts::E * m.ln() / (2.0 * sp1)).powf(sp1);
    let kk = (2 * k) as f64;
    let binom_part = if lag == 1 {
        kk.powf(-(4.0 - alpha_i))
    } else {
        kk.powf(-(4.0 - alpha_i)) * (m - 1.0).powf(-(2.0 * k as f64 + alpha_i - 1.0))
    };
    log_part + binom_part
}

/// Rows `[row_lo, row_hi)` and columns `[col_lo, col_hi)` of a strictly
/// lower off-diagonal block, in global indices, with `col_hi == row_lo`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockSpec {
    pub row_lo: usize,
    pub row_hi: usize,
    pub col_lo: usize,
    pub col_hi: usize,
}

impl BlockSpec {
    pub fn new(row_lo: usize, row_hi: usize, col_lo: usize, col_hi: usize) -> Result<Self> {
        let spec = Self {
            row_lo,
            row_hi,
            col_lo,
            col_hi,
        };
        if col_lo == 0 || col_lo >= col_hi || row_lo >= row_hi || col_hi != row_lo {
            return Err(Error::invalid(format!(
                "block {spec:?} is not a contiguous strictly-lower block"
            )));
        }
        Ok(spec)
    }

    pub fn rows(&self) -> usize {
        self.row_hi - self.row_lo
    }

    pub fn cols(&self) -> usize {
        self.col_hi - self.col_lo
    }

    /// Largest lag in the block.
    pub fn max_lag(&self) -> usize {
        self.row_hi - 1 - self.col_lo
    }
}

/// One exact entry evaluated by the band correction.
pub type EntryTap = (usize, usize, f64);

/// Spectra of the band-truncated generators for one block shape.
type LayerSpectra = Arc<Vec<Vec<Complex64>>>;

/// Number of chunks the layer sum is split into; fixed so that the
/// floating-point reduction order does not depend on the thread count.
const LAYER_CHUNKS: usize = 4;

/// Applies off-diagonal blocks of the approximated matrix.
///
/// Holds the tables, FFT plans, and a cache of generator spectra keyed by
/// block shape (the generator of a block only depends on its shape because
/// its smallest lag is always 1).
pub struct BlockOperator<'a> {
    tables: &'a StructuredTables,
    band: usize,
    plans: FftPlans,
    spectra: Mutex<HashMap<(usize, usize), LayerSpectra>>,
}

impl<'a> BlockOperator<'a> {
    pub fn new(tables: &'a StructuredTables, band: usize) -> Self {
        Self {
            tables,
            band,
            plans: FftPlans::new(),
            spectra: Mutex::new(HashMap::new()),
        }
    }

    pub fn tables(&self) -> &StructuredTables {
        self.tables
    }

    pub fn band(&self) -> usize {
        self.band
    }

    fn check(&self, spec: &BlockSpec, x: &[f64]) -> Result<()> {
        if spec.row_hi > self.tables.size() + 1 {
            return Err(Error::invalid(format!(
                "block {spec:?} exceeds the system size {}",
                self.tables.size()
            )));
        }
        if x.len() != spec.cols() {
            return Err(Error::DimensionMismatch {
                expected: spec.cols(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// `(Gamma_hat + Psi) x` for the block.
    pub fn apply(&self, spec: &BlockSpec, x: &[f64]) -> Result<Vec<f64>> {
        self.apply_traced(spec, x, None)
    }

    /// Like [`apply`](Self::apply), optionally recording every exact entry used.
    pub fn apply_traced(
        &self,
        spec: &BlockSpec,
        x: &[f64],
        taps: Option<&mut Vec<EntryTap>>,
    ) -> Result<Vec<f64>> {
        self.check(spec, x)?;
        let mut y = if spec.max_lag() > self.band {
            self.apply_structured(spec, x)
        } else {
            vec![0.0; spec.rows()]
        };
        self.apply_band(spec, x, &mut y, taps);
        Ok(y)
    }

    /// `Gamma_hat x`: entries with lag > band from the tables, zero otherwise.
    fn apply_structured(&self, spec: &BlockSpec, x: &[f64]) -> Vec<f64> {
        let (rows, cols) = (spec.rows(), spec.cols());
        let fft_len = embedding_len(rows, cols);
        let spectra = self.layer_spectra(rows, cols, fft_len);
        let xs = self.plans.spectrum(x, fft_len);
        let norm = 1.0 / fft_len as f64;
        let layers = self.tables.layers();
        let chunk = layers.div_ceil(LAYER_CHUNKS).max(1);

        let partials: Vec<Vec<f64>> = (0..layers)
            .collect::<Vec<_>>()
            .par_chunks(chunk)
            .map(|ls| {
                let mut acc = vec![0.0; rows];
                let mut prod = vec![Complex64::default(); xs.len()];
                let mut full = vec![0.0; fft_len];
                for &l in ls {
                    for ((p, g), v) in prod.iter_mut().zip(&spectra[l]).zip(&xs) {
                        *p = g * v;
                    }
                    self.plans.inverse_into(&mut prod, &mut full);
                    let scaling = &self.tables.scaling_layer(l)[spec.row_lo - 1..spec.row_hi - 1];
                    for ((a, kk), c) in acc.iter_mut().zip(scaling).zip(&full[cols - 1..]) {
                        *a += kk * c;
                    }
                }
                acc
            })
            .collect();

        let mut y = vec![0.0; rows];
        for part in partials {
            for (a, b) in y.iter_mut().zip(part) {
                *a += b * norm;
            }
        }
        y
    }

    fn layer_spectra(&self, rows: usize, cols: usize, fft_len: usize) -> LayerSpectra {
        if let Some(s) = self
            .spectra
            .lock()
            .expect("spectrum cache poisoned")
            .get(&(rows, cols))
        {
            return s.clone();
        }
        // generator[t] holds lag t + 1
        let glen = rows + cols - 1;
        let band = self.band.min(glen);
        let computed: Vec<Vec<Complex64>> = (0..self.tables.layers())
            .into_par_iter()
            .map(|l| {
                let mut g = vec![0.0; glen];
                g[band..].copy_from_slice(&self.tables.generator_layer(l)[band..glen]);
                self.plans.spectrum(&g, fft_len)
            })
            .collect();
        let computed = Arc::new(computed);
        self.spectra
            .lock()
            .expect("spectrum cache poisoned")
            .insert((rows, cols), computed.clone());
        computed
    }

    /// `Psi x`: exact entries with lag `<= band`, evaluated on the fly.
    fn apply_band(
        &self,
        spec: &BlockSpec,
        x: &[f64],
        y: &mut [f64],
        mut taps: Option<&mut Vec<EntryTap>>,
    ) {
        let rows = self.tables.rows();
        for i in spec.row_lo..spec.row_hi {
            let lag_lo = i - (spec.col_hi - 1);
            if lag_lo > self.band {
                break;
            }
            let lag_hi = self.band.min(i - spec.col_lo);
            let scale = rows.scale(i);
            let e = 3.0 - rows.alpha(i);
            let mut below = pow0((lag_lo - 1) as f64, e);
            let mut at = pow0(lag_lo as f64, e);
            let mut acc = 0.0;
            for lag in lag_lo..=lag_hi {
                let above = pow0((lag + 1) as f64, e);
                let entry = scale * combine(below, at, above);
                let j = i - lag;
                acc += entry * x[j - spec.col_lo];
                if let Some(t) = taps.as_deref_mut() {
                    t.push((i, j, entry));
                }
                below = at;
                at = above;
            }
            y[i - spec.row_lo] += acc;
        }
    }
}

/// `(Gamma_hat + Psi) x` for a single block.
pub fn block_matvec(
    spec: &BlockSpec,
    tables: &StructuredTables,
    params: &ApproxParams,
    x: &[f64],
) -> Result<Vec<f64>> {
    BlockOperator::new(tables, params.band).apply(spec, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{exact_entry, t_exact};
    use crate::model::make_grid;

    fn varying(d: f64) -> Problem {
        Problem::new(
            |x| 1.2 + 0.4 * x,
            move |_| d,
            |_| 0.0,
            1.2,
            1.6,
        )
        .unwrap()
    }

    #[test]
    fn constant_order_keeps_only_first_layer() {
        let grid = make_grid(31).unwrap();
        let p = Problem::new(|_| 1.4, |_| 1.0, |_| 0.0, 1.4, 1.4).unwrap();
        let params = ApproxParams::new(5, 2, 3, 8).unwrap();
        let t = precompute_tables(&p, &grid, &params);
        for i in 1..=32 {
            for q in 1..=2 {
                assert_ne!(t.scaling(0, q, i), 0.0);
                for pp in 1..=5 {
                    assert_eq!(t.scaling(pp, q, i), 0.0);
                }
            }
        }
    }

    #[test]
    fn generator_values() {
        let grid = make_grid(31).unwrap();
        let p = Problem::new(|_| 1.4, |_| 1.0, |_| 0.0, 1.4, 1.4).unwrap();
        let params = ApproxParams::new(3, 3, 3, 8).unwrap();
        let t = precompute_tables(&p, &grid, &params);
        assert!((t.generator(0, 1, 10) - 10f64.powf(-0.4)).abs() < 1e-15);
        assert!((t.generator(0, 1, 10) - 0.398_107).abs() < 1e-6);
        for q in 1..=3 {
            assert_eq!(t.generator(0, q, 1), 1.0);
            for pp in 1..=3 {
                assert_eq!(t.generator(pp, q, 1), 0.0);
            }
        }
        for pp in 0..=3 {
            for m in 2..=32 {
                assert!(t.generator(pp, 2, m).abs() < t.generator(pp, 1, m).abs());
                assert!(t.generator(pp, 3, m).abs() < t.generator(pp, 2, m).abs());
            }
        }
    }

    #[test]
    fn zero_diffusivity_zeroes_scalings() {
        let grid = make_grid(15).unwrap();
        let t = precompute_tables(&varying(0.0), &grid, &ApproxParams::new(4, 2, 2, 4).unwrap());
        for l in 0..t.layers() {
            assert!(t.scaling_layer(l).iter().all(|&k| k == 0.0));
        }
    }

    #[test]
    fn t_approx_examples() {
        let lag1 = t_approx(1, 1.5, 1.4, 6, 2);
        assert!((lag1 - 0.796_875).abs() < 1e-15);
        assert!((lag1 - t_exact(1, 1.5).unwrap()).abs() > 0.01);

        for s in [0, 3, 9] {
            assert_eq!(t_approx(17, 1.4, 1.4, s, 2), t_approx(17, 1.4, 1.4, 0, 2));
        }

        let exact = t_exact(100, 1.4).unwrap();
        let rel = (t_approx(100, 1.4, 1.4, 4, 2) - exact).abs() / exact;
        assert!(rel < 1e-6, "{rel}");
    }

    #[test]
    fn tables_agree_with_direct_formula() {
        let grid = make_grid(200).unwrap();
        let p = varying(1.0);
        let params = ApproxParams::new(8, 3, 4, 16).unwrap();
        let t = precompute_tables(&p, &grid, &params);
        for i in (2..=201).step_by(7) {
            for j in 1..i {
                let via_tables = t.approx_entry(i, j);
                let a = p.alpha(grid.x(i));
                let direct = t.rows().scale(i) * t_approx(i - j, a, 1.4, 8, 3);
                assert!(
                    (via_tables - direct).abs() <= 1e-13 * direct.abs(),
                    "({i},{j}) {via_tables} vs {direct}"
                );
            }
        }
    }

    #[test]
    fn surrogate_examples() {
        let first = truncation_surrogate(1, 1.5, 1.4, 5, 2);
        // ln 1 = 0 removes the log term
        assert!((first - 0.031_25).abs() < 1e-15);
        for lag in [3, 10, 50] {
            let mut prev = f64::INFINITY;
            for s in 8..16 {
                let v = truncation_surrogate(lag, 1.5, 1.4, s, 2);
                assert!(v < prev);
                prev = v;
            }
        }
        for lag in [2, 5, 40] {
            let mut prev = f64::INFINITY;
            for k in 1..6 {
                let v = truncation_surrogate(lag, 1.5, 1.4, 10, k);
                assert!(v < prev);
                prev = v;
            }
        }
    }

    fn dense_block(p: &Problem, grid: &Grid, spec: &BlockSpec, x: &[f64]) -> Vec<f64> {
        (spec.row_lo..spec.row_hi)
            .map(|i| {
                (spec.col_lo..spec.col_hi)
                    .map(|j| exact_entry(i, j, p, grid).unwrap() * x[j - spec.col_lo])
                    .sum()
            })
            .collect()
    }

    #[test]
    fn full_band_gives_exact_block() {
        let grid = make_grid(100).unwrap();
        let p = varying(1.0);
        let spec = BlockSpec::new(41, 71, 11, 41).unwrap();
        let params = ApproxParams::new(3, 2, 60, 64).unwrap();
        let t = precompute_tables(&p, &grid, &params);
        let x: Vec<f64> = (0..30).map(|b| ((b * 7) % 11) as f64 / 11.0 - 0.4).collect();
        let y = block_matvec(&spec, &t, &params, &x).unwrap();
        let want = dense_block(&p, &grid, &spec, &x);
        for (a, b) in y.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0));
        }
    }

    #[test]
    fn zero_diffusivity_block_is_zero() {
        let grid = make_grid(100).unwrap();
        let p = varying(0.0);
        let spec = BlockSpec::new(33, 65, 1, 33).unwrap();
        let params = ApproxParams::defaults_for(100);
        let t = precompute_tables(&p, &grid, &params);
        let y = block_matvec(&spec, &t, &params, &[1.0; 32]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn approximated_block_within_entry_error_bound() {
        let grid = make_grid(256).unwrap();
        let p = varying(1.0);
        let params = ApproxParams::defaults_for(256);
        let t = precompute_tables(&p, &grid, &params);
        let spec = BlockSpec::new(129, 193, 65, 129).unwrap();
        let x: Vec<f64> = (0..64).map(|b| (b as f64 * 0.37).sin()).collect();
        let y = block_matvec(&spec, &t, &params, &x).unwrap();
        let want = dense_block(&p, &grid, &spec, &x);
        let xmax = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in spec.row_lo..spec.row_hi {
            let a = p.alpha(grid.x(i));
            let bound: f64 = (spec.col_lo..spec.col_hi)
                .filter(|&j| i - j > params.band)
                .map(|j| {
                    t.rows().scale(i)
                        * (t_exact(i - j, a).unwrap() - t_approx(i - j, a, 1.4, params.s, params.k))
                            .abs()
                })
                .sum::<f64>()
                * xmax;
            let r = i - spec.row_lo;
            assert!(
                (y[r] - want[r]).abs() <= bound * (1.0 + 1e-6) + 1e-14,
                "row {i}: {} > {bound}",
                (y[r] - want[r]).abs()
            );
        }
    }

    #[test]
    fn band_taps_match_exact_entries() {
        let grid = make_grid(128).unwrap();
        let p = varying(1.0);
        let params = ApproxParams::new(6, 2, 9, 16).unwrap();
        let t = precompute_tables(&p, &grid, &params);
        let op = BlockOperator::new(&t, params.band);
        let spec = BlockSpec::new(50, 90, 20, 50).unwrap();
        let mut taps = Vec::new();
        op.apply_traced(&spec, &[1.0; 30], Some(&mut taps)).unwrap();
        assert_eq!(taps.len(), 9 * 10 / 2);
        for (i, j, v) in taps {
            assert!(i - j <= 9);
            assert_eq!(v.to_bits(), exact_entry(i, j, &p, &grid).unwrap().to_bits());
        }
    }

    #[test]
    fn rejects_bad_blocks() {
        assert!(BlockSpec::new(10, 20, 1, 9).is_err());
        assert!(BlockSpec::new(10, 10, 1, 10).is_err());
        assert!(BlockSpec::new(10, 20, 0, 10).is_err());
        let grid = make_grid(20).unwrap();
        let params = ApproxParams::defaults_for(20);
        let t = precompute_tables(&varying(1.0), &grid, &params);
        let spec = BlockSpec::new(10, 20, 1, 10).unwrap();
        assert!(block_matvec(&spec, &t, &params, &[0.0; 8]).is_err());
        let spec = BlockSpec::new(10, 30, 1, 10).unwrap();
        assert!(block_matvec(&spec, &t, &params, &[0.0; 9]).is_err());
    }
}
