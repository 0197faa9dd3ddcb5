//! Toeplitz matrix-vector products through circulant embedding and real FFTs.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use realfft::num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use crate::error::{Error, Result};

/// Thread-safe cache of forward/inverse real FFT plans keyed by length.
pub struct FftPlans {
    planner: Mutex<RealFftPlanner<f64>>,
    forward: Mutex<HashMap<usize, Arc<dyn RealToComplex<f64>>>>,
    inverse: Mutex<HashMap<usize, Arc<dyn ComplexToReal<f64>>>>,
}

impl Default for FftPlans {
    fn default() -> Self {
        Self::new()
    }
}

impl FftPlans {
    pub fn new() -> Self {
        Self {
            planner: Mutex::new(RealFftPlanner::new()),
            forward: Mutex::new(HashMap::new()),
            inverse: Mutex::new(HashMap::new()),
        }
    }

    pub fn forward(&self, len: usize) -> Arc<dyn RealToComplex<f64>> {
        let mut cache = self.forward.lock().expect("fft plan cache poisoned");
        cache
            .entry(len)
            .or_insert_with(|| {
                self.planner
                    .lock()
                    .expect("fft planner poisoned")
                    .plan_fft_forward(len)
            })
            .clone()
    }

    pub fn inverse(&self, len: usize) -> Arc<dyn ComplexToReal<f64>> {
        let mut cache = self.inverse.lock().expect("fft plan cache poisoned");
        cache
            .entry(len)
            .or_insert_with(|| {
                self.planner
                    .lock()
                    .expect("fft planner poisoned")
                    .plan_fft_inverse(len)
            })
            .clone()
    }

    /// Spectrum of `data` zero-padded to `len`.
    pub fn spectrum(&self, data: &[f64], len: usize) -> Vec<Complex64> {
        debug_assert!(data.len() <= len);
        let plan = self.forward(len);
        let mut input = vec![0.0; len];
        input[..data.len()].copy_from_slice(data);
        let mut out = plan.make_output_vec();
        plan.process(&mut input, &mut out)
            .expect("forward fft buffer lengths are consistent");
        out
    }

    /// Inverse transform of a product spectrum into `out` (unnormalized,
    /// length `len`). `spectrum` is used as scratch.
    pub fn inverse_into(&self, spectrum: &mut [Complex64], out: &mut [f64]) {
        let len = out.len();
        spectrum[0].im = 0.0;
        if len % 2 == 0 {
            spectrum[len / 2].im = 0.0;
        }
        self.inverse(len)
            .process(spectrum, out)
            .expect("inverse fft buffer lengths are consistent");
    }
}

/// FFT length used for a rectangular Toeplitz block with `rows` rows and
/// `cols` columns: the next power of two holding the `rows + cols - 1` generator.
pub fn embedding_len(rows: usize, cols: usize) -> usize {
    (rows + cols - 1).next_power_of_two().max(2)
}

/// `y = T x` for the `rows x cols` Toeplitz matrix with
/// `T[a][b] = generator[a - b + cols - 1]`.
///
/// The generator lists the matrix diagonals from the top-right corner
/// (`generator[0] = T[0][cols-1]`) to the bottom-left one.
pub fn apply_generator(
    plans: &FftPlans,
    generator: &[f64],
    rows: usize,
    x: &[f64],
    fft_len: usize,
) -> Vec<f64> {
    let cols = x.len();
    debug_assert_eq!(generator.len(), rows + cols - 1);
    debug_assert!(fft_len >= rows + cols - 1);
    let xs = plans.spectrum(x, fft_len);
    let mut prod = plans.spectrum(generator, fft_len);
    for (g, v) in prod.iter_mut().zip(&xs) {
        *g *= v;
    }
    let mut full = vec![0.0; fft_len];
    plans.inverse_into(&mut prod, &mut full);
    let norm = 1.0 / fft_len as f64;
    full[cols - 1..cols - 1 + rows]
        .iter()
        .map(|v| v * norm)
        .collect()
}

/// `T x` for the square Toeplitz matrix with the given first column and first row.
///
/// Uses a circulant embedding of length `next_pow2(2M)`.
pub fn toeplitz_matvec(first_col: &[f64], first_row: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let m = first_col.len();
    if m == 0 {
        return Err(Error::invalid("empty Toeplitz matrix"));
    }
    if first_row.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: first_row.len(),
        });
    }
    if x.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: x.len(),
        });
    }
    if first_col[0] != first_row[0] {
        return Err(Error::invalid(format!(
            "first column starts with {} but first row starts with {}",
            first_col[0], first_row[0]
        )));
    }
    // generator[t] = T[a][b] with a - b = t - (m - 1)
    let generator: Vec<f64> = first_row
        .iter()
        .rev()
        .chain(first_col.iter().skip(1))
        .copied()
        .collect();
    let plans = FftPlans::new();
    Ok(apply_generator(
        &plans,
        &generator,
        m,
        x,
        (2 * m).next_power_of_two(),
    ))
}

/// Reference `O(M^2)` product, used by tests and small problems.
pub fn toeplitz_matvec_naive(first_col: &[f64], first_row: &[f64], x: &[f64]) -> Vec<f64> {
    let m = first_col.len();
    (0..m)
        .map(|a| {
            (0..m)
                .map(|b| {
                    let t = if a >= b { first_col[a - b] } else { first_row[b - a] };
                    t * x[b]
                })
                .sum()
        })
        .collect()
}
