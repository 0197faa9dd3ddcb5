//! Problem data, the uniform grid, approximation parameters and the scalar
//! special functions shared by every other module.
//!
//! The model problem is the one-sided variable-order equation
//!
//! ```text
//! -u''(x) - d(x) D^{alpha(x)} u(x) = f(x),   x in (0, 1),   u(0) = u(1) = 0,
//! ```
//!
//! with the variable-order Caputo derivative
//! `D^{a(x)} g(x) = 1/Gamma(2 - a(x)) * int_0^x g''(s) (x - s)^{1 - a(x)} ds`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// A real coefficient function on `[0, 1]`.
pub type Coefficient = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A source term whose evaluation may fail (for instance when it is defined
/// through a quadrature that can miss its tolerance).
pub type Source = Arc<dyn Fn(f64) -> Result<f64> + Send + Sync>;

/// Number of points used to validate coefficient ranges at construction.
const VALIDATION_SAMPLES: usize = 257;

/// Slack allowed when checking sampled orders against the declared extrema.
const ORDER_BOUND_SLACK: f64 = 1e-12;

/// The continuous problem: variable order `alpha`, diffusivity `d` and source `f`.
#[derive(Clone)]
pub struct Problem {
    alpha: Coefficient,
    d: Coefficient,
    f: Source,
    alpha_min: f64,
    alpha_max: f64,
    alpha_bar: f64,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("alpha_min", &self.alpha_min)
            .field("alpha_max", &self.alpha_max)
            .field("alpha_bar", &self.alpha_bar)
            .finish_non_exhaustive()
    }
}

impl Problem {
    /// Builds a problem with known order extrema.
    pub fn new<A, D, F>(alpha: A, d: D, f: F, alpha_min: f64, alpha_max: f64) -> Result<Self>
    where
        A: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::with_source(
            Arc::new(alpha),
            Arc::new(d),
            Arc::new(move |x| Ok(f(x))),
            alpha_min,
            alpha_max,
        )
    }

    /// Builds a problem whose source term is fallible.
    pub fn with_source(
        alpha: Coefficient,
        d: Coefficient,
        f: Source,
        alpha_min: f64,
        alpha_max: f64,
    ) -> Result<Self> {
        if !(alpha_min.is_finite() && alpha_max.is_finite()) {
            return Err(Error::invalid("order bounds must be finite"));
        }
        if !(1.0..2.0).contains(&alpha_min) || !(1.0..2.0).contains(&alpha_max) {
            return Err(Error::invalid(format!(
                "order bounds must lie in [1, 2), got [{alpha_min}, {alpha_max}]"
            )));
        }
        if alpha_min > alpha_max {
            return Err(Error::invalid(format!(
                "alpha_min {alpha_min} exceeds alpha_max {alpha_max}"
            )));
        }
        for m in 0..VALIDATION_SAMPLES {
            let x = m as f64 / (VALIDATION_SAMPLES - 1) as f64;
            let a = alpha(x);
            if !(a >= alpha_min - ORDER_BOUND_SLACK && a <= alpha_max + ORDER_BOUND_SLACK) {
                return Err(Error::invalid(format!(
                    "alpha({x}) = {a} lies outside the declared range [{alpha_min}, {alpha_max}]"
                )));
            }
            let dx = d(x);
            if !(dx >= 0.0) {
                return Err(Error::invalid(format!("diffusivity d({x}) = {dx} is negative")));
            }
        }
        Ok(Self {
            alpha,
            d,
            f,
            alpha_min,
            alpha_max,
            alpha_bar: 0.5 * (alpha_max + alpha_min),
        })
    }

    /// Builds a problem whose order extrema are estimated by sampling `alpha` on
    /// `samples` equispaced points. The result is approximate: extrema falling
    /// between samples are missed.
    pub fn with_sampled_bounds<A, D, F>(alpha: A, d: D, f: F, samples: usize) -> Result<Self>
    where
        A: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let samples = samples.max(2);
        let (lo, hi) = (0..samples)
            .map(|m| alpha(m as f64 / (samples - 1) as f64))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| {
                (lo.min(a), hi.max(a))
            });
        Self::new(alpha, d, f, lo, hi)
    }

    /// Returns a copy of this problem with the diffusivity replaced.
    pub fn with_diffusivity<D>(&self, d: D) -> Result<Self>
    where
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::with_source(
            self.alpha.clone(),
            Arc::new(d),
            self.f.clone(),
            self.alpha_min,
            self.alpha_max,
        )
    }

    pub fn alpha(&self, x: f64) -> f64 {
        (self.alpha)(x)
    }

    pub fn d(&self, x: f64) -> f64 {
        (self.d)(x)
    }

    pub fn f(&self, x: f64) -> Result<f64> {
        (self.f)(x)
    }

    pub fn alpha_min(&self) -> f64 {
        self.alpha_min
    }

    pub fn alpha_max(&self) -> f64 {
        self.alpha_max
    }

    /// Midpoint `(alpha_max + alpha_min) / 2` of the order range, the expansion
    /// point of the structured approximation.
    pub fn alpha_bar(&self) -> f64 {
        self.alpha_bar
    }
}

/// Uniform partition `x_m = m h`, `m = 0..=N+1`, `h = 1/(N+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    n: usize,
    h: f64,
    nodes: Vec<f64>,
}

impl Grid {
    /// Builds the grid with `n` interior nodes.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("grid needs at least one interior node"));
        }
        let h = 1.0 / (n + 1) as f64;
        let mut nodes: Vec<f64> = (0..=n + 1).map(|m| m as f64 * h).collect();
        nodes[n + 1] = 1.0;
        Ok(Self { n, h, nodes })
    }

    /// Number of interior nodes `N`.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Node `x_m`, `0 <= m <= N+1`.
    #[inline]
    pub fn x(&self, m: usize) -> f64 {
        self.nodes[m]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Dimension `N + 1` of the collocation system (unknowns `v_1..v_{N+1}`).
    pub fn system_size(&self) -> usize {
        self.n + 1
    }
}

/// Shorthand for [`Grid::new`].
pub fn make_grid(n: usize) -> Result<Grid> {
    Grid::new(n)
}

/// Truncation and blocking parameters of the fast solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ApproxParams {
    /// Highest power kept in the logarithmic expansion of the variable order.
    pub s: usize,
    /// Number of even binomial terms kept.
    pub k: usize,
    /// Lags `1..=band` are always evaluated exactly.
    pub band: usize,
    /// Blocks of at most this size are solved directly.
    pub base: usize,
}

impl ApproxParams {
    pub fn new(s: usize, k: usize, band: usize, base: usize) -> Result<Self> {
        if k == 0 || band == 0 || base == 0 {
            return Err(Error::invalid(format!(
                "approximation parameters need k, band, base >= 1 (got k={k}, band={band}, base={base})"
            )));
        }
        Ok(Self { s, k, band, base })
    }

    /// Default parameters for `n` interior nodes.
    ///
    /// `k = 2`, `s = ceil((e/2) ln n)`, `band = ceil(ln n)`, `base = max(64, band)`.
    pub fn defaults_for(n: usize) -> Self {
        let ln_n = (n.max(2) as f64).ln();
        let s = (0.5 * std::f64::consts::E * ln_n).ceil() as usize;
        let band = (ln_n.ceil() as usize).max(1);
        Self {
            s,
            k: 2,
            band,
            base: band.max(64),
        }
    }

    /// Number of `(p, q)` layers in the diagonal-times-Toeplitz sum.
    pub fn layers(&self) -> usize {
        (self.s + 1) * self.k
    }
}

/// Collocation unknowns and reconstructed nodal values.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// `v_0..v_{N+1}`, nodal values of the second-derivative proxy.
    pub v: Vec<f64>,
    /// `u_1..u_N`.
    pub u: Vec<f64>,
}

/// `base^exponent` for `base >= 0` with `0^exponent = 0` (the exponents used
/// here are always positive).
#[inline]
pub fn pow0(base: f64, exponent: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        base.powf(exponent)
    }
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Gamma function for positive arguments (Lanczos, g = 7, nine terms).
///
/// Arguments below 1/2 go through the reflection formula. Relative accuracy
/// is better than 1e-13 on the range used by the solvers.
pub fn gamma_fn(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::invalid(format!(
            "gamma_fn is defined here for finite positive arguments, got {x}"
        )));
    }
    Ok(gamma_pos(x))
}

pub(crate) fn gamma_pos(x: f64) -> f64 {
    use std::f64::consts::PI;
    if x < 0.5 {
        return PI / ((PI * x).sin() * gamma_pos(1.0 - x));
    }
    if x == x.floor() && x <= 21.0 {
        return (1..x as u32).fold(1.0, |acc, m| acc * m as f64);
    }
    let z = x - 1.0;
    let mut sum = LANCZOS_COEFFS[0];
    for (i, c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        sum += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    (2.0 * PI).sqrt() * t.powf(z + 0.5) * (-t).exp() * sum
}

/// Generalized binomial coefficient `a (a-1) ... (a-m+1) / m!`.
pub fn binom_real(a: f64, m: usize) -> f64 {
    let mut acc = 1.0;
    for r in 0..m {
        acc *= (a - r as f64) / (r + 1) as f64;
    }
    acc
}
