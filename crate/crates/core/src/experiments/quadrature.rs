//! Graded composite Gauss-Legendre quadrature for integrands with an
//! algebraic endpoint singularity.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Points per Gauss-Legendre panel.
pub const GL_POINTS: usize = 16;

/// Refinement settings shared by [`singular_quad`] and [`smooth_quad`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadConfig {
    pub tol: f64,
    /// Ratio between consecutive graded panel widths.
    pub ratio: f64,
    pub max_levels: usize,
}

impl QuadConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ratio: 2.0,
            max_levels: 40,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::invalid(format!("quadrature tol {} must be > 0", self.tol)));
        }
        if !(self.ratio > 1.0) {
            return Err(Error::invalid(format!(
                "grading ratio {} must exceed 1",
                self.ratio
            )));
        }
        if self.max_levels < 2 {
            return Err(Error::invalid("at least two refinement levels are needed"));
        }
        Ok(())
    }
}

/// Nodes and weights on `[-1, 1]`.
pub fn gauss_legendre() -> &'static ([f64; GL_POINTS], [f64; GL_POINTS]) {
    static RULE: OnceLock<([f64; GL_POINTS], [f64; GL_POINTS])> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GL_POINTS;
        let mut nodes = [0.0; GL_POINTS];
        let mut weights = [0.0; GL_POINTS];
        for i in 0..n.div_ceil(2) {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre(n, z);
                let dz = p / dp;
                z -= dz;
                if dz.abs() < 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre(n, z);
            let w = 2.0 / ((1.0 - z * z) * dp * dp);
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        (nodes, weights)
    })
}

/// `P_n(z)` and `P_n'(z)` by the three-term recurrence.
fn legendre(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * z * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    (p1, n as f64 * (z * p1 - p0) / (z * z - 1.0))
}

/// One Gauss-Legendre panel on `[a, b]`.
pub fn gl_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let (nodes, weights) = gauss_legendre();
    let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
    r * nodes
        .iter()
        .zip(weights)
        .map(|(t, w)| w * f(c + r * t))
        .sum::<f64>()
}

fn not_converged(estimate: f64, achieved: f64, tol: f64) -> Error {
    Error::Accuracy {
        estimate,
        achieved,
        requested: tol,
    }
}

/// `int_0^x g(s) (x - s)^beta ds` for `beta > -1` and `g` smooth away from 0.
///
/// `[0, x]` is split at `x/2`; each half is graded geometrically toward its
/// outer endpoint. The innermost panel at `s = x` integrates the linear
/// interpolant of `g` against the weight exactly; the one at `s = 0` uses a
/// plain panel.
pub fn weighted_singular<G: Fn(f64) -> f64>(
    g: G,
    x: f64,
    beta: f64,
    cfg: &QuadConfig,
) -> Result<f64> {
    cfg.validate()?;
    if !(x >= 0.0 && x.is_finite()) {
        return Err(Error::invalid(format!("upper limit {x} must be >= 0")));
    }
    if !(beta > -1.0) {
        return Err(Error::invalid(format!("weight exponent {beta} must exceed -1")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let full = |s: f64| g(s) * (x - s).powf(beta);
    // panels near s = x are parametrized by the distance to x, which keeps
    // the weight accurate when the panels shrink below the spacing of s
    let near = |sigma: f64| g(x - sigma) * sigma.powf(beta);
    let gx = g(x);
    let end_panel = |delta: f64| {
        let slope = (g(x - delta) - gx) / delta;
        gx * delta.powf(beta + 1.0) / (beta + 1.0) + slope * delta.powf(beta + 2.0) / (beta + 2.0)
    };

    let half = 0.5 * x;
    // current innermost widths
    let mut left = half;
    let mut right = half;
    let mut fixed = 0.0;
    let mut prev = gl_panel(&full, 0.0, left) + end_panel(right);
    let mut diff = f64::INFINITY;
    for _ in 1..cfg.max_levels {
        let (nl, nr) = (left / cfg.ratio, right / cfg.ratio);
        fixed += gl_panel(&full, nl, left) + gl_panel(&near, nr, right);
        left = nl;
        right = nr;
        let cur = fixed + gl_panel(&full, 0.0, left) + end_panel(right);
        diff = (cur - prev).abs();
        if !cur.is_finite() {
            return Err(not_converged(cur, diff, cfg.tol));
        }
        if diff <= cfg.tol {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(not_converged(prev, diff, cfg.tol))
}

/// `int_0^x f(s) ds` for `f` continuous with a derivative singularity at 0,
/// graded toward 0 only.
pub fn graded_toward_zero<F: Fn(f64) -> f64>(f: F, x: f64, cfg: &QuadConfig) -> Result<f64> {
    cfg.validate()?;
    if !(x >= 0.0 && x.is_finite()) {
        return Err(Error::invalid(format!("upper limit {x} must be >= 0")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let mut inner = x;
    let mut fixed = 0.0;
    let mut prev = gl_panel(&f, 0.0, x);
    let mut diff = f64::INFINITY;
    for _ in 1..cfg.max_levels {
        let next = inner / cfg.ratio;
        fixed += gl_panel(&f, next, inner);
        inner = next;
        let cur = fixed + gl_panel(&f, 0.0, inner);
        diff = (cur - prev).abs();
        if !cur.is_finite() {
            return Err(not_converged(cur, diff, cfg.tol));
        }
        if diff <= cfg.tol {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(not_converged(prev, diff, cfg.tol))
}

/// `int_0^x s^{2-alpha(s)} (x-s)^{1-alpha_x} ds`.
pub fn singular_quad<A: Fn(f64) -> f64>(
    x: f64,
    alpha: A,
    alpha_x: f64,
    cfg: &QuadConfig,
) -> Result<f64> {
    let beta = 1.0 - alpha_x;
    if !(-1.0 < beta && beta <= 0.0) {
        return Err(Error::invalid(format!(
            "order {alpha_x} outside [1, 2) gives a weight exponent outside (-1, 0]"
        )));
    }
    weighted_singular(|s| power_profile(s, &alpha), x, beta, cfg)
}

/// Weight in [`smooth_quad`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weight {
    /// `(x - s)` over `(0, x)`
    XMinusS,
    /// `(1 - s)` over `(0, 1)`
    OneMinusS,
}

/// `int s^{2-alpha(s)} w(s) ds` over `(0, x)` for [`Weight::XMinusS`] or
/// `(0, 1)` for [`Weight::OneMinusS`].
pub fn smooth_quad<A: Fn(f64) -> f64>(
    x: f64,
    weight: Weight,
    alpha: A,
    cfg: &QuadConfig,
) -> Result<f64> {
    match weight {
        Weight::XMinusS => graded_toward_zero(|s| power_profile(s, &alpha) * (x - s), x, cfg),
        Weight::OneMinusS => graded_toward_zero(|s| power_profile(s, &alpha) * (1.0 - s), 1.0, cfg),
    }
}

#[inline]
fn power_profile<A: Fn(f64) -> f64>(s: f64, alpha: &A) -> f64 {
    if s == 0.0 {
        0.0
    } else {
        s.powf(2.0 - alpha(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(tol: f64) -> QuadConfig {
        QuadConfig::with_tol(tol)
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (nodes, weights) = gauss_legendre();
        assert!((weights.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        for deg in 0..32 {
            let got: f64 = nodes.iter().zip(weights).map(|(t, w)| w * t.powi(deg)).sum();
            let want = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg + 1) as f64 };
            assert!((got - want).abs() < 1e-14, "degree {deg}");
        }
    }

    #[test]
    fn beta_function_value() {
        let got = singular_quad(1.0, |_| 1.5, 1.5, &cfg(1e-12)).unwrap();
        assert!((got - std::f64::consts::FRAC_PI_2).abs() < 1e-10, "{got}");
    }

    #[test]
    fn constant_order_scaling() {
        // x^{4-2a} B(3-a, 2-a) with a = 1.5
        for x in [1e-3, 0.2, 0.7] {
            let got = singular_quad(x, |_| 1.5, 1.5, &cfg(1e-13)).unwrap();
            let want = x * std::f64::consts::FRAC_PI_2;
            assert!((got - want).abs() < 1e-11, "x={x}");
        }
        assert_eq!(singular_quad(0.0, |_| 1.5, 1.5, &cfg(1e-12)).unwrap(), 0.0);
    }

    #[test]
    fn linear_profile_matches_extended_precision() {
        let alpha = |s: f64| 0.4 * s + 1.2;
        let got = singular_quad(0.5, alpha, alpha(0.5), &cfg(1e-12)).unwrap();
        assert!((got - 0.485_937_032_027_634_528).abs() < 1e-11, "{got}");
    }

    #[test]
    fn grading_ratio_independent() {
        let alpha = |s: f64| 0.4 * s + 1.2;
        let a = singular_quad(0.5, alpha, 1.4, &cfg(1e-13)).unwrap();
        let c3 = QuadConfig {
            ratio: 3.0,
            ..cfg(1e-13)
        };
        let b = singular_quad(0.5, alpha, 1.4, &c3).unwrap();
        assert!((a - b).abs() < 1e-11);
    }

    #[test]
    fn smooth_examples() {
        let a = smooth_quad(0.3, Weight::OneMinusS, |_| 1.0, &cfg(1e-13)).unwrap();
        assert!((a - 1.0 / 6.0).abs() < 1e-13);
        let b = smooth_quad(1.0, Weight::XMinusS, |_| 1.5, &cfg(1e-13)).unwrap();
        assert!((b - 4.0 / 15.0).abs() < 1e-12);
        let alpha = |s: f64| 0.4 * s + 1.2;
        let c = smooth_quad(0.5, Weight::XMinusS, alpha, &cfg(1e-12)).unwrap();
        let d = smooth_quad(
            0.5,
            Weight::XMinusS,
            alpha,
            &QuadConfig {
                ratio: 3.0,
                ..cfg(1e-13)
            },
        )
        .unwrap();
        assert!((c - d).abs() < 1e-11);
    }

    #[test]
    fn deep_refinement_near_the_singularity_is_stable() {
        let g = |s: f64| 12.0 * s * s - 20.0 * s * s * s;
        let a = weighted_singular(g, 0.999, -0.5, &cfg(1e-14)).unwrap();
        let b = weighted_singular(g, 0.999, -0.5, &QuadConfig { ratio: 3.0, ..cfg(1e-14) }).unwrap();
        assert!((a - b).abs() < 1e-13, "{a} vs {b}");
    }

    #[test]
    fn budget_exhaustion_reports_estimate() {
        let tight = QuadConfig {
            tol: 1e-30,
            ratio: 2.0,
            max_levels: 3,
        };
        match singular_quad(0.5, |s| 0.4 * s + 1.2, 1.4, &tight) {
            Err(Error::Accuracy {
                estimate,
                achieved,
                requested,
            }) => {
                assert!((estimate - 0.4859).abs() < 1e-2);
                assert!(achieved > 0.0);
                assert_eq!(requested, 1e-30);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(singular_quad(0.5, |_| 1.5, 2.0, &cfg(1e-10)).is_err());
        assert!(singular_quad(-0.5, |_| 1.5, 1.5, &cfg(1e-10)).is_err());
        assert!(singular_quad(0.5, |_| 1.5, 1.5, &cfg(0.0)).is_err());
        assert!(weighted_singular(|s| s, 0.5, -1.0, &cfg(1e-10)).is_err());
    }
}
