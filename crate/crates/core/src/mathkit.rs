//! Scalar kernel: Φ, the μ moment factor, the log-normal hemi-mean, the cutoff
//! equation solver, and adaptive Simpson quadrature.

use std::f64::consts::SQRT_2;

/// Standard normal CDF via erfc; absolute error far below 1e-12.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// 2Φ(σ/2) − 1, evaluated as erf(σ/(2√2)) so small σ keep full relative accuracy.
pub fn thinning_factor(sigma: f64) -> f64 {
    libm::erf(sigma / (2.0 * SQRT_2))
}

/// μ(κ, σ²) = exp(½κ(κ−1)σ²) = E[L^κ] for a unit-mean log-normal L with log-variance σ².
pub fn mu_factor(kappa: f64, sigma_sq: f64) -> f64 {
    (0.5 * kappa * (kappa - 1.0) * sigma_sq).exp()
}

/// H(γ) = E[(γ − F)⁺] for log-normal F with mean `anchor` and log-volatility `sigma`.
pub fn hemi_mean(strike: f64, anchor: f64, sigma: f64) -> f64 {
    if strike <= 0.0 {
        return 0.0;
    }
    if sigma == 0.0 {
        return (strike - anchor).max(0.0);
    }
    let l = (strike / anchor).ln();
    let h = strike * normal_cdf((l + 0.5 * sigma * sigma) / sigma)
        - anchor * normal_cdf((l - 0.5 * sigma * sigma) / sigma);
    h.clamp(0.0, strike)
}

/// dH/dγ = Q(F ≤ γ).
pub fn hemi_mean_slope(strike: f64, anchor: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return if strike > anchor { 1.0 } else { 0.0 };
    }
    normal_cdf(((strike / anchor).ln() + 0.5 * sigma * sigma) / sigma)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffSolution {
    pub y: f64,
    pub residual: f64,
    pub iterations: usize,
}

fn cutoff_equation(lambda: f64, sigma: f64, y: f64) -> f64 {
    1.0 - y - lambda * hemi_mean(y, 1.0, sigma)
}

/// Unique root in (0,1] of 1 − y = λ·H(y; 1, σ): bracketed Newton with bisection fallback.
pub fn solve_cutoff(lambda: f64, sigma: f64) -> CutoffSolution {
    if lambda == 0.0 || sigma == 0.0 {
        return CutoffSolution {
            y: 1.0,
            residual: 0.0,
            iterations: 0,
        };
    }
    // g(y) = 1 − y − λH is strictly decreasing; g(0⁺) = 1, g(1) = −λH(1) < 0.
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut y = 1.0 / (1.0 + lambda * crate::mathkit::thinning_factor(sigma));
    let mut iterations = 0;
    for _ in 0..200 {
        iterations += 1;
        let g = cutoff_equation(lambda, sigma, y);
        if g > 0.0 {
            lo = y;
        } else {
            hi = y;
        }
        if g.abs() < 1e-15 || hi - lo < 1e-16 {
            break;
        }
        let slope = -1.0 - lambda * hemi_mean_slope(y, 1.0, sigma);
        let next = y - g / slope;
        y = if next > lo && next < hi {
            next
        } else {
            0.5 * (lo + hi)
        };
    }
    CutoffSolution {
        y,
        residual: cutoff_equation(lambda, sigma, y).abs(),
        iterations,
    }
}

/// Trapezoid quadrature of ∫_{0}^{γ} Q(F ≤ x) dx, an independent route to the hemi-mean.
pub fn lpm_quadrature(strike: f64, anchor: f64, sigma: f64, n: usize) -> f64 {
    if strike <= 0.0 {
        return 0.0;
    }
    if sigma == 0.0 {
        return (strike - anchor).max(0.0);
    }
    let cdf = |x: f64| {
        if x <= 0.0 {
            0.0
        } else {
            normal_cdf(((x / anchor).ln() + 0.5 * sigma * sigma) / sigma)
        }
    };
    let h = strike / n as f64;
    let inner: f64 = (1..n).map(|k| cdf(k as f64 * h)).sum();
    h * (0.5 * (cdf(0.0) + cdf(strike)) + inner)
}

/// Adaptive Simpson with Richardson correction; `tol` is the absolute target on [a,b].
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let c = 0.5 * (a + b);
    let fc = f(c);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    simpson_step(f, a, b, fa, fc, fb, whole, tol, 60)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fc: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let c = 0.5 * (a + b);
    let d = 0.5 * (a + c);
    let e = 0.5 * (c + b);
    let fd = f(d);
    let fe = f(e);
    let left = (c - a) / 6.0 * (fa + 4.0 * fd + fc);
    let right = (b - c) / 6.0 * (fc + 4.0 * fe + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, c, fa, fd, fc, left, 0.5 * tol, depth - 1)
        + simpson_step(f, c, b, fc, fe, fb, right, 0.5 * tol, depth - 1)
}
