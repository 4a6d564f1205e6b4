//! Single-agent censor: thinned decay intensity, closed-form silence decay,
//! re-initialization at a disclosure, and the valuation-to-observation cutoff map.

use crate::error::{Error, Result};
use crate::mathkit::{adaptive_simpson, thinning_factor};
use crate::params::{DerivedParams, IntensityTable};
use crate::paths::TimeGrid;
use crate::regression::{single_log_factors, VarianceConvention};

/// Quadrature tolerance per unit time for ∫ν.
pub const NU_QUAD_TOL: f64 = 1e-12;

/// σ̂_t = scale(κ₁ⁱ)·αᵢ·σ̃₀ᵢ(t).
pub fn sigma_hat(derived: &DerivedParams, i: usize, t: f64, conv: VarianceConvention) -> f64 {
    let s = (1.0 - t).max(0.0);
    let s0i = (derived.sigma0 * derived.sigma0 + derived.sigma_i[i] * derived.sigma_i[i]) * s;
    conv.sigma_scale(derived.kappa1[i]) * derived.alpha[i] * s0i.sqrt()
}

/// ν_t = λ_t·(2Φ(σ̂_t/2) − 1).
pub fn decay_intensity(
    derived: &DerivedParams,
    i: usize,
    t: f64,
    lambda_t: f64,
    conv: VarianceConvention,
) -> f64 {
    if lambda_t == 0.0 || t >= 1.0 {
        return 0.0;
    }
    lambda_t * thinning_factor(sigma_hat(derived, i, t, conv))
}

/// ∫_a^b ν_s ds, adaptive Simpson on each constant piece of λ.
pub fn nu_integral(
    derived: &DerivedParams,
    i: usize,
    table: &IntensityTable,
    a: f64,
    b: f64,
    conv: VarianceConvention,
) -> f64 {
    table
        .pieces(a, b)
        .into_iter()
        .filter(|&(_, _, v)| v > 0.0)
        .map(|(lo, hi, v)| {
            let g = |t: f64| thinning_factor(sigma_hat(derived, i, t, conv));
            v * adaptive_simpson(&g, lo, hi, (NU_QUAD_TOL * (hi - lo)).max(1e-16))
        })
        .sum()
}

/// Silence decay from a re-initialization: γ̃_t = anchor·exp(−∫_{start}^t ν).
#[derive(Debug, Clone, PartialEq)]
pub struct DecaySegment {
    pub agent: usize,
    pub start: f64,
    pub anchor: f64,
    pub end: f64,
    pub times: Vec<f64>,
    /// ∫_{start}^{times[k]} ν ds.
    pub nu_integral: Vec<f64>,
}

impl DecaySegment {
    pub fn gamma_hat(&self, k: usize) -> f64 {
        (-self.nu_integral[k]).exp()
    }

    pub fn gamma_tilde(&self, k: usize) -> f64 {
        self.anchor * self.gamma_hat(k)
    }

    /// B(t_a, t_b) = γ̂_b/γ̂_a.
    pub fn bond(&self, a: usize, b: usize) -> f64 {
        (self.nu_integral[a] - self.nu_integral[b]).exp()
    }
}

#[allow(clippy::too_many_arguments)]
pub fn decay_segment(
    derived: &DerivedParams,
    i: usize,
    anchor_time: f64,
    anchor_value: f64,
    end_time: f64,
    table: &IntensityTable,
    grid: &TimeGrid,
    conv: VarianceConvention,
) -> Result<DecaySegment> {
    derived.check_agent(i)?;
    if !(anchor_time < end_time) || end_time > 1.0 || anchor_time < 0.0 {
        return Err(Error::InvertedInterval {
            start: anchor_time,
            end: end_time,
        });
    }
    if !(anchor_value > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "anchor value must be positive, got {anchor_value}"
        )));
    }
    let mut times = vec![anchor_time];
    times.extend(
        grid.points()
            .iter()
            .copied()
            .filter(|&t| t > anchor_time && t < end_time),
    );
    times.push(end_time);
    let mut nu = Vec::with_capacity(times.len());
    let mut acc = 0.0;
    nu.push(0.0);
    for w in times.windows(2) {
        acc += nu_integral(derived, i, table, w[0], w[1], conv);
        nu.push(acc);
    }
    Ok(DecaySegment {
        agent: i,
        start: anchor_time,
        anchor: anchor_value,
        end: end_time,
        times,
        nu_integral: nu,
    })
}

fn log_beta(derived: &DerivedParams, i: usize, t: f64) -> f64 {
    let (li, la, _) = single_log_factors(derived, i, t);
    li + la
}

/// Valuation after disclosing y at t: k₁ⁱ·β̃_t·y^{κ₁ⁱ}.
pub fn reinitialize(derived: &DerivedParams, i: usize, t: f64, y: f64) -> Result<f64> {
    derived.check_agent(i)?;
    if !(y > 0.0) {
        return Err(Error::NonPositiveObservation { agent: i, value: y });
    }
    Ok((derived.k_single[i].ln() + log_beta(derived, i, t) + derived.kappa1[i] * y.ln()).exp())
}

/// Observation cutoff γ = (γ̃/(k₁ⁱβ̃_t))^{1/κ₁ⁱ}.
pub fn invert_cutoff(derived: &DerivedParams, i: usize, t: f64, gamma_tilde: f64) -> Result<f64> {
    derived.check_agent(i)?;
    if !(gamma_tilde > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "valuation cutoff must be positive, got {gamma_tilde}"
        )));
    }
    let l = gamma_tilde.ln() - derived.k_single[i].ln() - log_beta(derived, i, t);
    Ok((l / derived.kappa1[i]).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CensorPoint {
    pub t: f64,
    pub gamma_tilde: f64,
    pub gamma_obs: f64,
    pub nu: f64,
}

/// Cutoff schedule along a segment.
pub fn censor_points(
    derived: &DerivedParams,
    segment: &DecaySegment,
    table: &IntensityTable,
    conv: VarianceConvention,
) -> Result<Vec<CensorPoint>> {
    let i = segment.agent;
    segment
        .times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let gamma_tilde = segment.gamma_tilde(k);
            Ok(CensorPoint {
                t,
                gamma_tilde,
                gamma_obs: invert_cutoff(derived, i, t, gamma_tilde)?,
                nu: decay_intensity(derived, i, t, table.value_at(t), conv),
            })
        })
        .collect()
}
