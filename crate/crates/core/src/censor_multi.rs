//! Multi-agent censor: partial covariances, amended means, hypothetical-agent
//! cutoffs, linear log-cutoff aggregation, aggregated decay intensity, and the
//! grid schedule used by the market simulation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathkit::{adaptive_simpson, normal_cdf, solve_cutoff, thinning_factor};
use crate::params::{derive, tilde_at, DerivedParams, IntensityTable, ModelSpec};
use crate::paths::TimeGrid;
use crate::regression::{log_weighted_product, multi_log_factors, VarianceConvention};

/// Form of the hypothetical-agent decay intensity: `Thinned` λ̃(2Φ(σ/2)−1) (default),
/// `Literal` λ̃Φ(σ/2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HypIntensityForm {
    #[default]
    Thinned,
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovStructure {
    pub t: f64,
    pub cov: Vec<Vec<f64>>,
    /// ρ̃ᵢ² = 1 − (residual variance of w̃ᵢ given the others)/Var(w̃ᵢ).
    pub rho_sq: Vec<f64>,
    pub rho: Vec<f64>,
}

/// Cholesky solve of the SPD system `a x = b`; `None` when a pivot collapses.
fn cholesky_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = (0..n)
        .map(|k| a[k][k].abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut l = vec![vec![0.0; n]; n];
    for r in 0..n {
        for c in 0..=r {
            let s: f64 = a[r][c] - (0..c).map(|k| l[r][k] * l[c][k]).sum::<f64>();
            if r == c {
                if s <= 1e-13 * scale {
                    return None;
                }
                l[r][c] = s.sqrt();
            } else {
                l[r][c] = s / l[c][c];
            }
        }
    }
    let mut z = vec![0.0; n];
    for r in 0..n {
        z[r] = (b[r] - (0..r).map(|k| l[r][k] * z[k]).sum::<f64>()) / l[r][r];
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        x[r] = (z[r] - (r + 1..n).map(|k| l[k][r] * x[k]).sum::<f64>()) / l[r][r];
    }
    Some(x)
}

fn partial_cov_from(sigma0: f64, sigma_i: &[f64], t: f64) -> Result<CovStructure> {
    if !(t < 1.0) {
        return Err(Error::DegenerateHorizon { t });
    }
    let m = sigma_i.len();
    let s = 1.0 - t;
    let s0 = sigma0 * sigma0 * s;
    let cov: Vec<Vec<f64>> = (0..m)
        .map(|r| {
            (0..m)
                .map(|c| {
                    if r == c {
                        s0 + sigma_i[r] * sigma_i[r] * s
                    } else {
                        s0
                    }
                })
                .collect()
        })
        .collect();
    let mut rho_sq = Vec::with_capacity(m);
    for i in 0..m {
        if m == 1 {
            rho_sq.push(0.0);
            continue;
        }
        let others: Vec<usize> = (0..m).filter(|&j| j != i).collect();
        let sub: Vec<Vec<f64>> = others
            .iter()
            .map(|&r| others.iter().map(|&c| cov[r][c]).collect())
            .collect();
        let b: Vec<f64> = others.iter().map(|&r| cov[r][i]).collect();
        let x = cholesky_solve(&sub, &b).ok_or(Error::DegenerateCorrelation { agent: i })?;
        let explained: f64 = x.iter().zip(&b).map(|(u, v)| u * v).sum();
        let residual = cov[i][i] - explained;
        rho_sq.push((1.0 - residual / cov[i][i]).clamp(0.0, 1.0));
    }
    let rho = rho_sq.iter().map(|r| r.sqrt()).collect();
    Ok(CovStructure {
        t,
        cov,
        rho_sq,
        rho,
    })
}

/// Covariance of w̃ᵢ = σ₀W̃⁰ + σᵢW̃ⁱ over (t,1] and the Schur-complement partial covariances.
pub fn partial_covariances(spec: &ModelSpec, t: f64) -> Result<CovStructure> {
    spec.validate()?;
    let sigma_i: Vec<f64> = (0..spec.m)
        .map(|i| spec.sigma_m[i] / spec.alpha[i])
        .collect();
    partial_cov_from(spec.sigma0, &sigma_i, t)
}

pub fn partial_covariances_derived(derived: &DerivedParams, t: f64) -> Result<CovStructure> {
    partial_cov_from(derived.sigma0, &derived.sigma_i, t)
}

/// L₋ᵢ(t) = exp((αᵢ(m−1)+αᵢ(αᵢ−1))/(2(p̃−p̃ᵢ)))·exp(−(mαᵢ+αᵢ(αᵢ−1))/(2p̃)).
pub fn amended_mean(derived: &DerivedParams, i: usize, t: f64) -> Result<f64> {
    derived.check_agent(i)?;
    let tilde = tilde_at(derived, t)?;
    let m = derived.m as f64;
    let a = derived.alpha[i];
    let num_minus = a * (m - 1.0) + a * (a - 1.0);
    let num_all = m * a + a * (a - 1.0);
    let p_minus = tilde.p_tilde - tilde.p_tilde_i[i];
    Ok((num_minus / (2.0 * p_minus) - num_all / (2.0 * tilde.p_tilde)).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypotheticalAgent {
    pub agent: usize,
    pub t: f64,
    pub lambda: f64,
    pub sigma_hyp: f64,
    pub rho_sq: f64,
    pub l_minus: f64,
    pub g: f64,
    pub nu_hyp: f64,
}

/// σ_hyp,i(t) = αᵢ·scale(κᵢ)·σ̃₀ᵢ(t)·√(1−ρ̃ᵢ²).
pub fn sigma_hyp(
    derived: &DerivedParams,
    rho_sq: f64,
    i: usize,
    t: f64,
    conv: VarianceConvention,
) -> f64 {
    let s = (1.0 - t).max(0.0);
    let s0i = (derived.sigma0 * derived.sigma0 + derived.sigma_i[i] * derived.sigma_i[i]) * s;
    derived.alpha[i] * conv.sigma_scale(derived.kappa[i]) * s0i.sqrt() * (1.0 - rho_sq).sqrt()
}

pub fn hyp_rate(lambda: f64, sigma: f64, form: HypIntensityForm) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    match form {
        HypIntensityForm::Thinned => lambda * thinning_factor(sigma),
        HypIntensityForm::Literal => lambda * normal_cdf(0.5 * sigma),
    }
}

pub fn hypothetical_cutoff(
    derived: &DerivedParams,
    cov: &CovStructure,
    i: usize,
    t: f64,
    lambda: f64,
    conv: VarianceConvention,
    form: HypIntensityForm,
) -> Result<HypotheticalAgent> {
    derived.check_agent(i)?;
    let l_minus = amended_mean(derived, i, t)?;
    let rho_sq = cov.rho_sq[i];
    let sigma = sigma_hyp(derived, rho_sq, i, t, conv);
    Ok(HypotheticalAgent {
        agent: i,
        t,
        lambda,
        sigma_hyp: sigma,
        rho_sq,
        l_minus,
        g: solve_cutoff(lambda, sigma).y * l_minus,
        nu_hyp: hyp_rate(lambda, sigma, form),
    })
}

/// Hypothetical agents for every agent at time t, with λ̃ᵢ = λᵢ(t).
pub fn hypothetical_agents(
    derived: &DerivedParams,
    lambda: &[IntensityTable],
    t: f64,
    conv: VarianceConvention,
    form: HypIntensityForm,
) -> Result<Vec<HypotheticalAgent>> {
    let cov = partial_covariances_derived(derived, t)?;
    (0..derived.m)
        .map(|i| hypothetical_cutoff(derived, &cov, i, t, lambda[i].value_at(t), conv, form))
        .collect()
}

/// log yⁱ = αᵢ[log gᵢ/(αᵢκ₋ᵢ) + (1/κ₀)Σⱼ κⱼ/(αⱼκ₋ⱼ)·log gⱼ].
pub fn aggregate_log_cutoffs(derived: &DerivedParams, log_g: &[f64]) -> Result<Vec<f64>> {
    if !(derived.kappa0 > 0.0) {
        return Err(Error::InvalidArgument(
            "κ₀ = 0: aggregation undefined".into(),
        ));
    }
    let common: f64 = (0..derived.m)
        .map(|j| derived.kappa[j] / (derived.alpha[j] * derived.kappa_minus[j]) * log_g[j])
        .sum::<f64>()
        / derived.kappa0;
    Ok((0..derived.m)
        .map(|i| {
            derived.alpha[i] * (log_g[i] / (derived.alpha[i] * derived.kappa_minus[i]) + common)
        })
        .collect())
}

/// Static aggregation of hypothetical cutoffs into per-agent log observation cutoffs.
pub fn aggregate_cutoffs(hyps: &[HypotheticalAgent], derived: &DerivedParams) -> Result<Vec<f64>> {
    if let Some(h) = hyps.iter().find(|h| !(h.g > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "hypothetical cutoff of agent {} is not positive",
            h.agent
        )));
    }
    let log_g: Vec<f64> = hyps.iter().map(|h| h.g.ln()).collect();
    aggregate_log_cutoffs(derived, &log_g)
}

/// ν_aggⁱ = (αᵢ/κ₀)Σⱼ (1−κⱼ)/αⱼ·ν_jhyp, the rate at which Πⱼ(yⱼ)^{eᵢⱼ} decays.
pub fn aggregated_intensity(derived: &DerivedParams, i: usize, nu_hyp: &[f64]) -> f64 {
    derived.alpha[i] / derived.kappa0
        * (0..derived.m)
            .map(|j| (1.0 - derived.kappa[j]) / derived.alpha[j] * nu_hyp[j])
            .sum::<f64>()
}

fn log_beta_multi(derived: &DerivedParams, i: usize, t: f64) -> f64 {
    let (li, la, _) = multi_log_factors(derived, i, t);
    li + la
}

/// γ̃ⁱ_t = k_mⁱ·β̃ⁱ(θ)·⟨y_θ^e⟩·exp(−∫_θ^t ν_aggⁱ), with β̃ evaluated at the anchor θ.
pub fn multi_valuation(
    derived: &DerivedParams,
    i: usize,
    anchor_time: f64,
    anchor_obs: &[f64],
    nu_agg_integral: f64,
) -> f64 {
    (derived.k_multi[i].ln()
        + log_beta_multi(derived, i, anchor_time)
        + log_weighted_product(derived, i, anchor_obs)
        - nu_agg_integral)
        .exp()
}

/// Valuation after a disclosure at t: disclosed coordinates replace the carried cutoffs.
pub fn multi_reinitialize(
    derived: &DerivedParams,
    i: usize,
    t: f64,
    disclosed: &[(usize, f64)],
    carried: &[f64],
) -> Result<f64> {
    derived.check_agent(i)?;
    if disclosed.is_empty() {
        return Err(Error::EmptyDisclosure);
    }
    let mut obs = carried.to_vec();
    for &(j, v) in disclosed {
        derived.check_agent(j)?;
        if !(v > 0.0) {
            return Err(Error::NonPositiveObservation { agent: j, value: v });
        }
        obs[j] = v;
    }
    Ok(multi_valuation(derived, i, t, &obs, 0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiCensorPoint {
    pub t: f64,
    pub y_cut: Vec<f64>,
    pub gamma_tilde: Vec<f64>,
    /// Per-agent aggregated decay intensity ν_aggⁱ(t).
    pub nu_agg: Vec<f64>,
}

/// Grid-resolved multi-agent censor: cumulative hypothetical intensities and β̃ clocks.
#[derive(Debug, Clone)]
pub struct MultiCensor {
    pub derived: DerivedParams,
    pub lambda: Vec<IntensityTable>,
    pub grid: Arc<TimeGrid>,
    pub conv: VarianceConvention,
    pub form: HypIntensityForm,
    pub rho_sq: Vec<f64>,
    /// `cum_hyp[j][k]` = ∫_0^{t_k} ν_jhyp.
    cum_hyp: Vec<Vec<f64>>,
    /// `log_beta[i][k]` = log β̃ⁱ(t_k).
    log_beta: Vec<Vec<f64>>,
    /// 1/Σₕ(κₕ/αₕ), the per-unit-loading share of β̃ drift carried by each cutoff.
    drift_share: f64,
}

impl MultiCensor {
    pub fn new(
        spec: &ModelSpec,
        grid: Arc<TimeGrid>,
        conv: VarianceConvention,
        form: HypIntensityForm,
    ) -> Result<Self> {
        let derived = derive(spec)?;
        Self::from_derived(derived, spec.lambda.clone(), grid, conv, form)
    }

    pub fn from_derived(
        derived: DerivedParams,
        lambda: Vec<IntensityTable>,
        grid: Arc<TimeGrid>,
        conv: VarianceConvention,
        form: HypIntensityForm,
    ) -> Result<Self> {
        if lambda.len() != derived.m {
            return Err(Error::InvalidArgument(
                "one intensity table per agent required".into(),
            ));
        }
        let rho_sq = partial_covariances_derived(&derived, 0.0)?.rho_sq;
        let pts = grid.points();
        let mut cum_hyp = Vec::with_capacity(derived.m);
        for j in 0..derived.m {
            let rate = |t: f64| {
                let sigma = sigma_hyp(&derived, rho_sq[j], j, t, conv);
                match form {
                    HypIntensityForm::Thinned => thinning_factor(sigma),
                    HypIntensityForm::Literal => normal_cdf(0.5 * sigma),
                }
            };
            let mut acc = 0.0;
            let mut col = Vec::with_capacity(pts.len());
            col.push(0.0);
            for w in pts.windows(2) {
                for (lo, hi, v) in lambda[j].pieces(w[0], w[1]) {
                    if v > 0.0 {
                        acc += v * adaptive_simpson(&rate, lo, hi, (1e-12 * (hi - lo)).max(1e-16));
                    }
                }
                col.push(acc);
            }
            cum_hyp.push(col);
        }
        let log_beta = (0..derived.m)
            .map(|i| {
                pts.iter()
                    .map(|&t| log_beta_multi(&derived, i, t))
                    .collect()
            })
            .collect();
        let drift_share = 1.0
            / (0..derived.m)
                .map(|h| derived.kappa[h] / derived.alpha[h])
                .sum::<f64>();
        Ok(MultiCensor {
            derived,
            lambda,
            grid,
            conv,
            form,
            rho_sq,
            cum_hyp,
            log_beta,
            drift_share,
        })
    }

    pub fn m(&self) -> usize {
        self.derived.m
    }

    /// ∫_{t_a}^{t_b} ν_jhyp.
    pub fn hyp_integral(&self, j: usize, a: usize, b: usize) -> f64 {
        self.cum_hyp[j][b] - self.cum_hyp[j][a]
    }

    pub fn log_beta(&self, i: usize, k: usize) -> f64 {
        self.log_beta[i][k]
    }

    /// log y_bʲ − log y_aʲ under silence on (t_a, t_b].
    pub fn log_cutoff_shift(&self, j: usize, a: usize, b: usize) -> f64 {
        let d = &self.derived;
        let neg: Vec<f64> = (0..d.m).map(|h| -self.hyp_integral(h, a, b)).collect();
        let common: f64 = (0..d.m)
            .map(|h| d.kappa[h] / (d.alpha[h] * d.kappa_minus[h]) * neg[h])
            .sum::<f64>()
            / d.kappa0;
        let decay = neg[j] / d.kappa_minus[j] + d.alpha[j] * common;
        let drift = (self.log_beta[j][a] - self.log_beta[j][b]) * self.drift_share / d.alpha[j];
        decay + drift
    }

    /// Observation cutoffs at t_k for a segment anchored at t_a with anchor observations.
    pub fn cutoffs(&self, a: usize, anchor_obs: &[f64], k: usize) -> Vec<f64> {
        (0..self.m())
            .map(|j| anchor_obs[j] * self.log_cutoff_shift(j, a, k).exp())
            .collect()
    }

    /// ∫_{t_a}^{t_b} ν_aggⁱ.
    pub fn nu_agg_integral(&self, i: usize, a: usize, b: usize) -> f64 {
        let nu: Vec<f64> = (0..self.m()).map(|j| self.hyp_integral(j, a, b)).collect();
        aggregated_intensity(&self.derived, i, &nu)
    }

    /// Instantaneous ν_aggⁱ(t_k).
    pub fn nu_agg_rate(&self, i: usize, k: usize) -> f64 {
        let t = self.grid.points()[k];
        let nu: Vec<f64> = (0..self.m())
            .map(|j| {
                let sigma = sigma_hyp(&self.derived, self.rho_sq[j], j, t, self.conv);
                hyp_rate(self.lambda[j].value_at(t), sigma, self.form)
            })
            .collect();
        aggregated_intensity(&self.derived, i, &nu)
    }

    /// Silence valuation γ̃ⁱ at t_k for a segment anchored at t_a.
    pub fn valuation(&self, i: usize, a: usize, anchor_obs: &[f64], k: usize) -> f64 {
        let d = &self.derived;
        (d.k_multi[i].ln() + self.log_beta[i][a] + log_weighted_product(d, i, anchor_obs)
            - self.nu_agg_integral(i, a, k))
        .exp()
    }

    /// Re-initialized valuation at t_k given the full anchor vector.
    pub fn reinit(&self, i: usize, k: usize, obs: &[f64]) -> f64 {
        self.valuation(i, k, obs, k)
    }

    /// Schedule from anchor index `a` to the end of the grid.
    pub fn points(&self, a: usize, anchor_obs: &[f64]) -> Vec<MultiCensorPoint> {
        (a..self.grid.len())
            .map(|k| MultiCensorPoint {
                t: self.grid.points()[k],
                y_cut: self.cutoffs(a, anchor_obs, k),
                gamma_tilde: (0..self.m())
                    .map(|i| self.valuation(i, a, anchor_obs, k))
                    .collect(),
                nu_agg: (0..self.m()).map(|i| self.nu_agg_rate(i, k)).collect(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_covariance_examples() {
        let s = ModelSpec::symmetric(1, 1.0, 1.0, 1.0, 1.0, 1.0);
        assert_eq!(partial_covariances(&s, 0.3).unwrap().rho, vec![0.0]);
        let s = ModelSpec::symmetric(2, 1.0, 1.0, 1.0, 1.0, 1.0);
        let c = partial_covariances(&s, 0.4).unwrap();
        assert!((c.rho[0] - 0.5).abs() < 1e-14 && (c.rho[1] - 0.5).abs() < 1e-14);
        assert!((c.cov[0][1] - 0.6).abs() < 1e-15 && (c.cov[0][0] - 1.2).abs() < 1e-15);
        let s = ModelSpec::symmetric(3, 1e-6, 1.0, 1.0, 1.0, 1.0);
        assert!(partial_covariances(&s, 0.0)
            .unwrap()
            .rho
            .iter()
            .all(|r| *r < 1e-5));
        let mut s = ModelSpec::symmetric(3, 1.0, 1.0, 1.0, 1.0, 1.0);
        s.sigma_m[1] = 0.0;
        s.sigma_m[2] = 0.0;
        assert_eq!(
            partial_covariances(&s, 0.0),
            Err(Error::DegenerateCorrelation { agent: 0 })
        );
    }

    #[test]
    fn amended_mean_example() {
        let d = derive(&ModelSpec::symmetric(2, 1.0, 1.0, 1.0, 1.0, 1.0)).unwrap();
        let l = amended_mean(&d, 0, 0.0).unwrap();
        assert!((l - (-1.0f64 / 12.0).exp()).abs() < 1e-15);
        assert!(l < 1.0);
    }

    #[test]
    fn hypothetical_trivial_cases() {
        let d = derive(&ModelSpec::symmetric(2, 0.5, 0.4, 1.0, 1.0, 1.0)).unwrap();
        let cov = partial_covariances_derived(&d, 0.2).unwrap();
        let h = hypothetical_cutoff(
            &d,
            &cov,
            0,
            0.2,
            0.0,
            VarianceConvention::Proof,
            HypIntensityForm::Thinned,
        )
        .unwrap();
        assert_eq!(h.g, h.l_minus);
        assert_eq!(h.nu_hyp, 0.0);
        assert_eq!(hyp_rate(3.0, 0.0, HypIntensityForm::Thinned), 0.0);
        assert_eq!(hyp_rate(3.0, 0.0, HypIntensityForm::Literal), 1.5);
    }

    #[test]
    fn aggregation_examples() {
        let d = derive(&ModelSpec::symmetric(2, 0.5, 0.4, 1.0, 1.0, 1.0)).unwrap();
        assert_eq!(
            aggregate_log_cutoffs(&d, &[0.0, 0.0]).unwrap(),
            vec![0.0, 0.0]
        );
        let y = aggregate_log_cutoffs(&d, &[-0.1, -0.1]).unwrap();
        assert!((y[0] - y[1]).abs() < 1e-15);
        // m = 1: log y = log g / κ.
        let d = derive(&ModelSpec::symmetric(1, 0.5, 0.4, 1.3, 1.0, 1.0)).unwrap();
        let y = aggregate_log_cutoffs(&d, &[-0.2]).unwrap();
        assert!((y[0] + 0.2 / d.kappa[0]).abs() < 1e-13);
    }

    #[test]
    fn aggregated_intensity_examples() {
        let d = derive(&ModelSpec::symmetric(1, 0.5, 0.4, 1.3, 1.0, 1.0)).unwrap();
        assert_eq!(aggregated_intensity(&d, 0, &[0.0]), 0.0);
        assert!((aggregated_intensity(&d, 0, &[0.37]) - 0.37).abs() < 1e-15);
        let d = derive(&ModelSpec::symmetric(2, 0.5, 0.4, 1.0, 1.0, 1.0)).unwrap();
        let (k1, km1, k0) = (d.kappa[0], d.kappa_minus[0], d.kappa0);
        let displayed = 2.0 * (k1 / km1) * (1.0 + 2.0 * k1 / k0) * 0.3;
        assert!((aggregated_intensity(&d, 0, &[0.3, 0.3]) - displayed).abs() < 1e-14);
    }

    #[test]
    fn reinitialize_examples() {
        let d = derive(&ModelSpec::symmetric(2, 0.5, 0.4, 1.0, 1.0, 1.0)).unwrap();
        let v = multi_reinitialize(&d, 0, 0.3, &[(0, 1.0), (1, 1.0)], &[5.0, 5.0]).unwrap();
        assert!((v - log_beta_multi(&d, 0, 0.3).exp()).abs() < 1e-15);
        assert_eq!(
            multi_reinitialize(&d, 0, 0.3, &[], &[1.0, 1.0]),
            Err(Error::EmptyDisclosure)
        );
    }
}
