//! Closed-form regression (valuation) maps: terminal valuation given observations,
//! and the time-t conditional mean with its β̃ factors and Ẑ log-variance.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathkit::mu_factor;
use crate::params::DerivedParams;

/// Which published form of the Ẑ log-variance drives σ̂:
/// `Theorem1` α²σ̃₀ᵢ², `Lemma2` κα²σ̃₀ᵢ², `Proof` κ²α²σ̃₀ᵢ² (default).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum VarianceConvention {
    Theorem1,
    Lemma2,
    #[default]
    Proof,
}

impl VarianceConvention {
    pub const ALL: [VarianceConvention; 3] = [
        VarianceConvention::Theorem1,
        VarianceConvention::Lemma2,
        VarianceConvention::Proof,
    ];

    /// Power of κ multiplying α²σ̃₀ᵢ².
    pub fn kappa_power(self) -> i32 {
        match self {
            VarianceConvention::Theorem1 => 0,
            VarianceConvention::Lemma2 => 1,
            VarianceConvention::Proof => 2,
        }
    }

    /// Factor on ασ̃₀ᵢ in σ̂ (square root of the variance factor).
    pub fn sigma_scale(self, kappa: f64) -> f64 {
        match self {
            VarianceConvention::Theorem1 => 1.0,
            VarianceConvention::Lemma2 => kappa.sqrt(),
            VarianceConvention::Proof => kappa,
        }
    }
}

impl fmt::Display for VarianceConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VarianceConvention::Theorem1 => "theorem1",
            VarianceConvention::Lemma2 => "lemma2",
            VarianceConvention::Proof => "proof",
        })
    }
}

impl FromStr for VarianceConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "theorem1" => Ok(VarianceConvention::Theorem1),
            "lemma2" => Ok(VarianceConvention::Lemma2),
            "proof" => Ok(VarianceConvention::Proof),
            other => Err(Error::InvalidArgument(format!(
                "unknown convention `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionLaw {
    pub agent: usize,
    pub t: f64,
    pub k: f64,
    /// Exponents on (y¹..yᵐ); a single entry for the single-agent law.
    pub kappa_vec: Vec<f64>,
    pub beta_indiv: f64,
    pub beta_agg: f64,
    pub zhat_logvar: f64,
}

impl RegressionLaw {
    pub fn beta(&self) -> f64 {
        self.beta_indiv * self.beta_agg
    }

    /// k·β̃·Πⱼ yⱼ^{eⱼ}, computed in log space.
    pub fn mean(&self, y: &[f64]) -> f64 {
        let log_prod: f64 = self.kappa_vec.iter().zip(y).map(|(e, v)| e * v.ln()).sum();
        (self.k.ln() + self.beta_indiv.ln() + self.beta_agg.ln() + log_prod).exp()
    }
}

fn check_obs(y: &[f64]) -> Result<()> {
    if let Some((j, &v)) = y.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonPositiveObservation { agent: j, value: v });
    }
    Ok(())
}

/// Log of Πⱼ yⱼ^{eᵢⱼ}.
pub fn log_weighted_product(derived: &DerivedParams, i: usize, y: &[f64]) -> f64 {
    derived.exponents[i]
        .iter()
        .zip(y)
        .map(|(e, v)| e * v.ln())
        .sum()
}

/// Terminal valuation k_mⁱ·Πⱼ yⱼ^{eᵢⱼ}; for m = 1 this is k₁ y^κ.
pub fn terminal_valuation(derived: &DerivedParams, i: usize, y: &[f64]) -> Result<f64> {
    derived.check_agent(i)?;
    if y.len() != derived.m {
        return Err(Error::InvalidArgument(format!(
            "expected {} observations, got {}",
            derived.m,
            y.len()
        )));
    }
    check_obs(y)?;
    Ok((derived.k_multi[i].ln() + log_weighted_product(derived, i, y)).exp())
}

/// Single-agent terminal valuation k₁ⁱ y^{κ₁ⁱ} (agent i viewed in isolation).
pub fn terminal_single(derived: &DerivedParams, i: usize, y: f64) -> Result<f64> {
    derived.check_agent(i)?;
    check_obs(&[y])?;
    Ok(derived.k_single[i] * y.powf(derived.kappa1[i]))
}

/// (log β̃_indiv, log β̃_agg, exact Ẑ log-variance) of the multi-agent law; valid on [0,1].
pub(crate) fn multi_log_factors(d: &DerivedParams, i: usize, t: f64) -> (f64, f64, f64) {
    let s = (1.0 - t).max(0.0);
    let s0 = d.sigma0 * d.sigma0 * s;
    let ai = d.alpha[i];
    let w0 = 1.0 - d.kappa0;
    let sum_sq: f64 = (0..d.m)
        .map(|j| (d.kappa[j] * d.sigma_i[j]).powi(2))
        .sum::<f64>()
        * s;
    let v = ai * ai * (w0 * w0 * s0 + sum_sq);
    let cross: f64 = (0..d.m)
        .map(|j| d.kappa[j] * d.alpha[j] * d.sigma_i[j] * d.sigma_i[j])
        .sum::<f64>()
        * s;
    let log_indiv = 0.5 * ai * (ai - 1.0) * w0 * s0;
    let log_agg = 0.5 * (v - w0 * ai * ai * s0 - ai * cross);
    (log_indiv, log_agg, v)
}

/// (log β̃_indiv, log β̃_agg, exact Ẑ log-variance) of the single-agent law; valid on [0,1].
pub(crate) fn single_log_factors(d: &DerivedParams, i: usize, t: f64) -> (f64, f64, f64) {
    let s = (1.0 - t).max(0.0);
    let kappa = d.kappa1[i];
    let ai = d.alpha[i];
    let s0 = d.sigma0 * d.sigma0 * s;
    let s0i = s0 + d.sigma_i[i] * d.sigma_i[i] * s;
    let v = kappa * kappa * ai * ai * s0i;
    let log_indiv = mu_factor(ai, kappa * s0).ln();
    let log_agg = mu_factor(kappa, ai * ai * s0i).ln();
    (log_indiv, log_agg, v)
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..1.0).contains(&t) {
        return Err(Error::DegenerateHorizon { t });
    }
    Ok(())
}

/// Time-t law of agent i's terminal valuation given Y_t = y (all agents observed).
pub fn law_at(
    derived: &DerivedParams,
    i: usize,
    t: f64,
    conv: VarianceConvention,
) -> Result<RegressionLaw> {
    derived.check_agent(i)?;
    check_time(t)?;
    let (li, la, v) = multi_log_factors(derived, i, t);
    Ok(RegressionLaw {
        agent: i,
        t,
        k: derived.k_multi[i],
        kappa_vec: derived.exponents[i].clone(),
        beta_indiv: li.exp(),
        beta_agg: la.exp(),
        zhat_logvar: v * derived.kappa[i].powi(conv.kappa_power() - 2),
    })
}

/// Time-t law of agent i's single-agent valuation k₁ⁱ(Y₁ⁱ)^{κ₁ⁱ} given Y_tⁱ = y.
pub fn single_law(
    derived: &DerivedParams,
    i: usize,
    t: f64,
    conv: VarianceConvention,
) -> Result<RegressionLaw> {
    derived.check_agent(i)?;
    check_time(t)?;
    let (li, la, v) = single_log_factors(derived, i, t);
    let kappa = derived.kappa1[i];
    Ok(RegressionLaw {
        agent: i,
        t,
        k: derived.k_single[i],
        kappa_vec: vec![kappa],
        beta_indiv: li.exp(),
        beta_agg: la.exp(),
        zhat_logvar: v * kappa.powi(conv.kappa_power() - 2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{derive, ModelSpec};

    #[test]
    fn terminal_examples() {
        let d = derive(&ModelSpec::symmetric(1, 1.0, 1.0, 1.0, 1.0, 1.0)).unwrap();
        assert_eq!(terminal_valuation(&d, 0, &[1.0]).unwrap(), 1.0);
        assert!((terminal_valuation(&d, 0, &[4.0]).unwrap() - 2.0).abs() < 1e-15);
        let d = derive(&ModelSpec::symmetric(2, 1.0, 1.0, 1.0, 1.0, 1.0)).unwrap();
        let v = terminal_valuation(&d, 0, &[2.0, 8.0]).unwrap();
        assert!((v - 16f64.powf(1.0 / 3.0)).abs() < 1e-14);
        assert!(matches!(
            terminal_valuation(&d, 0, &[2.0, 0.0]),
            Err(Error::NonPositiveObservation { agent: 1, .. })
        ));
    }

    #[test]
    fn law_examples() {
        let d = derive(&ModelSpec::symmetric(1, 1.0, 1.0, 1.0, 1.0, 1.0)).unwrap();
        let law = law_at(&d, 0, 0.0, VarianceConvention::Proof).unwrap();
        assert!((law.beta_agg - (-0.25f64).exp()).abs() < 1e-15);
        assert!((law.beta_indiv - 1.0).abs() < 1e-15);
        let late = law_at(&d, 0, 1.0 - 1e-15, VarianceConvention::Proof).unwrap();
        assert!((late.beta() - 1.0).abs() < 1e-13 && late.zhat_logvar < 1e-13);
        assert!(law_at(&d, 0, 1.0, VarianceConvention::Proof).is_err());
    }

    #[test]
    fn m1_multi_law_reduces_to_single_law() {
        let mut spec = ModelSpec::symmetric(1, 0.37, 0.81, 1.7, 2.3, 1.0);
        spec.x0 = 1.3;
        let d = derive(&spec).unwrap();
        for conv in VarianceConvention::ALL {
            for t in [0.0, 0.2, 0.77] {
                let a = law_at(&d, 0, t, conv).unwrap();
                let b = single_law(&d, 0, t, conv).unwrap();
                assert!((a.k - b.k).abs() < 1e-12);
                assert!((a.kappa_vec[0] - b.kappa_vec[0]).abs() < 1e-12);
                assert!((a.beta_indiv - b.beta_indiv).abs() < 1e-12);
                assert!((a.beta_agg - b.beta_agg).abs() < 1e-12);
                assert!((a.zhat_logvar - b.zhat_logvar).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conventions_scale_variance() {
        let d = derive(&ModelSpec::symmetric(1, 1.0, 1.0, 1.0, 1.0, 1.0)).unwrap();
        let v: Vec<f64> = VarianceConvention::ALL
            .iter()
            .map(|&c| single_law(&d, 0, 0.0, c).unwrap().zhat_logvar)
            .collect();
        assert!((v[0] - 2.0).abs() < 1e-15);
        assert!((v[1] - 1.0).abs() < 1e-15);
        assert!((v[2] - 0.5).abs() < 1e-15);
        assert_eq!(
            "PROOF".parse::<VarianceConvention>().unwrap(),
            VarianceConvention::Proof
        );
    }

    #[test]
    fn beta_power_bookkeeping_for_general_delta() {
        // (Y₁)^δ = (μ⁰Y_t)^δ μ(δ, α²σ̃₀ᵢ²) Ẑ(δ): the mean of Y₁^δ given Y_t = 1 is
        // exp(δ·drift + ½δ²·var); check the μ factorization reproduces it.
        let (a, s0, s1, t, delta) = (1.4_f64, 0.3_f64, 0.5_f64, 0.35_f64, 0.6_f64);
        let s = 1.0 - t;
        let drift = -0.5 * a * s0 * s0 * s - 0.5 * a * a * s1 * s1 * s;
        let var = a * a * (s0 * s0 + s1 * s1) * s;
        let direct = (delta * drift + 0.5 * delta * delta * var).exp();
        let mu0 = mu_factor(a, s0 * s0 * s).powf(delta);
        let factored = mu0 * mu_factor(delta, var);
        assert!((direct - factored).abs() < 1e-14);
    }
}
