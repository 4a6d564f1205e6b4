//! Independent verification: Monte-Carlo estimates of the equilibrium conditional
//! means, the short-window lower-partial-moment balance, binned regression laws,
//! comparative-statics sweeps, an RK4 reference for the decay ODE, and the m = 1
//! reduction of the multi-agent censor.
//!
//! Estimation sides use raw simulated draws only; engine closed forms appear solely
//! as the quantities under test.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::censor_multi::{
    amended_mean, partial_covariances_derived, HypIntensityForm, MultiCensor,
};
use crate::censor_single::{
    decay_intensity, decay_segment, invert_cutoff, nu_integral, reinitialize, sigma_hat,
};
use crate::error::{Error, Result};
use crate::market::{HistoryFilter, Market, MartingaleAccumulator, MartingaleReport};
use crate::mathkit::{hemi_mean, solve_cutoff};
use crate::params::{derive, tilde_at, DerivedParams, IntensityTable, ModelSpec};
use crate::paths::{simulate_path, substream, TimeGrid, STREAM_ORACLE_BASE};
use crate::regression::{law_at, log_weighted_product, VarianceConvention};

pub const REPORT_SCHEMA: &str = "censor-report/1";

/// Paths per parallel block; each block owns its substreams.
const BLOCK: usize = 4096;

const COMP_LHS: u64 = STREAM_ORACLE_BASE;
const COMP_RHS: u64 = STREAM_ORACLE_BASE + 16;
const COMP_LPM: u64 = STREAM_ORACLE_BASE + 64;
const COMP_REG: u64 = STREAM_ORACLE_BASE + 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

/// Versioned JSON report shared by every check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub claim: String,
    pub estimates: BTreeMap<String, f64>,
    pub standard_errors: BTreeMap<String, f64>,
    pub diagnostics: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
    pub verdict: Verdict,
}

impl Report {
    pub fn new(claim: &str) -> Self {
        Report {
            schema: REPORT_SCHEMA,
            claim: claim.to_string(),
            estimates: BTreeMap::new(),
            standard_errors: BTreeMap::new(),
            diagnostics: BTreeMap::new(),
            warnings: Vec::new(),
            verdict: Verdict::Pass,
        }
    }

    pub fn estimate(&self, key: &str) -> f64 {
        self.estimates.get(key).copied().unwrap_or(f64::NAN)
    }

    pub fn se(&self, key: &str) -> f64 {
        self.standard_errors.get(key).copied().unwrap_or(f64::NAN)
    }

    pub fn diagnostic(&self, key: &str) -> f64 {
        self.diagnostics.get(key).copied().unwrap_or(f64::NAN)
    }

    fn put(&mut self, key: String, value: f64, se: Option<f64>) {
        self.estimates.insert(key.clone(), value);
        if let Some(se) = se {
            self.standard_errors.insert(key, se);
        }
    }

    fn require(&mut self, ok: bool) {
        if !ok {
            self.verdict = Verdict::Fail;
        }
    }
}

/// Streaming mean and variance (Welford), mergeable in a fixed order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, o: &Moments) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let n = (self.n + o.n) as f64;
        let d = o.mean - self.mean;
        self.mean += d * o.n as f64 / n;
        self.m2 += o.m2 + d * d * self.n as f64 * o.n as f64 / n;
        self.n += o.n;
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.mean
        }
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            f64::NAN
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn se(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }
}

fn blocks(n: usize) -> Vec<(u64, usize)> {
    (0..n.div_ceil(BLOCK))
        .map(|b| (b as u64, BLOCK.min(n - b * BLOCK)))
        .collect()
}

fn z_of(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Public full disclosure Y_t = y_t at t, then a window (t, s] with the engine's cutoffs.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowConfig {
    pub t: f64,
    pub s: f64,
    pub y_t: Vec<f64>,
    pub conv: VarianceConvention,
    pub form: HypIntensityForm,
    pub n_paths: usize,
    pub seed: u64,
}

impl WindowConfig {
    pub fn new(spec: &ModelSpec, t: f64, s: f64, n_paths: usize, seed: u64) -> Self {
        WindowConfig {
            t,
            s,
            y_t: spec.initial_observations(),
            conv: VarianceConvention::default(),
            form: HypIntensityForm::default(),
            n_paths,
            seed,
        }
    }

    fn check(&self, m: usize) -> Result<()> {
        if !(0.0 <= self.t && self.t < self.s && self.s < 1.0) {
            return Err(Error::InvertedInterval {
                start: self.t,
                end: self.s,
            });
        }
        if self.y_t.len() != m {
            return Err(Error::InvalidArgument(format!(
                "y_t has {} entries, expected {m}",
                self.y_t.len()
            )));
        }
        if let Some((j, &v)) = self.y_t.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::NonPositiveObservation { agent: j, value: v });
        }
        if self.n_paths < 2 {
            return Err(Error::InvalidArgument("at least two paths required".into()));
        }
        Ok(())
    }
}

/// Engine quantities on a window anchored at t.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineWindow {
    pub cutoffs: Vec<f64>,
    pub gamma_tilde_t: Vec<f64>,
    pub gamma_tilde_s: Vec<f64>,
}

pub fn engine_window(spec: &ModelSpec, cfg: &WindowConfig) -> Result<EngineWindow> {
    spec.validate()?;
    cfg.check(spec.m)?;
    let mut pts = vec![0.0];
    if cfg.t > 0.0 {
        pts.push(cfg.t);
    }
    pts.extend([cfg.s, 1.0]);
    let a = pts.len() - 3;
    let grid = Arc::new(TimeGrid::new(pts)?);
    let c = MultiCensor::new(spec, grid, cfg.conv, cfg.form)?;
    Ok(EngineWindow {
        cutoffs: c.cutoffs(a, &cfg.y_t, a + 1),
        gamma_tilde_t: (0..spec.m)
            .map(|i| c.valuation(i, a, &cfg.y_t, a))
            .collect(),
        gamma_tilde_s: (0..spec.m)
            .map(|i| c.valuation(i, a, &cfg.y_t, a + 1))
            .collect(),
    })
}

/// Exact joint log-increment sampler for (Y¹..Yᵐ).
struct LogStep {
    /// Loadings on the common shock: αⱼσ₀√h.
    common: Vec<f64>,
    /// Idiosyncratic volatilities σᴹⱼ√h.
    own: Vec<f64>,
    /// Itô corrections ½(αⱼσ₀² + σᴹⱼ²)h.
    drift: Vec<f64>,
}

impl LogStep {
    fn new(spec: &ModelSpec, h: f64) -> Self {
        let rh = h.sqrt();
        LogStep {
            common: spec.alpha.iter().map(|a| a * spec.sigma0 * rh).collect(),
            own: spec.sigma_m.iter().map(|s| s * rh).collect(),
            drift: (0..spec.m)
                .map(|j| {
                    0.5 * (spec.alpha[j] * spec.sigma0 * spec.sigma0
                        + spec.sigma_m[j] * spec.sigma_m[j])
                        * h
                })
                .collect(),
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R, xi: &mut [f64]) {
        for v in xi.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
    }

    fn log_incr(&self, xi: &[f64], j: usize) -> f64 {
        self.common[j] * xi[0] + self.own[j] * xi[j + 1] - self.drift[j]
    }

    /// Projects ξ onto {log-increment of agent i = target} (exact Gaussian conditioning).
    fn condition(&self, xi: &mut [f64], i: usize, target: f64) {
        let (c0, ci) = (self.common[i], self.own[i]);
        let norm = c0 * c0 + ci * ci;
        let gap = (target + self.drift[i] - c0 * xi[0] - ci * xi[i + 1]) / norm;
        xi[0] += c0 * gap;
        xi[i + 1] += ci * gap;
    }
}

struct WindowSampler<'a> {
    derived: &'a DerivedParams,
    window: LogStep,
    tail: LogStep,
    q: Vec<f64>,
    log_y_t: Vec<f64>,
    log_cut: Vec<f64>,
    m: usize,
}

impl<'a> WindowSampler<'a> {
    fn new(
        spec: &ModelSpec,
        derived: &'a DerivedParams,
        cfg: &WindowConfig,
        cutoffs: &[f64],
    ) -> Self {
        WindowSampler {
            derived,
            window: LogStep::new(spec, cfg.s - cfg.t),
            tail: LogStep::new(spec, 1.0 - cfg.s),
            q: spec
                .lambda
                .iter()
                .map(|l| 1.0 - (-l.integral(cfg.t, cfg.s)).exp())
                .collect(),
            log_y_t: cfg.y_t.iter().map(|y| y.ln()).collect(),
            log_cut: cutoffs.iter().map(|c| c.ln()).collect(),
            m: spec.m,
        }
    }

    /// Agent j stays silent: no arrival in the window, or an arrival below its cutoff.
    fn silent<R: Rng>(&self, rng: &mut R, j: usize, log_ys: f64) -> bool {
        let u: f64 = rng.random();
        !(u < self.q[j] && log_ys >= self.log_cut[j])
    }

    fn terminal<R: Rng>(&self, rng: &mut R, log_ys: &[f64], xi: &mut [f64], out: &mut [f64]) {
        self.tail.draw(rng, xi);
        let y1: Vec<f64> = (0..self.m)
            .map(|j| (log_ys[j] + self.tail.log_incr(xi, j)).exp())
            .collect();
        for (i, o) in out.iter_mut().enumerate() {
            *o = (self.derived.k_multi[i].ln() + log_weighted_product(self.derived, i, &y1)).exp();
        }
    }

    /// E[V₁ⁱ | all silent] for every i, one block.
    fn lhs_block(&self, seed: u64, block: u64, count: usize) -> (Vec<Moments>, u64) {
        let mut rng = substream(seed, block, COMP_LHS);
        let mut acc = vec![Moments::default(); self.m];
        let mut xi = vec![0.0; self.m + 1];
        let mut log_ys = vec![0.0; self.m];
        let mut v1 = vec![0.0; self.m];
        let mut total = 0u64;
        for _ in 0..count {
            total += 1;
            self.window.draw(&mut rng, &mut xi);
            let mut nd = true;
            for j in 0..self.m {
                log_ys[j] = self.log_y_t[j] + self.window.log_incr(&xi, j);
                nd &= self.silent(&mut rng, j, log_ys[j]);
            }
            if !nd {
                continue;
            }
            self.terminal(&mut rng, &log_ys, &mut xi, &mut v1);
            for i in 0..self.m {
                acc[i].push(v1[i]);
            }
        }
        (acc, total)
    }

    /// E[V₁ⁱ | Yᵢ_s = cutᵢ, others silent], one block.
    fn rhs_block(&self, seed: u64, block: u64, count: usize, i: usize) -> Moments {
        let mut rng = substream(seed, block, COMP_RHS + i as u64);
        let mut acc = Moments::default();
        let mut xi = vec![0.0; self.m + 1];
        let mut log_ys = vec![0.0; self.m];
        let mut v1 = vec![0.0; self.m];
        let target = self.log_cut[i] - self.log_y_t[i];
        for _ in 0..count {
            self.window.draw(&mut rng, &mut xi);
            self.window.condition(&mut xi, i, target);
            let mut nd = true;
            for j in 0..self.m {
                if j == i {
                    log_ys[j] = self.log_cut[i];
                    continue;
                }
                log_ys[j] = self.log_y_t[j] + self.window.log_incr(&xi, j);
                nd &= self.silent(&mut rng, j, log_ys[j]);
            }
            if !nd {
                continue;
            }
            self.terminal(&mut rng, &log_ys, &mut xi, &mut v1);
            acc.push(v1[i]);
        }
        acc
    }

    fn lhs(&self, cfg: &WindowConfig) -> (Vec<Moments>, u64) {
        let parts: Vec<_> = blocks(cfg.n_paths)
            .into_par_iter()
            .map(|(b, c)| self.lhs_block(cfg.seed, b, c))
            .collect();
        let mut acc = vec![Moments::default(); self.m];
        let mut total = 0;
        for (p, t) in &parts {
            for i in 0..self.m {
                acc[i].merge(&p[i]);
            }
            total += t;
        }
        (acc, total)
    }

    fn rhs(&self, cfg: &WindowConfig, i: usize) -> Moments {
        let parts: Vec<_> = blocks(cfg.n_paths)
            .into_par_iter()
            .map(|(b, c)| self.rhs_block(cfg.seed, b, c, i))
            .collect();
        let mut acc = Moments::default();
        for p in &parts {
            acc.merge(p);
        }
        acc
    }
}

fn resolve_cutoffs(engine: &EngineWindow, cutoffs: Option<&[f64]>, m: usize) -> Result<Vec<f64>> {
    match cutoffs {
        None => Ok(engine.cutoffs.clone()),
        Some(c) if c.len() == m && c.iter().all(|v| *v > 0.0) => Ok(c.to_vec()),
        Some(_) => Err(Error::InvalidArgument(format!(
            "{m} positive cutoffs required"
        ))),
    }
}

/// Silence versus at-cutoff conditional means of the terminal valuation for `agent`,
/// each compared with the engine's γ̃_s at 3 SE.
pub fn indifference_check(
    spec: &ModelSpec,
    cfg: &WindowConfig,
    agent: usize,
    cutoffs: Option<&[f64]>,
) -> Result<Report> {
    let derived = derive(spec)?;
    derived.check_agent(agent)?;
    let engine = engine_window(spec, cfg)?;
    let cut = resolve_cutoffs(&engine, cutoffs, spec.m)?;
    let sampler = WindowSampler::new(spec, &derived, cfg, &cut);
    let (lhs, total) = sampler.lhs(cfg);
    let rhs = sampler.rhs(cfg, agent);
    if lhs[agent].n < 2 || rhs.n < 2 {
        return Err(Error::EmptyConditioning(format!(
            "silence: {} paths, at-cutoff: {} paths",
            lhs[agent].n, rhs.n
        )));
    }
    let g = engine.gamma_tilde_s[agent];
    let mut r = Report::new("indifference");
    r.put("engine_gamma_tilde_s".into(), g, None);
    r.put("engine_cutoff".into(), engine.cutoffs[agent], None);
    r.put("cutoff_used".into(), cut[agent], None);
    r.put(
        "mean_given_silence".into(),
        lhs[agent].mean(),
        Some(lhs[agent].se()),
    );
    r.put("mean_at_cutoff".into(), rhs.mean(), Some(rhs.se()));
    let z_l = z_of(lhs[agent].mean() - g, lhs[agent].se());
    let z_r = z_of(rhs.mean() - g, rhs.se());
    r.diagnostics.insert("z_silence".into(), z_l);
    r.diagnostics.insert("z_at_cutoff".into(), z_r);
    r.diagnostics.insert("paths".into(), total as f64);
    r.diagnostics
        .insert("silent_paths".into(), lhs[agent].n as f64);
    r.diagnostics.insert("at_cutoff_paths".into(), rhs.n as f64);
    r.require(z_l.abs() < 3.0 && z_r.abs() < 3.0);
    Ok(r)
}

/// Per-agent equality of the all-silent and at-cutoff conditional means (m ≥ 2).
pub fn nash_check(spec: &ModelSpec, cfg: &WindowConfig, cutoffs: Option<&[f64]>) -> Result<Report> {
    if spec.m < 2 {
        return Err(Error::InvalidArgument(
            "nash check needs at least two agents".into(),
        ));
    }
    let derived = derive(spec)?;
    let engine = engine_window(spec, cfg)?;
    let cut = resolve_cutoffs(&engine, cutoffs, spec.m)?;
    let sampler = WindowSampler::new(spec, &derived, cfg, &cut);
    let (lhs, total) = sampler.lhs(cfg);
    let mut r = Report::new("nash-equilibrium");
    r.diagnostics.insert("paths".into(), total as f64);
    for i in 0..spec.m {
        let rhs = sampler.rhs(cfg, i);
        if lhs[i].n < 2 || rhs.n < 2 {
            return Err(Error::EmptyConditioning(format!(
                "agent {i}: silence {} paths, at-cutoff {} paths",
                lhs[i].n, rhs.n
            )));
        }
        let diff = lhs[i].mean() - rhs.mean();
        let se = (lhs[i].se().powi(2) + rhs.se().powi(2)).sqrt();
        let z = z_of(diff, se);
        r.put(
            format!("agent{i}.mean_given_silence"),
            lhs[i].mean(),
            Some(lhs[i].se()),
        );
        r.put(
            format!("agent{i}.mean_at_cutoff"),
            rhs.mean(),
            Some(rhs.se()),
        );
        r.put(format!("agent{i}.difference"), diff, Some(se));
        r.put(
            format!("agent{i}.engine_gamma_tilde_s"),
            engine.gamma_tilde_s[i],
            None,
        );
        r.put(format!("agent{i}.cutoff_used"), cut[i], None);
        r.diagnostics.insert(format!("agent{i}.z"), z);
        r.diagnostics
            .insert(format!("agent{i}.ess_at_cutoff"), rhs.n as f64);
        r.diagnostics
            .insert(format!("agent{i}.ess_silence"), lhs[i].n as f64);
        r.require(z.abs() < 3.0);
    }
    Ok(r)
}

/// Short-window balance (1−q)(γ̃_t − γ̃_s) = q·E[(γ̃_s − V₁)⁺], q = λ_t(s−t), with V₁ the
/// terminal valuation simulated from Y_t; residual normalized by (s−t). Single agent only.
pub fn lpm_residual_check(spec: &ModelSpec, cfg: &WindowConfig) -> Result<Report> {
    if spec.m != 1 {
        return Err(Error::InvalidArgument(
            "the LPM balance is a single-agent check".into(),
        ));
    }
    let derived = derive(spec)?;
    let engine = engine_window(spec, cfg)?;
    let (gt, gs) = (engine.gamma_tilde_t[0], engine.gamma_tilde_s[0]);
    let h = cfg.s - cfg.t;
    let q = spec.lambda[0].value_at(cfg.t) * h;
    let step = LogStep::new(spec, 1.0 - cfg.t);
    let ly = cfg.y_t[0].ln();
    let parts: Vec<Moments> = blocks(cfg.n_paths)
        .into_par_iter()
        .map(|(b, c)| {
            let mut rng = substream(cfg.seed, b, COMP_LPM);
            let mut acc = Moments::default();
            let mut xi = [0.0; 2];
            for _ in 0..c {
                step.draw(&mut rng, &mut xi);
                let y1 = (ly + step.log_incr(&xi, 0)).exp();
                let v1 = derived.k_multi[0] * y1.powf(derived.exponents[0][0]);
                acc.push((gs - v1).max(0.0));
            }
            acc
        })
        .collect();
    let mut put = Moments::default();
    for p in &parts {
        put.merge(p);
    }
    let lhs = (1.0 - q) * (gt - gs);
    let rhs = q * put.mean();
    let rhs_se = q * put.se();
    // Log-volatility of V₁ given Y_t, from the model parameters.
    let sig = derived.exponents[0][0]
        * ((spec.alpha[0] * spec.sigma0).powi(2) + spec.sigma_m[0].powi(2)).sqrt()
        * (1.0 - cfg.t).sqrt();
    let rhs_cf = q * hemi_mean(gs, gt, sig);
    let resid = (lhs - rhs) / h;
    let resid_se = rhs_se / h;
    let mut r = Report::new("lpm-residual");
    r.put("lhs".into(), lhs, None);
    r.put("rhs_mc".into(), rhs, Some(rhs_se));
    r.put("rhs_closed_form".into(), rhs_cf, None);
    r.put("normalized_residual".into(), resid, Some(resid_se));
    r.put(
        "normalized_residual_closed_form".into(),
        (lhs - rhs_cf) / h,
        None,
    );
    r.put("gamma_tilde_t".into(), gt, None);
    r.put("gamma_tilde_s".into(), gs, None);
    r.diagnostics.insert("q".into(), q);
    r.diagnostics.insert("window".into(), h);
    r.diagnostics
        .insert("z_residual".into(), z_of(resid, resid_se));
    let z_cf = z_of(rhs - rhs_cf, rhs_se);
    r.diagnostics.insert("z_mc_vs_closed_form".into(), z_cf);
    r.require(z_cf.abs() < 3.0);
    Ok(r)
}

/// Ratio of normalized LPM residuals at windows `h_long` and `h_short` with common random numbers.
pub fn lpm_order_check(
    spec: &ModelSpec,
    cfg: &WindowConfig,
    h_long: f64,
    h_short: f64,
    min_ratio: f64,
) -> Result<Report> {
    let long = lpm_residual_check(
        spec,
        &WindowConfig {
            s: cfg.t + h_long,
            ..cfg.clone()
        },
    )?;
    let short = lpm_residual_check(
        spec,
        &WindowConfig {
            s: cfg.t + h_short,
            ..cfg.clone()
        },
    )?;
    let (rl, rs) = (
        long.estimate("normalized_residual"),
        short.estimate("normalized_residual"),
    );
    let ratio = rl.abs() / rs.abs();
    let mut r = Report::new("lpm-residual-order");
    r.put(
        "residual_long".into(),
        rl,
        Some(long.se("normalized_residual")),
    );
    r.put(
        "residual_short".into(),
        rs,
        Some(short.se("normalized_residual")),
    );
    r.put("shrink_ratio".into(), ratio, None);
    r.put(
        "residual_long_closed_form".into(),
        long.estimate("normalized_residual_closed_form"),
        None,
    );
    r.put(
        "residual_short_closed_form".into(),
        short.estimate("normalized_residual_closed_form"),
        None,
    );
    r.diagnostics.insert("window_long".into(), h_long);
    r.diagnostics.insert("window_short".into(), h_short);
    r.require(ratio >= min_ratio && long.verdict.passed() && short.verdict.passed());
    Ok(r)
}

/// Posterior constant Cᵢ with E[Z₁ⁱ | Y₁] = Cᵢ·k_mⁱ⟨Y₁^{eᵢ}⟩ for the unit-horizon model.
pub fn posterior_constant(spec: &ModelSpec, derived: &DerivedParams, i: usize) -> f64 {
    let a = derived.alpha[i];
    let sum_a: f64 = derived.alpha.iter().sum();
    let log_m0: f64 = (0..derived.m)
        .map(|j| derived.exponents[i][j] * spec.m0[j].ln())
        .sum();
    ((a * sum_a - a + a * a) / (2.0 * derived.p_total) + a * derived.kappa0 * spec.x0.ln() - log_m0)
        .exp()
}

/// Pairs (statistic, residual) binned around the sample median of the statistic;
/// half-width starts at 0.005 and doubles until the bin holds `ess_floor` samples.
fn binned_mean(stat: &[f64], resid: &[f64], ess_floor: usize) -> (Moments, f64, f64) {
    let mut sorted = stat.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let center = sorted[sorted.len() / 2];
    let mut width = 0.005;
    loop {
        let mut acc = Moments::default();
        for (s, d) in stat.iter().zip(resid) {
            if (s - center).abs() <= width {
                acc.push(*d);
            }
        }
        if acc.n as usize >= ess_floor || width > 10.0 {
            return (acc, center, width);
        }
        width *= 2.0;
    }
}

pub const BIN_ESS_FLOOR: usize = 1000;

/// Terminal regression law (Z₁ against Cᵢ·k⟨Y₁^e⟩, binned in log⟨Y₁^e⟩) and conditional-mean
/// law (terminal valuation against kβ̃_t⟨Y_t^e⟩, binned in log⟨Y_t^e⟩), every agent.
pub fn regression_check(
    spec: &ModelSpec,
    t: f64,
    n_paths: usize,
    seed: u64,
    conv: VarianceConvention,
) -> Result<Report> {
    let derived = derive(spec)?;
    if !(0.0 < t && t < 1.0) {
        return Err(Error::DegenerateHorizon { t });
    }
    let m = spec.m;
    let mut quiet = spec.clone();
    quiet.lambda = vec![IntensityTable::constant(0.0); m];
    let grid = Arc::new(TimeGrid::new(vec![0.0, t, 1.0])?);
    let laws: Vec<_> = (0..m)
        .map(|i| law_at(&derived, i, t, conv))
        .collect::<Result<_>>()?;
    let consts: Vec<f64> = (0..m)
        .map(|i| posterior_constant(spec, &derived, i))
        .collect();
    // Per path and agent: (lemma-1 stat, lemma-1 residual, lemma-2 stat, lemma-2 residual).
    let rows: Vec<Vec<[f64; 4]>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|j| {
            let p = simulate_path(&quiet, &grid, seed ^ COMP_REG, j);
            let (yt, y1) = (p.y_at(1), p.y_at(2));
            (0..m)
                .map(|i| {
                    let l1 = log_weighted_product(&derived, i, &y1);
                    let v1 = (derived.k_multi[i].ln() + l1).exp();
                    let lt = log_weighted_product(&derived, i, &yt);
                    let pred_t = laws[i].mean(&yt);
                    [l1, p.z[i][2] - consts[i] * v1, lt, v1 - pred_t]
                })
                .collect()
        })
        .collect();
    let mut r = Report::new("regression-laws");
    r.diagnostics.insert("paths".into(), n_paths as f64);
    r.diagnostics.insert("t".into(), t);
    for i in 0..m {
        for (lemma, (si, di)) in [("terminal", (0, 1)), ("conditional", (2, 3))] {
            let stat: Vec<f64> = rows.iter().map(|row| row[i][si]).collect();
            let resid: Vec<f64> = rows.iter().map(|row| row[i][di]).collect();
            let (acc, center, width) = binned_mean(&stat, &resid, BIN_ESS_FLOOR);
            let key = format!("agent{i}.{lemma}");
            if width > 0.005 {
                r.warnings.push(format!(
                    "{key}: bin widened to ±{width} in log to reach {BIN_ESS_FLOOR} samples"
                ));
            }
            if acc.n < 2 {
                return Err(Error::EmptyConditioning(key));
            }
            let z = z_of(acc.mean(), acc.se());
            r.put(format!("{key}.mean_residual"), acc.mean(), Some(acc.se()));
            r.diagnostics.insert(format!("{key}.z"), z);
            r.diagnostics.insert(format!("{key}.ess"), acc.n as f64);
            r.diagnostics.insert(format!("{key}.bin_center"), center);
            r.diagnostics.insert(format!("{key}.bin_half_width"), width);
            r.require(z.abs() < 3.0);
        }
    }
    Ok(r)
}

/// Random specs for the regression check: m from `ms`, parameters uniform in fixed boxes.
pub fn random_regression_specs(ms: &[usize], seed: u64) -> Vec<(ModelSpec, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ms.iter()
        .map(|&m| {
            let mut spec = ModelSpec::symmetric(m, rng.random_range(0.15..0.5), 0.3, 1.0, 1.0, 0.0);
            for j in 0..m {
                spec.sigma_m[j] = rng.random_range(0.15..0.5);
                spec.alpha[j] = rng.random_range(0.5..1.5);
                spec.f[j] = rng.random_range(0.5..2.0);
                spec.m0[j] = rng.random_range(0.8..1.25);
            }
            spec.x0 = rng.random_range(0.8..1.25);
            let t = rng.random_range(0.2..0.8);
            (spec, t)
        })
        .collect()
}

/// Parameter grid for the comparative-statics sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticsGrid {
    pub sigma0: f64,
    pub lambda: f64,
    /// Swept idiosyncratic volatility of agent 0.
    pub sigma_m0: Vec<f64>,
    /// Swept loading of agent 0.
    pub alpha0: Vec<f64>,
    pub times: Vec<f64>,
    /// Idiosyncratic volatilities of the remaining agents.
    pub sigma_m_rest: Vec<f64>,
    pub alpha_rest: Vec<f64>,
}

impl Default for StaticsGrid {
    fn default() -> Self {
        StaticsGrid {
            sigma0: 0.5,
            lambda: 2.0,
            sigma_m0: vec![0.1, 0.2, 0.4, 0.8, 1.6],
            alpha0: vec![0.5, 0.8, 1.0, 1.5, 2.0],
            times: vec![0.0, 0.4, 0.8],
            sigma_m_rest: vec![0.3, 0.6],
            alpha_rest: vec![1.0, 1.2],
        }
    }
}

impl StaticsGrid {
    pub fn cells(&self) -> usize {
        self.sigma_m0.len() * self.alpha0.len() * self.times.len()
    }

    fn spec(&self, sm0: f64, a0: f64, equal_loading: bool) -> ModelSpec {
        let m = 1 + self.sigma_m_rest.len();
        let mut spec = ModelSpec::symmetric(m, self.sigma0, sm0, a0, 1.0, self.lambda);
        for j in 1..m {
            spec.sigma_m[j] = self.sigma_m_rest[j - 1];
            if !equal_loading {
                spec.alpha[j] = self.alpha_rest[j - 1];
            }
        }
        spec
    }
}

const TIE_TOL: f64 = 1e-9;

/// Bandwagon chain and the amended-mean assertions over every cell and agent.
pub fn statics_sweep(grid: &StaticsGrid) -> Result<Report> {
    let mut r = Report::new("comparative-statics");
    let mut counts: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    let mut tally = |name: &'static str, ok: bool| {
        let e = counts.entry(name).or_insert((0.0, 0.0));
        e.0 += 1.0;
        if !ok {
            e.1 += 1.0;
        }
    };
    for &sm0 in &grid.sigma_m0 {
        for &a0 in &grid.alpha0 {
            for &t in &grid.times {
                let spec = grid.spec(sm0, a0, false);
                let d = derive(&spec)?;
                let n = d.m as f64;
                let tilde = tilde_at(&d, t)?;
                let cov = partial_covariances_derived(&d, t)?;
                for i in 0..d.m {
                    let s0i = tilde.sigma0i_sq[i].sqrt();
                    let k = d.kappa[i];
                    let g1 = solve_cutoff(grid.lambda, s0i).y;
                    let g2 = solve_cutoff(grid.lambda, k * s0i).y;
                    let g3 = solve_cutoff(grid.lambda, k * s0i * (1.0 - cov.rho_sq[i]).sqrt()).y;
                    tally("bandwagon", g1 < g2 && g2 < g3);

                    let l = amended_mean(&d, i, t)?;
                    let mut sharper = spec.clone();
                    sharper.sigma_m[i] *= 0.99;
                    let l_sharper = amended_mean(&derive(&sharper)?, i, t)?;
                    tally("monotone_in_precision", l_sharper > l);

                    let (a, p, pi) = (d.alpha[i], d.p_total, d.p[i]);
                    let lower = (-a * (1.0 - t) / (2.0 * (p - pi))).exp();
                    let p_av = (p - pi) / (n - 1.0 + a);
                    let upper =
                        (a * (1.0 + (a - 1.0) / (n - 1.0)) * (1.0 - t) / (2.0 * p_av)).exp();
                    tally("bounds", lower < l && l < upper);

                    let threshold = p / (n - 1.0 + a);
                    if (pi - threshold).abs() > TIE_TOL * threshold {
                        tally("deflator_iff", (l < 1.0) == (pi < threshold));
                    }
                }

                let spec = grid.spec(sm0, a0, true);
                let d = derive(&spec)?;
                let ls: Vec<f64> = (0..d.m)
                    .map(|i| amended_mean(&d, i, t))
                    .collect::<Result<_>>()?;
                for i in 0..d.m {
                    for j in 0..d.m {
                        if i != j && (d.p[i] - d.p[j]).abs() > TIE_TOL * d.p[j] {
                            tally("equal_loading_order", (ls[i] < ls[j]) == (d.p[i] < d.p[j]));
                        }
                    }
                }
            }
        }
    }
    let mut total_violations = 0.0;
    for (name, (checked, violations)) in &counts {
        r.estimates
            .insert(format!("{name}.violations"), *violations);
        r.diagnostics.insert(format!("{name}.checked"), *checked);
        total_violations += violations;
    }
    r.estimates.insert("violations".into(), total_violations);
    r.diagnostics.insert("cells".into(), grid.cells() as f64);
    r.require(total_violations == 0.0);
    Ok(r)
}

/// RK4 solution of γ̂' = −ν_t·γ̂, γ̂(0) = 1, with steps ≤ `step` cut at every λ knot.
pub fn rk4_decay(
    derived: &DerivedParams,
    i: usize,
    table: &IntensityTable,
    conv: VarianceConvention,
    step: f64,
    t_end: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut times = vec![0.0];
    let mut values = vec![1.0];
    let mut y = 1.0;
    for (lo, hi, lam) in table.pieces(0.0, t_end) {
        let n = ((hi - lo) / step).ceil().max(1.0) as usize;
        let h = (hi - lo) / n as f64;
        let rate = |t: f64| decay_intensity(derived, i, t, lam, conv);
        for k in 0..n {
            let t = lo + k as f64 * h;
            let k1 = -rate(t) * y;
            let k2 = -rate(t + 0.5 * h) * (y + 0.5 * h * k1);
            let k3 = -rate(t + 0.5 * h) * (y + 0.5 * h * k2);
            let k4 = -rate(t + h) * (y + h * k3);
            y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            times.push(if k + 1 == n { hi } else { t + h });
            values.push(y);
        }
    }
    (times, values)
}

/// Sup-norm gap between exp(−∫ν) by quadrature and the RK4 solution on its nodes.
pub fn rk4_gap(
    derived: &DerivedParams,
    i: usize,
    table: &IntensityTable,
    conv: VarianceConvention,
    step: f64,
    t_end: f64,
) -> f64 {
    let (times, values) = rk4_decay(derived, i, table, conv, step, t_end);
    let mut acc = 0.0;
    let mut gap: f64 = 0.0;
    for k in 1..times.len() {
        acc += nu_integral(derived, i, table, times[k - 1], times[k], conv);
        gap = gap.max(((-acc).exp() - values[k]).abs());
    }
    gap
}

/// Sup-norm gaps between the m = 1 multi-agent schedule and the single-agent censor
/// from several anchors.
pub fn reduction_check(
    spec: &ModelSpec,
    steps: usize,
    conv: VarianceConvention,
    form: HypIntensityForm,
) -> Result<Report> {
    if spec.m != 1 {
        return Err(Error::InvalidArgument(
            "the reduction check needs m = 1".into(),
        ));
    }
    let derived = derive(spec)?;
    let grid = Arc::new(TimeGrid::uniform(steps)?);
    let censor = MultiCensor::new(spec, Arc::clone(&grid), conv, form)?;
    let y0 = spec.initial_observations()[0];
    let mut worst_val: f64 = 0.0;
    let mut worst_cut: f64 = 0.0;
    for (frac, y) in [
        (0.0, y0),
        (0.25, 1.3 * y0),
        (0.5, 0.8 * y0),
        (0.9, 1.05 * y0),
    ] {
        let a = (frac * steps as f64).round() as usize;
        let ta = grid.points()[a];
        let anchor = reinitialize(&derived, 0, ta, y)?;
        let seg = decay_segment(&derived, 0, ta, anchor, 1.0, &spec.lambda[0], &grid, conv)?;
        for (off, &t) in seg.times.iter().enumerate() {
            let k = a + off;
            let g_single = seg.gamma_tilde(off);
            let c_single = invert_cutoff(&derived, 0, t, g_single)?;
            worst_val = worst_val.max((censor.valuation(0, a, &[y], k) - g_single).abs());
            worst_cut = worst_cut.max((censor.cutoffs(a, &[y], k)[0] - c_single).abs());
        }
    }
    let mut r = Report::new("m1-reduction");
    r.put("sup_valuation_gap".into(), worst_val, None);
    r.put("sup_cutoff_gap".into(), worst_cut, None);
    r.diagnostics.insert("grid_steps".into(), steps as f64);
    r.require(worst_val <= 1e-10 && worst_cut <= 1e-10);
    Ok(r)
}

/// Ranks variance conventions by |z| of the LPM residual on a 3×3 grid of single-agent
/// specs (volatility × intensity); passes when the default wins every cell.
pub fn arbitrate_conventions(n_paths: usize, seed: u64, window: f64) -> Result<Report> {
    let mut r = Report::new("convention-arbitration");
    let mut wins: BTreeMap<VarianceConvention, f64> = BTreeMap::new();
    for &sigma in &[0.2, 0.3, 0.45] {
        for &lambda in &[5.0, 10.0, 20.0] {
            let spec = ModelSpec::symmetric(1, sigma, sigma, 1.0, 1.0, lambda);
            let mut best = (f64::INFINITY, VarianceConvention::default());
            for conv in VarianceConvention::ALL {
                let cfg = WindowConfig {
                    conv,
                    ..WindowConfig::new(&spec, 0.2, 0.2 + window, n_paths, seed)
                };
                let rep = lpm_residual_check(&spec, &cfg)?;
                let z = rep.diagnostic("z_residual");
                r.diagnostics
                    .insert(format!("sigma{sigma}.lambda{lambda}.{conv}.z"), z);
                if z.abs() < best.0 {
                    best = (z.abs(), conv);
                }
            }
            *wins.entry(best.1).or_insert(0.0) += 1.0;
            r.require(best.1 == VarianceConvention::default());
        }
    }
    for conv in VarianceConvention::ALL {
        r.estimates.insert(
            format!("{conv}.cells_won"),
            wins.get(&conv).copied().unwrap_or(0.0),
        );
    }
    Ok(r)
}

/// Martingale reports of agent 0 for several (t, s) pairs, streamed over path chunks.
#[allow(clippy::too_many_arguments)]
pub fn martingale_study(
    spec: &ModelSpec,
    steps: usize,
    pairs: &[(f64, f64)],
    filter: HistoryFilter,
    n_paths: usize,
    seed: u64,
    conv: VarianceConvention,
    form: HypIntensityForm,
) -> Result<Vec<MartingaleReport>> {
    let grid = Arc::new(TimeGrid::uniform(steps)?);
    let market = Market::new(MultiCensor::new(spec, Arc::clone(&grid), conv, form)?);
    let fresh = || -> Result<Vec<MartingaleAccumulator>> {
        pairs
            .iter()
            .map(|&(t, s)| MartingaleAccumulator::new(&grid, 0, t, s, filter))
            .collect()
    };
    let mut total = fresh()?;
    let chunk = 1024u64;
    let chunks = (n_paths as u64).div_ceil(chunk);
    let parts: Vec<Result<Vec<MartingaleAccumulator>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut accs = fresh()?;
            let end = ((c + 1) * chunk).min(n_paths as u64);
            for j in c * chunk..end {
                let track = market.run_path(&simulate_path(spec, &grid, seed, j))?;
                for a in accs.iter_mut() {
                    a.push(&track);
                }
            }
            Ok(accs)
        })
        .collect();
    for p in parts {
        for (a, b) in total.iter_mut().zip(p?.iter()) {
            a.merge(b);
        }
    }
    total.iter().map(|a| a.report()).collect()
}

/// Engine σ̂ at t for agent 0, exposed for reports.
pub fn engine_sigma_hat(spec: &ModelSpec, t: f64, conv: VarianceConvention) -> Result<f64> {
    Ok(sigma_hat(&derive(spec)?, 0, t, conv))
}
