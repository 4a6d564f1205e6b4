//! Model specification, validation, and the derived precision/regression parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-constant intensity λ(t) on [0,1].
///
/// `knots` partitions [0,1] (`knots[0] = 0`, last = 1, strictly increasing) and
/// `values[k]` holds on `[knots[k], knots[k+1])`; the last piece also covers t = 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntensityTable {
    knots: Vec<f64>,
    values: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum IntensityRepr {
    Constant(f64),
    Table { knots: Vec<f64>, values: Vec<f64> },
}

impl<'de> Deserialize<'de> for IntensityTable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        // Shape only; numeric validity is checked by `ModelSpec::validate` with field paths.
        Ok(match IntensityRepr::deserialize(d)? {
            IntensityRepr::Constant(v) => IntensityTable {
                knots: vec![0.0, 1.0],
                values: vec![v],
            },
            IntensityRepr::Table { knots, values } => IntensityTable { knots, values },
        })
    }
}

impl IntensityTable {
    pub fn constant(value: f64) -> Self {
        IntensityTable {
            knots: vec![0.0, 1.0],
            values: vec![value],
        }
    }

    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let table = IntensityTable { knots, values };
        table.check("lambda")?;
        Ok(table)
    }

    fn check(&self, field: &str) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::field(format!("{field}.values"), "must be non-empty"));
        }
        if self.knots.len() != self.values.len() + 1 {
            return Err(Error::field(
                format!("{field}.knots"),
                format!(
                    "expected {} knots for {} values, found {}",
                    self.values.len() + 1,
                    self.values.len(),
                    self.knots.len()
                ),
            ));
        }
        if self.knots[0] != 0.0 || *self.knots.last().unwrap() != 1.0 {
            return Err(Error::field(
                format!("{field}.knots"),
                "must start at 0 and end at 1",
            ));
        }
        for (k, w) in self.knots.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::field(
                    format!("{field}.knots[{}]", k + 1),
                    "knots must be strictly increasing",
                ));
            }
        }
        for (k, v) in self.values.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::field(
                    format!("{field}.values[{k}]"),
                    format!("intensity must be finite and non-negative, got {v}"),
                ));
            }
        }
        Ok(())
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// λ(t), right-continuous; t = 1 falls in the last piece.
    pub fn value_at(&self, t: f64) -> f64 {
        let n = self.values.len();
        let k = self.knots[1..n].partition_point(|&x| x <= t);
        self.values[k]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Pieces `(lo, hi, λ)` covering `[a, b]`, clipped to the interval; empty pieces skipped.
    pub fn pieces(&self, a: f64, b: f64) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for (k, &v) in self.values.iter().enumerate() {
            let lo = self.knots[k].max(a);
            let hi = self.knots[k + 1].min(b);
            if hi > lo {
                out.push((lo, hi, v));
            }
        }
        out
    }

    /// ∫_a^b λ(t) dt, exact.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.pieces(a, b)
            .iter()
            .map(|(lo, hi, v)| (hi - lo) * v)
            .sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        IntensityTable {
            knots: self.knots.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Full model parameterization. JSON field names match the struct fields
/// (`sigmaM` for the noise volatilities); `m0` defaults to all ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub m: usize,
    pub sigma0: f64,
    #[serde(rename = "sigmaM")]
    pub sigma_m: Vec<f64>,
    pub alpha: Vec<f64>,
    pub f: Vec<f64>,
    pub lambda: Vec<IntensityTable>,
    pub x0: f64,
    #[serde(default)]
    pub m0: Vec<f64>,
}

impl ModelSpec {
    /// Parses and validates a JSON config; syntax errors carry line/column, value errors the field path.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut spec: ModelSpec = serde_json::from_str(text).map_err(|e| Error::Config {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if spec.m0.is_empty() {
            spec.m0 = vec![1.0; spec.m];
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Symmetric spec: every agent shares `sigma_m`, `alpha`, `f`, `lambda`; X₀ = M₀ = 1.
    pub fn symmetric(m: usize, sigma0: f64, sigma_m: f64, alpha: f64, f: f64, lambda: f64) -> Self {
        ModelSpec {
            m,
            sigma0,
            sigma_m: vec![sigma_m; m],
            alpha: vec![alpha; m],
            f: vec![f; m],
            lambda: vec![IntensityTable::constant(lambda); m],
            x0: 1.0,
            m0: vec![1.0; m],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::field("m", "agent count must be positive"));
        }
        if !self.sigma0.is_finite() || self.sigma0 <= 0.0 {
            return Err(Error::field(
                "sigma0",
                format!("must be finite and strictly positive, got {}", self.sigma0),
            ));
        }
        if !self.x0.is_finite() || self.x0 <= 0.0 {
            return Err(Error::field(
                "x0",
                format!("must be finite and positive, got {}", self.x0),
            ));
        }
        let lens = [
            ("sigmaM", self.sigma_m.len()),
            ("alpha", self.alpha.len()),
            ("f", self.f.len()),
            ("lambda", self.lambda.len()),
            ("m0", self.m0.len()),
        ];
        for (name, len) in lens {
            if len != self.m {
                return Err(Error::field(
                    name,
                    format!("length {len} does not match m = {}", self.m),
                ));
            }
        }
        for (i, v) in self.sigma_m.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::field(
                    format!("sigmaM[{i}]"),
                    format!("must be finite and non-negative, got {v}"),
                ));
            }
        }
        let positive = [("alpha", &self.alpha), ("f", &self.f), ("m0", &self.m0)];
        for (name, vec) in positive {
            for (i, v) in vec.iter().enumerate() {
                if !v.is_finite() || *v <= 0.0 {
                    return Err(Error::field(
                        format!("{name}[{i}]"),
                        format!("must be finite and positive, got {v}"),
                    ));
                }
            }
        }
        for (i, table) in self.lambda.iter().enumerate() {
            table.check(&format!("lambda[{i}]"))?;
        }
        Ok(())
    }

    /// Initial observations Y₀ⁱ = fⁱ·X₀^{αᵢ}·M₀ⁱ.
    pub fn initial_observations(&self) -> Vec<f64> {
        (0..self.m)
            .map(|i| self.f[i] * self.x0.powf(self.alpha[i]) * self.m0[i])
            .collect()
    }
}

/// Precisions and regression weights. Agents are indexed `0..m`; the common
/// factor's precision is stored separately as `p0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedParams {
    pub m: usize,
    pub sigma0: f64,
    /// σᵢ = σᵢᴹ/αᵢ.
    pub sigma_i: Vec<f64>,
    pub alpha: Vec<f64>,
    pub f: Vec<f64>,
    pub p0: f64,
    pub p: Vec<f64>,
    pub p_total: f64,
    pub kappa0: f64,
    pub kappa: Vec<f64>,
    /// κ₋ᵢ = pᵢ/(p − pᵢ).
    pub kappa_minus: Vec<f64>,
    /// κ₁ⁱ = pᵢ/(p₀ + pᵢ).
    pub kappa1: Vec<f64>,
    /// k₁ⁱ = (fⁱ)^{1−κ₁ⁱ}.
    pub k_single: Vec<f64>,
    /// k_mⁱ = fⁱ·Πⱼ fⱼ^{−eᵢⱼ}.
    pub k_multi: Vec<f64>,
    /// Terminal regression exponents eᵢⱼ = αᵢκⱼ/αⱼ.
    pub exponents: Vec<Vec<f64>>,
}

impl DerivedParams {
    pub fn check_agent(&self, i: usize) -> Result<()> {
        if i >= self.m {
            return Err(Error::AgentOutOfRange {
                agent: i,
                m: self.m,
            });
        }
        Ok(())
    }
}

pub fn derive(spec: &ModelSpec) -> Result<DerivedParams> {
    spec.validate()?;
    let m = spec.m;
    let sigma_i: Vec<f64> = (0..m).map(|i| spec.sigma_m[i] / spec.alpha[i]).collect();
    if let Some(i) = sigma_i.iter().position(|&s| s == 0.0) {
        return Err(Error::InfinitePrecision { agent: i });
    }
    let p0 = 1.0 / (spec.sigma0 * spec.sigma0);
    let p: Vec<f64> = sigma_i.iter().map(|s| 1.0 / (s * s)).collect();
    let p_total = p0 + p.iter().sum::<f64>();
    let kappa0 = p0 / p_total;
    let kappa: Vec<f64> = p.iter().map(|pi| pi / p_total).collect();
    let kappa_minus: Vec<f64> = p.iter().map(|pi| pi / (p_total - pi)).collect();
    let kappa1: Vec<f64> = p.iter().map(|pi| pi / (p0 + pi)).collect();
    let k_single: Vec<f64> = (0..m).map(|i| spec.f[i].powf(1.0 - kappa1[i])).collect();
    let exponents: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| spec.alpha[i] * kappa[j] / spec.alpha[j])
                .collect()
        })
        .collect();
    let k_multi: Vec<f64> = (0..m)
        .map(|i| {
            let log_k = spec.f[i].ln()
                - (0..m)
                    .map(|j| exponents[i][j] * spec.f[j].ln())
                    .sum::<f64>();
            log_k.exp()
        })
        .collect();
    Ok(DerivedParams {
        m,
        sigma0: spec.sigma0,
        sigma_i,
        alpha: spec.alpha.clone(),
        f: spec.f.clone(),
        p0,
        p,
        p_total,
        kappa0,
        kappa,
        kappa_minus,
        kappa1,
        k_single,
        k_multi,
        exponents,
    })
}

/// Remaining-horizon quantities at time t: variances scale by (1−t), precisions by 1/(1−t).
#[derive(Debug, Clone, PartialEq)]
pub struct TildeParams {
    pub t: f64,
    /// σ̃₀ᵢ² = (1−t)(σ₀² + σᵢ²).
    pub sigma0i_sq: Vec<f64>,
    pub p_tilde0: f64,
    pub p_tilde_i: Vec<f64>,
    /// p̃ = p̃₀ + Σp̃ᵢ.
    pub p_tilde: f64,
}

pub fn tilde_at(derived: &DerivedParams, t: f64) -> Result<TildeParams> {
    if !(t < 1.0) || !(t >= 0.0) {
        return Err(Error::DegenerateHorizon { t });
    }
    let s = 1.0 - t;
    let s0 = derived.sigma0 * derived.sigma0;
    Ok(TildeParams {
        t,
        sigma0i_sq: derived
            .sigma_i
            .iter()
            .map(|si| s * (s0 + si * si))
            .collect(),
        p_tilde0: derived.p0 / s,
        p_tilde_i: derived.p.iter().map(|pi| pi / s).collect(),
        p_tilde: derived.p_total / s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec3() -> ModelSpec {
        ModelSpec {
            m: 2,
            sigma0: 1.0,
            sigma_m: vec![2.0, 1.0],
            alpha: vec![2.0, 1.0],
            f: vec![1.0, 1.0],
            lambda: vec![IntensityTable::constant(1.0); 2],
            x0: 1.0,
            m0: vec![1.0; 2],
        }
    }

    #[test]
    fn symmetric_unit_spec() {
        let d = derive(&ModelSpec::symmetric(1, 1.0, 1.0, 1.0, 1.0, 1.0)).unwrap();
        assert_eq!(d.p0, 1.0);
        assert_eq!(d.p[0], 1.0);
        assert_eq!(d.kappa0, 0.5);
        assert_eq!(d.kappa[0], 0.5);
        assert_eq!(d.kappa1[0], 0.5);
        assert_eq!(d.k_single[0], 1.0);
    }

    #[test]
    fn unit_size_constant_gives_unit_k() {
        let mut s = ModelSpec::symmetric(1, 0.3, 0.7, 1.3, 1.0, 1.0);
        s.sigma_m[0] = 0.45;
        let d = derive(&s).unwrap();
        assert_eq!(d.k_single[0], 1.0);
    }

    #[test]
    fn three_equal_precisions() {
        let d = derive(&spec3()).unwrap();
        assert_eq!(d.sigma_i, vec![1.0, 1.0]);
        for x in [d.p0, d.p[0], d.p[1]] {
            assert_eq!(x, 1.0);
        }
        for x in [d.kappa0, d.kappa[0], d.kappa[1]] {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((d.kappa_minus[0] - 0.5).abs() < 1e-15);
        assert!((d.kappa_minus[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn tilde_examples() {
        let d = derive(&ModelSpec::symmetric(1, 1.0, 1.0, 1.0, 1.0, 1.0)).unwrap();
        assert_eq!(tilde_at(&d, 0.0).unwrap().sigma0i_sq[0], 2.0);
        assert_eq!(tilde_at(&d, 0.75).unwrap().sigma0i_sq[0], 0.5);
        assert!(tilde_at(&d, 1.0 - 1e-12).unwrap().sigma0i_sq[0] < 1e-11);
        assert_eq!(tilde_at(&d, 1.0), Err(Error::DegenerateHorizon { t: 1.0 }));
    }

    #[test]
    fn derive_rejects_zero_noise() {
        let mut s = ModelSpec::symmetric(2, 1.0, 1.0, 1.0, 1.0, 1.0);
        s.sigma_m[1] = 0.0;
        assert!(s.validate().is_ok());
        assert_eq!(derive(&s), Err(Error::InfinitePrecision { agent: 1 }));
    }

    #[test]
    fn validate_rejects_zero_sigma0_and_bad_lengths() {
        let mut s = ModelSpec::symmetric(2, 0.0, 1.0, 1.0, 1.0, 1.0);
        assert!(
            matches!(s.validate(), Err(Error::InvalidField { field, .. }) if field == "sigma0")
        );
        s.sigma0 = 1.0;
        s.alpha.pop();
        assert!(matches!(s.validate(), Err(Error::InvalidField { field, .. }) if field == "alpha"));
        let mut s = ModelSpec::symmetric(2, 1.0, 1.0, 1.0, 1.0, 1.0);
        s.m = 0;
        assert!(matches!(s.validate(), Err(Error::InvalidField { field, .. }) if field == "m"));
    }

    #[test]
    fn json_config_parses_with_defaults_and_tables() {
        let text = r#"{
            "m": 2, "sigma0": 0.2, "sigmaM": [0.3, 0.4], "alpha": [1, 1.5], "f": [1, 2],
            "lambda": [2.0, {"knots": [0, 0.5, 1], "values": [4, 0]}], "x0": 1.0
        }"#;
        let s = ModelSpec::from_json_str(text).unwrap();
        assert_eq!(s.m0, vec![1.0, 1.0]);
        assert_eq!(s.lambda[1].value_at(0.25), 4.0);
        assert_eq!(s.lambda[1].value_at(0.5), 0.0);
        assert_eq!(s.lambda[1].value_at(1.0), 0.0);
        assert_eq!(s.lambda[1].integral(0.0, 1.0), 2.0);
        assert_eq!(s.lambda[0].integral(0.25, 0.75), 1.0);
    }

    #[test]
    fn json_errors_are_located() {
        let text = "{\n  \"m\": 1,\n  \"sigma0\": 0.2,\n  \"sigmaM\": [0.3],\n  \"alpha\": [1],\n  \"f\": [1],\n  \"lambda\": [1],\n  \"x0\": 1,\n  \"bogus\": 3\n}";
        match ModelSpec::from_json_str(text) {
            Err(Error::Config { line, message, .. }) => {
                assert_eq!(line, 9);
                assert!(message.contains("bogus"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let text = r#"{"m": 1, "sigma0": 0.2, "sigmaM": [-0.3], "alpha": [1], "f": [1], "lambda": [1], "x0": 1}"#;
        assert!(
            matches!(ModelSpec::from_json_str(text), Err(Error::InvalidField { field, .. }) if field == "sigmaM[0]")
        );
        let text = r#"{"m": 1, "sigma0": 0.2, "sigmaM": [0.3], "alpha": [1], "f": [1],
            "lambda": [{"knots": [0, 0.7, 0.6, 1], "values": [1, 2, 3]}], "x0": 1}"#;
        assert!(
            matches!(ModelSpec::from_json_str(text), Err(Error::InvalidField { field, .. }) if field == "lambda[0].knots[2]")
        );
    }

    #[test]
    fn derive_is_bit_identical() {
        let s = spec3();
        assert_eq!(derive(&s).unwrap(), derive(&s).unwrap());
    }
}
