//! Anomaly score from the fused feature and the two text directions.
//!
//! Two forms are provided:
//!
//! * [`ScoreMode::PaperLiteral`]: `s = a / (a + n)` with `a = e·t_anomaly`
//!   and `n = e·t_normal`. Undefined when the denominator vanishes and
//!   meaningless when it changes sign, so both cases are errors.
//! * [`ScoreMode::Stabilized`]: the two-class softmax
//!   `exp(a/τ) / (exp(a/τ) + exp(n/τ))`, always in `(0, 1)` and monotone in
//!   `a - n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CategoryId, EmbeddingVector};

const DENOMINATOR_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    PaperLiteral,
    #[default]
    Stabilized,
}

impl ScoreMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScoreMode::PaperLiteral => "paper-literal",
            ScoreMode::Stabilized => "stabilized",
        }
    }
}

impl std::str::FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-literal" => Ok(ScoreMode::PaperLiteral),
            "stabilized" => Ok(ScoreMode::Stabilized),
            other => Err(Error::Config(format!("unknown score mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreConfig {
    pub mode: ScoreMode,
    pub temperature: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            mode: ScoreMode::Stabilized,
            temperature: 0.01,
        }
    }
}

impl ScoreConfig {
    pub fn paper_literal() -> Self {
        Self {
            mode: ScoreMode::PaperLiteral,
            ..Self::default()
        }
    }

    pub fn stabilized(temperature: f64) -> Self {
        Self {
            mode: ScoreMode::Stabilized,
            temperature,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "score.temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_id: String,
    pub category: CategoryId,
    pub score: f64,
    pub n_patches: usize,
    pub mode: ScoreMode,
    pub sim_normal: f64,
    pub sim_anomaly: f64,
}

/// Dot product of two unit vectors.
pub fn similarity(e: &EmbeddingVector, t: &EmbeddingVector) -> Result<f64> {
    if e.dim() != t.dim() {
        return Err(Error::DimMismatch {
            left: e.dim(),
            right: t.dim(),
        });
    }
    Ok(e.values().iter().zip(t.values()).map(|(a, b)| a * b).sum())
}

/// Score from precomputed similarities.
pub fn score_from_similarities(sim_anomaly: f64, sim_normal: f64, config: &ScoreConfig) -> Result<f64> {
    match config.mode {
        ScoreMode::PaperLiteral => {
            let denominator = sim_anomaly + sim_normal;
            let sign_inconsistent = denominator <= 0.0 && (sim_anomaly > 0.0 || sim_normal > 0.0);
            if denominator.abs() < DENOMINATOR_EPS || sign_inconsistent {
                return Err(Error::DegenerateDenominator {
                    sim_anomaly,
                    sim_normal,
                });
            }
            Ok(sim_anomaly / denominator)
        }
        ScoreMode::Stabilized => {
            config.validate()?;
            let za = sim_anomaly / config.temperature;
            let zn = sim_normal / config.temperature;
            let m = za.max(zn);
            let ea = (za - m).exp();
            let en = (zn - m).exp();
            // Large logit gaps round to 0 or 1 in f64; keep the open interval.
            Ok((ea / (ea + en)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
        }
    }
}

/// `(score, sim_anomaly, sim_normal)` for one fused feature.
pub fn anomaly_score(
    e_fused: &EmbeddingVector,
    t_normal: &EmbeddingVector,
    t_anomaly: &EmbeddingVector,
    config: &ScoreConfig,
) -> Result<(f64, f64, f64)> {
    let sim_anomaly = similarity(e_fused, t_anomaly)?;
    let sim_normal = similarity(e_fused, t_normal)?;
    let score = score_from_similarities(sim_anomaly, sim_normal, config)?;
    Ok((score, sim_anomaly, sim_normal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::unit_normalize;
    use proptest::prelude::*;

    #[test]
    fn similarity_examples() {
        let e = unit_normalize(&[0.6, 0.8]).unwrap();
        let t = unit_normalize(&[0.8, 0.6]).unwrap();
        assert!((similarity(&e, &e).unwrap() - 1.0).abs() < 1e-15);
        assert!((similarity(&e, &t).unwrap() - 0.96).abs() < 1e-15);
        let x = unit_normalize(&[1.0, 0.0]).unwrap();
        let y = unit_normalize(&[0.0, 1.0]).unwrap();
        assert_eq!(similarity(&x, &y).unwrap(), 0.0);
        let z = unit_normalize(&[1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(similarity(&x, &z), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn equal_similarities_give_one_half() {
        for config in [ScoreConfig::paper_literal(), ScoreConfig::default()] {
            assert_eq!(score_from_similarities(0.3, 0.3, &config).unwrap(), 0.5);
        }
    }

    #[test]
    fn literal_ratio() {
        let s = score_from_similarities(0.30, 0.25, &ScoreConfig::paper_literal()).unwrap();
        assert!((s - 0.30 / 0.55).abs() < 1e-15);
        assert!((s - 0.545_454_545_454_545_4).abs() < 1e-12);
    }

    #[test]
    fn literal_rejects_degenerate_denominators() {
        let c = ScoreConfig::paper_literal();
        assert!(matches!(score_from_similarities(-0.10, 0.05, &c), Err(Error::DegenerateDenominator { .. })));
        assert!(score_from_similarities(0.2, -0.2, &c).is_err());
        assert!(score_from_similarities(0.0, 0.0, &c).is_err());
        // both negative is a consistent ratio
        assert!((score_from_similarities(-0.3, -0.1, &c).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn stabilized_matches_logistic() {
        // 1 / (1 + e^-5) from a 30-digit evaluation
        let expected = 0.993_307_149_075_715_2;
        let s = score_from_similarities(0.30, 0.25, &ScoreConfig::stabilized(0.01)).unwrap();
        assert!((s - expected).abs() < 1e-6);
        assert!((s - 0.993_307_1).abs() < 1e-6);
    }

    #[test]
    fn stabilized_survives_extreme_logits() {
        let s = score_from_similarities(1.0, -1.0, &ScoreConfig::stabilized(1e-4)).unwrap();
        assert!(s > 0.0 && s < 1.0);
        let low = score_from_similarities(-1.0, 1.0, &ScoreConfig::stabilized(1e-4)).unwrap();
        assert!(low > 0.0 && (s + low - 1.0).abs() <= 1e-12);
        assert!(ScoreConfig::stabilized(0.0).validate().is_err());
        assert!(score_from_similarities(0.1, 0.0, &ScoreConfig::stabilized(-1.0)).is_err());
    }

    #[test]
    fn anomaly_score_returns_both_sims() {
        let e = unit_normalize(&[1.0, 0.0]).unwrap();
        let tn = unit_normalize(&[0.6, 0.8]).unwrap();
        let ta = unit_normalize(&[0.8, 0.6]).unwrap();
        let (s, a, n) = anomaly_score(&e, &tn, &ta, &ScoreConfig::paper_literal()).unwrap();
        assert!((a - 0.8).abs() < 1e-15 && (n - 0.6).abs() < 1e-15);
        assert!((s - 0.8 / 1.4).abs() < 1e-15);
    }

    #[test]
    fn mode_parses() {
        assert_eq!("paper-literal".parse::<ScoreMode>().unwrap(), ScoreMode::PaperLiteral);
        assert_eq!("stabilized".parse::<ScoreMode>().unwrap(), ScoreMode::Stabilized);
        assert!("other".parse::<ScoreMode>().is_err());
    }

    proptest! {
        #[test]
        fn stabilized_is_monotone(a in -1.0f64..1.0, n in -1.0f64..1.0, tau in 0.01f64..1.0) {
            let c = ScoreConfig::stabilized(tau);
            let h = 1e-3;
            let s = score_from_similarities(a, n, &c).unwrap();
            prop_assert!(s > 0.0 && s < 1.0 || (a - n).abs() / tau > 30.0);
            let up = score_from_similarities(a + h, n, &c).unwrap();
            let down = score_from_similarities(a, n + h, &c).unwrap();
            prop_assume!((a - n).abs() / tau < 30.0);
            prop_assert!(up > s);
            prop_assert!(down < s);
        }

        #[test]
        fn stabilized_is_shift_invariant(a in -1.0f64..1.0, n in -1.0f64..1.0, k in -0.5f64..0.5) {
            let c = ScoreConfig::default();
            let s = score_from_similarities(a, n, &c).unwrap();
            let shifted = score_from_similarities(a + k, n + k, &c).unwrap();
            // shifting perturbs a - n by a few ulps, magnified by 1/τ
            prop_assert!((s - shifted).abs() < 1e-12);
        }
    }
}
