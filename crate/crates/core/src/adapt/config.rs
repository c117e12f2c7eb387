use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Student-input perturbation strengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Augmentation {
    /// Std of additive Gaussian noise.
    pub noise_std: f64,
    /// Contrast factor is drawn uniformly in `[1 - contrast, 1 + contrast]`.
    pub contrast: f64,
    /// Probability of erasing one random rectangle.
    pub erase_prob: f64,
}

impl Default for Augmentation {
    fn default() -> Self {
        Self { noise_std: 0.03, contrast: 0.2, erase_prob: 0.3 }
    }
}

impl Augmentation {
    pub fn none() -> Self {
        Self { noise_std: 0.0, contrast: 0.0, erase_prob: 0.0 }
    }
}

/// Component switches used by the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Toggles {
    pub diversity: bool,
    pub student_branch: bool,
    pub confidence_weighting: bool,
    pub direct_denoise: bool,
    pub proto_denoise: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self::all(true)
    }
}

impl Toggles {
    pub fn all(on: bool) -> Self {
        Self {
            diversity: on,
            student_branch: on,
            confidence_weighting: on,
            direct_denoise: on,
            proto_denoise: on,
        }
    }
}

/// Supervised training of the source model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceTraining {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for SourceTraining {
    fn default() -> Self {
        Self { epochs: 30, lr: 1e-3, batch_size: 8 }
    }
}

/// Every hyperparameter of source training and adaptation.
///
/// Serialized field names form the JSON config file schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    /// Pseudo-label probability threshold.
    #[serde(rename = "T")]
    pub threshold: f64,
    /// Sharpness of the teacher/student confidence weighting.
    pub gamma: f64,
    /// Diversity-loss weight.
    #[serde(rename = "lambda")]
    pub lambda: f64,
    /// EMA factor for the teacher.
    pub beta: f64,
    pub mc_passes: usize,
    pub dropout_rate: f64,
    pub eta_start: f64,
    pub eta_end: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// `+1` gives higher weight to the more confident stream; `-1` inverts.
    pub weight_sign: i32,
    pub seed: u64,
    pub augmentation: Augmentation,
    pub toggles: Toggles,
    pub source: SourceTraining,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            threshold: 0.75,
            gamma: 1000.0,
            lambda: 0.3,
            beta: 0.999,
            mc_passes: 10,
            dropout_rate: 0.5,
            eta_start: 0.99,
            eta_end: 0.95,
            lr: 5e-4,
            epochs: 2,
            batch_size: 8,
            weight_sign: 1,
            seed: 0,
            augmentation: Augmentation::default(),
            toggles: Toggles::default(),
            source: SourceTraining::default(),
        }
    }
}

fn check(ok: bool, what: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter(what()))
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.threshold,
            self.gamma,
            self.lambda,
            self.beta,
            self.dropout_rate,
            self.eta_start,
            self.eta_end,
            self.lr,
            self.augmentation.noise_std,
            self.augmentation.contrast,
            self.augmentation.erase_prob,
            self.source.lr,
        ];
        check(finite.iter().all(|v| v.is_finite()), || "config values must be finite".into())?;
        check(self.threshold > 0.0 && self.threshold < 1.0, || format!("T = {} outside (0, 1)", self.threshold))?;
        check(self.gamma >= 0.0, || format!("gamma = {} is negative", self.gamma))?;
        check(self.lambda >= 0.0, || format!("lambda = {} is negative", self.lambda))?;
        check((0.0..=1.0).contains(&self.beta), || format!("beta = {} outside [0, 1]", self.beta))?;
        check(self.mc_passes >= 2, || format!("mc_passes = {} below 2", self.mc_passes))?;
        check((0.0..1.0).contains(&self.dropout_rate), || {
            format!("dropout_rate = {} outside [0, 1)", self.dropout_rate)
        })?;
        check(
            0.0 < self.eta_end && self.eta_end <= self.eta_start && self.eta_start < 1.0,
            || format!("eta schedule {} -> {} invalid", self.eta_start, self.eta_end),
        )?;
        check(self.lr > 0.0 && self.source.lr > 0.0, || "learning rates must be positive".into())?;
        check(self.batch_size >= 1 && self.source.batch_size >= 1, || "batch_size must be >= 1".into())?;
        check(self.weight_sign == 1 || self.weight_sign == -1, || {
            format!("weight_sign = {} must be 1 or -1", self.weight_sign)
        })?;
        let a = &self.augmentation;
        check(a.noise_std >= 0.0 && a.contrast >= 0.0, || "augmentation strengths must be >= 0".into())?;
        check((0.0..=1.0).contains(&a.erase_prob), || format!("erase_prob = {} outside [0, 1]", a.erase_prob))?;
        Ok(())
    }

    /// Parses and validates a JSON config; absent keys take their defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidParameter(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 (hex) of the compact JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Weighting sharpness after the ablation switch.
    pub fn effective_gamma(&self) -> f64 {
        if self.toggles.confidence_weighting {
            self.gamma
        } else {
            0.0
        }
    }

    pub fn effective_lambda(&self) -> f64 {
        if self.toggles.diversity {
            self.lambda
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reported_setup() {
        let c = AdaptConfig::default();
        assert_eq!(c.threshold, 0.75);
        assert_eq!(c.gamma, 1000.0);
        assert_eq!(c.lambda, 0.3);
        assert_eq!(c.beta, 0.999);
        assert_eq!(c.mc_passes, 10);
        assert_eq!(c.dropout_rate, 0.5);
        assert_eq!((c.eta_start, c.eta_end), (0.99, 0.95));
        assert_eq!(c.weight_sign, 1);
        c.validate().unwrap();
    }

    #[test]
    fn json_keys_and_partial_files() {
        let c = AdaptConfig::from_json(r#"{"T": 0.6, "lambda": 0.1, "toggles": {"diversity": false}}"#).unwrap();
        assert_eq!(c.threshold, 0.6);
        assert_eq!(c.lambda, 0.1);
        assert!(!c.toggles.diversity && c.toggles.student_branch);
        let json = serde_json::to_value(AdaptConfig::default()).unwrap();
        for key in ["T", "gamma", "lambda", "beta", "mc_passes", "dropout_rate", "eta_start", "eta_end", "lr", "epochs", "batch_size", "weight_sign", "seed", "augmentation", "toggles"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        for bad in [
            r#"{"T": 1.0}"#,
            r#"{"gamma": -1}"#,
            r#"{"beta": 1.5}"#,
            r#"{"mc_passes": 1}"#,
            r#"{"weight_sign": 0}"#,
            r#"{"eta_start": 0.9, "eta_end": 0.95}"#,
            r#"{"unknown_key": 1}"#,
        ] {
            assert!(AdaptConfig::from_json(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = AdaptConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.gamma = 10.0;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
