//! Experiment configuration. Every field is required so that a config file
//! alone pins every number in a report.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{ClassWeight, Hyperparams, Schedule};
use crate::corpus::{DatasetFormat, SyntheticSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    File {
        path: PathBuf,
        format: DatasetFormat,
        /// Required for jsonl.
        n_features: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformConfig {
    pub m: usize,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub c: f64,
    pub epochs: usize,
    pub schedule: Schedule,
    pub class_weight: ClassWeight,
    pub sec_svm_box: f64,
    pub feature_select_k: usize,
}

impl ClassifierConfig {
    pub fn hyperparams(&self, seed: u64) -> Hyperparams {
        Hyperparams {
            c: self.c,
            epochs: self.epochs,
            schedule: self.schedule,
            class_weight: self.class_weight,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// Feature budgets of the success-rate curve, ascending.
    pub budgets: Vec<usize>,
    /// Feature budget of the headline greedy attack.
    pub greedy_budget: usize,
    /// Bundle budget of the bundle-level greedy attack.
    pub pk_bundle_budget: usize,
    pub q: usize,
    pub alpha: f64,
    pub n_candidates: usize,
    pub library_size: usize,
    pub bundle_size_range: (usize, usize),
    /// Cap on attacked samples; 0 means all eligible.
    pub max_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub data: DataSource,
    pub split: SplitConfig,
    pub transform: TransformConfig,
    pub classifier: ClassifierConfig,
    pub attacks: AttackConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 7,
            data: DataSource::Synthetic(SyntheticSpec::default()),
            split: SplitConfig {
                train_fraction: 0.8,
                seed: 7,
            },
            transform: TransformConfig { m: 40, theta: 0.8 },
            classifier: ClassifierConfig {
                c: 1.0,
                epochs: 30,
                schedule: Schedule::InverseT,
                class_weight: ClassWeight::Balanced,
                sec_svm_box: 0.1,
                feature_select_k: 40,
            },
            attacks: AttackConfig {
                budgets: vec![0, 1, 2, 3, 4, 5, 6, 8, 10, 12, 15, 20, 25, 30, 40, 50],
                greedy_budget: 30,
                pk_bundle_budget: 10,
                q: 10,
                alpha: 0.5,
                n_candidates: 5,
                library_size: 300,
                bundle_size_range: (2, 10),
                max_samples: 500,
            },
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let field = e
                .message()
                .split('`')
                .nth(1)
                .unwrap_or("config")
                .to_string();
            Error::config(field, e.message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable as toml")
    }

    pub fn validate(&self) -> Result<()> {
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        let f = self.split.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::config(
                "split.train_fraction",
                format!("must lie in (0,1), got {f}"),
            ));
        }
        let theta = self.transform.theta;
        if !(theta > 0.5 && theta < 1.0) {
            return Err(Error::config(
                "transform.theta",
                format!("threshold must lie in the open interval (0.5, 1), got {theta}"),
            ));
        }
        if self.transform.m == 0 {
            return Err(Error::config("transform.m", "must be at least 1"));
        }
        if self.classifier.sec_svm_box.is_nan() || self.classifier.sec_svm_box <= 0.0 {
            return Err(Error::config("classifier.sec_svm_box", "must be positive"));
        }
        if self.classifier.feature_select_k == 0 {
            return Err(Error::config(
                "classifier.feature_select_k",
                "must be at least 1",
            ));
        }
        let a = &self.attacks;
        if a.budgets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::config("attacks.budgets", "must be sorted ascending"));
        }
        if a.alpha.is_nan() || a.alpha < 0.0 {
            return Err(Error::config("attacks.alpha", "must be non-negative"));
        }
        if a.n_candidates == 0 {
            return Err(Error::config("attacks.n_candidates", "must be at least 1"));
        }
        let (lo, hi) = a.bundle_size_range;
        if lo == 0 || lo > hi {
            return Err(Error::config(
                "attacks.bundle_size_range",
                "need 1 <= min <= max",
            ));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
