use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Category, SplitSpec};
use crate::error::{Error, Result};
use crate::model::{Ablation, ModelConfig, Profile};
use crate::objectives::LossConfig;
use crate::train::augment::AugmentConfig;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub profile: Profile,
    pub epochs: usize,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<usize>,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub image_size: usize,
    pub augment: AugmentConfig,
    pub ablation: Ablation,
    pub lambda_aux: f64,
    pub seed: u64,
    pub train_fraction: f64,
    pub unseen_categories: Vec<String>,
}

impl TrainConfig {
    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self {
                profile,
                epochs: 5,
                max_steps: None,
                lr: 1e-3,
                weight_decay: 1e-2,
                batch_size: 8,
                image_size: 64,
                augment: AugmentConfig::default(),
                ablation: Ablation::default(),
                lambda_aux: 0.1,
                seed: 0,
                train_fraction: 0.8,
                unseen_categories: Vec::new(),
            },
            Profile::Full => Self {
                profile,
                epochs: 25,
                lr: 2e-5,
                batch_size: 4,
                image_size: 512,
                augment: AugmentConfig::full(),
                ..Self::for_profile(Profile::Desk)
            },
        }
    }

    pub fn desk() -> Self {
        Self::for_profile(Profile::Desk)
    }

    pub fn full() -> Self {
        Self::for_profile(Profile::Full)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be positive");
        }
        if !(self.lambda_aux >= 0.0 && self.lambda_aux.is_finite()) {
            return bad("lambda_aux must be non-negative");
        }
        if !self.ablation.supervise_func && !self.ablation.supervise_dep {
            return bad("at least one of supervise_func and supervise_dep must be set");
        }
        self.augment.validate()?;
        self.model_config().validate()?;
        self.split_spec()?;
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            image_size: self.image_size,
            ..ModelConfig::for_profile(self.profile, &self.ablation)
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda_aux: self.lambda_aux,
            ..LossConfig::default()
        }
    }

    pub fn split_spec(&self) -> Result<SplitSpec> {
        let unseen = self
            .unseen_categories
            .iter()
            .map(|c| Category::parse(c))
            .collect::<Result<BTreeSet<_>>>()?;
        Ok(SplitSpec {
            unseen_categories: unseen,
            train_fraction: self.train_fraction,
            seed: self.seed,
            allow_missing_unseen: false,
        })
    }

    /// Parses a TOML document. Keys that are absent take the defaults of the
    /// document's `profile` (or `fallback` when it names none).
    pub fn from_toml_str(text: &str, fallback: Profile) -> Result<Self> {
        let p: PartialConfig = toml::from_str(text)?;
        let mut c = Self::for_profile(p.profile.unwrap_or(fallback));
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = p.$f { c.$f = v; } )* };
        }
        take!(epochs, lr, weight_decay, batch_size, image_size, augment, ablation, lambda_aux, seed, train_fraction, unseen_categories);
        if p.max_steps.is_some() {
            c.max_steps = p.max_steps;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path, fallback: Profile) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_toml_str(&std::fs::read_to_string(path)?, fallback)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialConfig {
    profile: Option<Profile>,
    epochs: Option<usize>,
    max_steps: Option<usize>,
    lr: Option<f64>,
    weight_decay: Option<f64>,
    batch_size: Option<usize>,
    image_size: Option<usize>,
    augment: Option<AugmentConfig>,
    ablation: Option<Ablation>,
    lambda_aux: Option<f64>,
    seed: Option<u64>,
    train_fraction: Option<f64>,
    unseen_categories: Option<Vec<String>>,
}
