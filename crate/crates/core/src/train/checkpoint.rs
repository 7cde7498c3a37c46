use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Scores;
use crate::model::AvagModel;
use crate::train::config::TrainConfig;

const PARAMS_FILE: &str = "params.safetensors";
const META_FILE: &str = "meta.json";

/// Model parameters plus everything needed to resume or reproduce a run.
/// Stored as a directory holding `params.safetensors` and `meta.json`.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: HashMap<String, Tensor>,
    pub meta: CheckpointMeta,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub epoch: usize,
    pub step: usize,
    pub rng: ChaCha8Rng,
    /// Validation scores at the time of saving, when a validation split was
    /// available.
    pub val_scores: Option<Scores>,
}

impl Checkpoint {
    pub fn capture(model: &AvagModel, meta: CheckpointMeta) -> Result<Self> {
        Ok(Self {
            params: model.params().snapshot()?,
            meta,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        candle_core::safetensors::save(&self.params, dir.join(PARAMS_FILE))?;
        std::fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let params_path = dir.join(PARAMS_FILE);
        let meta_path = dir.join(META_FILE);
        for p in [&params_path, &meta_path] {
            if !p.exists() {
                return Err(Error::MissingFile(p.clone()));
            }
        }
        let params = candle_core::safetensors::load(&params_path, &Device::Cpu)?;
        let meta = serde_json::from_str(&std::fs::read_to_string(meta_path)?)?;
        Ok(Self { params, meta })
    }

    /// Rebuilds the model described by the stored config and loads the
    /// stored parameters into it.
    pub fn model(&self) -> Result<AvagModel> {
        let cfg = &self.meta.config;
        let model = AvagModel::new(&cfg.model_config(), cfg.seed, DType::F32)?;
        model.params().restore(&self.params)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngCore, SeedableRng};

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = TrainConfig::desk();
        let model = AvagModel::new(&cfg.model_config(), 3, DType::F32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        rng.next_u64();
        let meta = CheckpointMeta {
            config: cfg,
            epoch: 2,
            step: 17,
            rng: rng.clone(),
            val_scores: Some(Scores {
                miou_f: 0.25,
                f_f: 0.5,
                miou_d: 0.125,
                f_d: 1.0 / 3.0,
            }),
        };
        let ck = Checkpoint::capture(&model, meta).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ck.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back.meta, ck.meta);
        assert_eq!(back.meta.rng.clone().next_u64(), rng.clone().next_u64());
        for (k, v) in &ck.params {
            let a: Vec<f32> = v.flatten_all().unwrap().to_vec1().unwrap();
            let b: Vec<f32> = back.params[k].flatten_all().unwrap().to_vec1().unwrap();
            assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()), "{k}");
        }
        let rebuilt = back.model().unwrap();
        assert_eq!(rebuilt.num_params(), model.num_params());
    }

    #[test]
    fn missing_directory() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            Checkpoint::load(&dir.path().join("nope")),
            Err(Error::MissingFile(_))
        ));
    }
}
