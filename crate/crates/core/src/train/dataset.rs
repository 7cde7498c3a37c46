use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::{normalize_duration, stft_spectrogram, Spectrogram};
use crate::data::io::{load_sample, resample_linear};
use crate::data::{split_dataset, split_indices, Category, Manifest, Sample, Split, SplitSpec};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, AUDIO_SECONDS};
use crate::train::pairing::group_by_category;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Train,
    Val,
    Unseen,
}

impl FromStr for EvalSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            "unseen" => Ok(Self::Unseen),
            _ => Err(Error::InvalidConfig(format!("unknown split {s:?}"))),
        }
    }
}

/// A sample whose audio has been normalised to the model's clip length and
/// turned into a spectrogram. The raw waveform is dropped.
#[derive(Debug, Clone)]
pub struct Item {
    pub sample: Sample,
    pub spec: Spectrogram,
}

#[derive(Debug, Clone, Default)]
pub struct DataSplit {
    pub train: Dataset,
    pub val: Dataset,
    pub unseen: Dataset,
}

impl DataSplit {
    pub fn take(self, which: EvalSplit) -> Dataset {
        match which {
            EvalSplit::Train => self.train,
            EvalSplit::Val => self.val,
            EvalSplit::Unseen => self.unseen,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub items: Vec<Item>,
}

/// Duration-normalised spectrogram at the model's sample rate.
pub fn model_spectrogram(wave: &[f32], sample_rate: u32, cfg: &ModelConfig) -> Result<Spectrogram> {
    let wave = if sample_rate == cfg.sample_rate {
        normalize_duration(wave, sample_rate, AUDIO_SECONDS)
    } else {
        let r = resample_linear(wave, sample_rate, cfg.sample_rate);
        normalize_duration(&r, cfg.sample_rate, AUDIO_SECONDS)
    };
    stft_spectrogram(&wave, cfg.sample_rate, &cfg.stft)
}

impl Dataset {
    pub fn from_samples(samples: Vec<Sample>, cfg: &ModelConfig) -> Result<Self> {
        let items = samples
            .into_iter()
            .map(|mut sample| {
                sample.validate()?;
                if sample.height() != cfg.image_size || sample.width() != cfg.image_size {
                    return Err(Error::BadShape(format!(
                        "sample is {}x{}, model expects {}x{}",
                        sample.height(),
                        sample.width(),
                        cfg.image_size,
                        cfg.image_size
                    )));
                }
                let spec = model_spectrogram(&sample.audio, sample.sample_rate, cfg)?;
                sample.audio = Vec::new();
                Ok(Item { sample, spec })
            })
            .collect::<Result<_>>()?;
        Ok(Self { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn categories(&self) -> Vec<&Category> {
        self.items.iter().map(|i| &i.sample.category).collect()
    }

    /// Item indices per category; every item contributes both an image and
    /// an audio clip.
    pub fn by_category(&self) -> BTreeMap<Category, Vec<usize>> {
        group_by_category(self.items.iter().map(|i| &i.sample.category))
    }
}

/// Category-level split of in-memory samples.
pub fn split_samples(samples: Vec<Sample>, spec: &SplitSpec) -> Result<Split<Sample>> {
    let cats: Vec<&Category> = samples.iter().map(|s| &s.category).collect();
    let idx = split_indices(&cats, spec)?;
    let mut slots: Vec<Option<Sample>> = samples.into_iter().map(Some).collect();
    let mut take = |ix: &[usize]| ix.iter().map(|&i| slots[i].take().expect("disjoint split")).collect();
    Ok(Split {
        train: take(&idx.train),
        val: take(&idx.val),
        unseen: take(&idx.unseen),
    })
}

/// Loads and splits every record of a manifest at the model's resolution.
pub fn load_manifest_split(manifest: &Manifest, spec: &SplitSpec, cfg: &ModelConfig) -> Result<DataSplit> {
    let split = split_dataset(manifest, spec)?;
    let size = (cfg.image_size, cfg.image_size);
    let load = |records: &[crate::data::ManifestRecord]| -> Result<Dataset> {
        let samples = records
            .iter()
            .map(|r| load_sample(r, size, cfg.sample_rate))
            .collect::<Result<Vec<_>>>()?;
        Dataset::from_samples(samples, cfg)
    };
    Ok(DataSplit {
        train: load(&split.train)?,
        val: load(&split.val)?,
        unseen: load(&split.unseen)?,
    })
}

pub fn datasets_from_samples(samples: Vec<Sample>, spec: &SplitSpec, cfg: &ModelConfig) -> Result<DataSplit> {
    let s = split_samples(samples, spec)?;
    Ok(DataSplit {
        train: Dataset::from_samples(s.train, cfg)?,
        val: Dataset::from_samples(s.val, cfg)?,
        unseen: Dataset::from_samples(s.unseen, cfg)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};
    use crate::model::{Ablation, Profile};

    #[test]
    fn clips_become_five_seconds() {
        let cfg = ModelConfig::for_profile(Profile::Desk, &Ablation::default());
        for secs in [2.0f64, 3.0, 7.0] {
            let wave = vec![0.1f32; (secs * 16000.0) as usize];
            let spec = model_spectrogram(&wave, 16000, &cfg).unwrap();
            assert_eq!(spec.n_frames(), 498);
        }
        // 8 kHz input is resampled first
        let spec = model_spectrogram(&vec![0.1f32; 8000], 8000, &cfg).unwrap();
        assert_eq!(spec.n_frames(), 498);
    }

    #[test]
    fn split_samples_partitions_by_category() {
        let cfg = SynthConfig {
            num_samples: 20,
            num_categories: 4,
            min_audio_seconds: 0.2,
            max_audio_seconds: 0.3,
            ..SynthConfig::default()
        };
        let samples = generate_synthetic(&cfg, 0).unwrap();
        let unseen = samples[3].category.clone();
        let spec = SplitSpec {
            unseen_categories: [unseen.clone()].into(),
            ..SplitSpec::default()
        };
        let s = split_samples(samples, &spec).unwrap();
        assert_eq!(s.train.len() + s.val.len() + s.unseen.len(), 20);
        assert!(s.unseen.iter().all(|x| x.category == unseen));
        assert!(s.train.iter().chain(&s.val).all(|x| x.category != unseen));
        assert_eq!(s.train.len(), 12);
    }
}
