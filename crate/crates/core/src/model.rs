//! End-to-end model: audio front end, visual encoder, mixer and decoder
//! sharing one parameter store.

use candle_core::{DType, Device, Tensor};
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::audio::{
    normalize_duration, spectrogram_batch, stft_spectrogram, AudioEncoder, AudioEncoderConfig,
    Spectrogram, StftConfig, AUDIO_DIM,
};
use crate::decoder::{decode, AffordanceDecoder, DecoderConfig, DecoderSkips, MaskPrediction};
use crate::error::{Error, Result};
use crate::mixer::{MixedFeatures, Mixer, MixerConfig, MixerKind};
use crate::nn::ParamStore;
use crate::visual::{Backbone, EnhancedPyramid, PyramidEnhancer, VisualConfig};

/// Clip length every audio input is normalised to.
pub const AUDIO_SECONDS: f64 = 5.0;
const PIXEL_MEAN: f32 = 0.5;
const PIXEL_STD: f32 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Desk,
    Full,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            _ => Err(Error::InvalidConfig(format!("unknown profile {s:?}"))),
        }
    }
}

/// Architecture switches studied in the ablations.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    pub v2a: bool,
    pub a2v: bool,
    pub mixer: MixerKind,
    pub se: bool,
    pub mca: bool,
    pub dual: bool,
    pub supervise_func: bool,
    pub supervise_dep: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            v2a: true,
            a2v: true,
            mixer: MixerKind::Cra,
            se: true,
            mca: true,
            dual: true,
            supervise_func: true,
            supervise_dep: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub sample_rate: u32,
    pub stft: StftConfig,
    pub audio: AudioEncoderConfig,
    pub visual: VisualConfig,
    pub mixer: MixerConfig,
    pub decoder: DecoderConfig,
}

impl ModelConfig {
    pub fn for_profile(profile: Profile, ablation: &Ablation) -> Self {
        let (image_size, visual, c_v, n_queries) = match profile {
            Profile::Desk => (
                64,
                VisualConfig {
                    channels: [8, 16, 32, 64],
                    transformer_layers: 2,
                    transformer_heads: 4,
                },
                64,
                2,
            ),
            Profile::Full => (512, VisualConfig::default(), 256, 8),
        };
        Self {
            image_size,
            sample_rate: crate::data::io::DEFAULT_SAMPLE_RATE,
            stft: StftConfig::default(),
            audio: AudioEncoderConfig::default(),
            visual,
            mixer: MixerConfig {
                kind: ablation.mixer,
                v2a: ablation.v2a,
                a2v: ablation.a2v,
                ..MixerConfig::default()
            },
            decoder: DecoderConfig {
                c_v,
                n_queries,
                audio_dim: AUDIO_DIM,
                se: ablation.se,
                mca: ablation.mca,
                dual: ablation.dual,
                ..DecoderConfig::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % 32 != 0 {
            return Err(Error::InvalidConfig(format!(
                "image_size {} must be a positive multiple of 32",
                self.image_size
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidConfig("sample_rate must be positive".into()));
        }
        Ok(())
    }
}

pub struct ModelOutput {
    pub prediction: MaskPrediction,
    pub mixed: MixedFeatures,
    pub enhanced: EnhancedPyramid,
}

pub struct AvagModel {
    cfg: ModelConfig,
    params: ParamStore,
    audio: AudioEncoder,
    backbone: Backbone,
    enhancer: PyramidEnhancer,
    mixer: Mixer,
    decoder: AffordanceDecoder,
}

impl AvagModel {
    pub fn new(cfg: &ModelConfig, seed: u64, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamStore::new(seed, dtype);
        let audio = AudioEncoder::new(&mut ps, "audio", &cfg.audio)?;
        let backbone = Backbone::new(&mut ps, "backbone", &cfg.visual)?;
        let enhancer = PyramidEnhancer::new(&mut ps, "enhancer", &cfg.visual)?;
        let mixer = Mixer::new(&mut ps, "mixer", &cfg.visual.channels, cfg.decoder.c_v, &cfg.mixer)?;
        let decoder = AffordanceDecoder::new(&mut ps, "decoder", &cfg.decoder, backbone.stem_channels())?;
        Ok(Self {
            cfg: cfg.clone(),
            params: ps,
            audio,
            backbone,
            enhancer,
            mixer,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.num_params()
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    /// `images` is `(B, 3, H, W)` normalised pixels, `spec` is
    /// `(B, 1, T, F)` log spectrograms.
    pub fn forward_full(&self, images: &Tensor, spec: &Tensor) -> Result<ModelOutput> {
        let audio = self.audio.forward(spec)?;
        let bb = self.backbone.forward(images)?;
        let enhanced = self.enhancer.forward(&bb.pyramid)?;
        let mixed = self.mixer.forward(&enhanced.pyramid, &audio)?;
        let skips = DecoderSkips {
            stem: bb.stem,
            image: images.clone(),
        };
        let prediction = decode(&mixed, &skips, &self.decoder)?;
        Ok(ModelOutput {
            prediction,
            mixed,
            enhanced,
        })
    }

    pub fn forward(&self, images: &Tensor, spec: &Tensor) -> Result<MaskPrediction> {
        Ok(self.forward_full(images, spec)?.prediction)
    }

    /// Duration-normalised spectrogram of a raw waveform.
    pub fn spectrogram(&self, waveform: &[f32], sample_rate: u32) -> Result<Spectrogram> {
        let wave = normalize_duration(waveform, sample_rate, AUDIO_SECONDS);
        stft_spectrogram(&wave, sample_rate, &self.cfg.stft)
    }

    pub fn spec_tensor(&self, specs: &[&Spectrogram]) -> Result<Tensor> {
        spectrogram_batch(specs, self.dtype())
    }

    pub fn image_tensor(&self, images: &[&Array3<f32>]) -> Result<Tensor> {
        images_to_tensor(images, self.dtype())
    }
}

/// Stacks `(H, W, 3)` images in `[0, 1]` into a normalised `(B, 3, H, W)`
/// tensor.
pub fn images_to_tensor(images: &[&Array3<f32>], dtype: DType) -> Result<Tensor> {
    let first = images.first().ok_or(Error::EmptyList)?;
    let (h, w, c) = first.dim();
    if c != 3 {
        return Err(Error::BadShape(format!("expected 3 channels, got {c}")));
    }
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if img.dim() != (h, w, 3) {
            return Err(Error::ShapeMismatch(format!("image {:?} vs {:?}", img.dim(), (h, w, 3))));
        }
        let chw = img.view().permuted_axes([2, 0, 1]);
        data.extend(chw.iter().map(|&v| (v - PIXEL_MEAN) / PIXEL_STD));
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}
