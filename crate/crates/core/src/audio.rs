//! Audio front end: duration normalisation, STFT magnitudes and the
//! convolutional encoder producing `T × 128` audio tokens.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use candle_core::{Device, Tensor, D};
use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv2d, Linear, ParamStore};

/// Width of every audio token.
pub const AUDIO_DIM: usize = 128;

/// Brings a clip to exactly `round(target_seconds * sample_rate)` samples.
/// Short clips are tiled end to end and truncated; long clips are
/// centre-cropped.
pub fn normalize_duration(waveform: &[f32], sample_rate: u32, target_seconds: f64) -> Vec<f32> {
    assert!(!waveform.is_empty(), "cannot normalise an empty waveform");
    let target = (target_seconds * sample_rate as f64).round() as usize;
    let n = waveform.len();
    if n >= target {
        let offset = (n - target) / 2;
        waveform[offset..offset + target].to_vec()
    } else {
        waveform.iter().copied().cycle().take(target).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            // periodic Hann
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub frame_length: usize,
    pub hop_length: usize,
    pub window: Window,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            frame_length: 400,
            hop_length: 160,
            window: Window::Hann,
        }
    }
}

/// Magnitude spectrogram, `T_frames × F_bins` with `F_bins = frame/2 + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub mags: Array2<f32>,
    pub frame_length: usize,
    pub hop_length: usize,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.mags.dim().0
    }

    pub fn n_bins(&self) -> usize {
        self.mags.dim().1
    }

    /// `log(1 + mags)`, the encoder input.
    pub fn log_compressed(&self) -> Array2<f32> {
        self.mags.mapv(f32::ln_1p)
    }

    /// Writes the raw cache format: `b"AVSP"`, then little-endian u32
    /// `T_frames`, `F_bins`, `sample_rate`, then `T*F` little-endian f32.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + 4 * self.mags.len());
        buf.extend_from_slice(b"AVSP");
        for v in [self.n_frames() as u32, self.n_bins() as u32, self.sample_rate] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.mags.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    /// Reads the cache format. Frame and hop lengths are not stored; the
    /// caller supplies the STFT settings the cache was built with.
    pub fn read_cache(path: &Path, stft: &StftConfig) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)?.read_to_end(&mut buf)?;
        let bad = |m: &str| Error::BadShape(format!("{}: {m}", path.display()));
        if buf.len() < 16 || &buf[..4] != b"AVSP" {
            return Err(bad("not a spectrogram cache"));
        }
        let word = |i: usize| u32::from_le_bytes(buf[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        let (t, f, sr) = (word(0) as usize, word(1) as usize, word(2));
        if buf.len() != 16 + 4 * t * f {
            return Err(bad("truncated payload"));
        }
        let vals: Vec<f32> = buf[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            mags: Array2::from_shape_vec((t, f), vals).map_err(|e| bad(&e.to_string()))?,
            frame_length: stft.frame_length,
            hop_length: stft.hop_length,
            sample_rate: sr,
        })
    }
}

pub fn frame_count(len: usize, frame_length: usize, hop_length: usize) -> usize {
    (len - frame_length) / hop_length + 1
}

pub fn stft_spectrogram(waveform: &[f32], sample_rate: u32, cfg: &StftConfig) -> Result<Spectrogram> {
    let (frame, hop) = (cfg.frame_length, cfg.hop_length);
    if hop == 0 || frame == 0 {
        return Err(Error::InvalidConfig("frame and hop lengths must be positive".into()));
    }
    if waveform.len() < frame {
        return Err(Error::TooShort {
            len: waveform.len(),
            frame,
        });
    }
    let n_frames = frame_count(waveform.len(), frame, hop);
    let n_bins = frame / 2 + 1;
    let window = cfg.window.coefficients(frame);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(frame);
    let mut mags = Array2::<f32>::zeros((n_frames, n_bins));
    let mut buf = vec![Complex::new(0.0, 0.0); frame];
    for t in 0..n_frames {
        let start = t * hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(waveform[start + i] as f64 * window[i], 0.0);
        }
        fft.process(&mut buf);
        for f in 0..n_bins {
            mags[[t, f]] = buf[f].norm() as f32;
        }
    }
    Ok(Spectrogram {
        mags,
        frame_length: frame,
        hop_length: hop,
        sample_rate,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AudioEncoderConfig {
    pub channels: [usize; 3],
    /// Spectrogram frames per output token (96 frames ≈ 0.96 s at 10 ms hop).
    pub patch_frames: usize,
    /// The magnitude bins are averaged into this many contiguous bands
    /// before the convolutions.
    pub freq_bands: usize,
}

impl Default for AudioEncoderConfig {
    fn default() -> Self {
        Self {
            channels: [16, 32, 64],
            patch_frames: 96,
            freq_bands: 64,
        }
    }
}

/// Encoded audio tokens, shaped `(B, T, 128)`.
#[derive(Debug, Clone)]
pub struct AudioFeatures {
    pub feats: Tensor,
}

impl AudioFeatures {
    pub fn n_tokens(&self) -> Result<usize> {
        Ok(self.feats.dim(1)?)
    }
}

/// Averages the log spectrogram into frequency bands, then applies three
/// stride-2 conv blocks, frequency pooling, temporal pooling into
/// non-overlapping patches and a linear map to 128.
pub struct AudioEncoder {
    convs: Vec<Conv2d>,
    out: Linear,
    patch_frames: usize,
    freq_bands: usize,
}

/// `(n_bins, n_bands)` matrix averaging contiguous spans of bins.
pub fn band_pooling_matrix(n_bins: usize, n_bands: usize) -> Vec<f64> {
    let n_bands = n_bands.clamp(1, n_bins.max(1));
    let mut m = vec![0.0; n_bins * n_bands];
    for b in 0..n_bands {
        let lo = b * n_bins / n_bands;
        let hi = ((b + 1) * n_bins / n_bands).max(lo + 1);
        for f in lo..hi {
            m[f * n_bands + b] = 1.0 / (hi - lo) as f64;
        }
    }
    m
}

impl AudioEncoder {
    pub fn new(ps: &mut ParamStore, name: &str, cfg: &AudioEncoderConfig) -> Result<Self> {
        let mut convs = Vec::new();
        let mut c_in = 1;
        for (i, &c) in cfg.channels.iter().enumerate() {
            convs.push(Conv2d::new(ps, &format!("{name}.conv{i}"), c_in, c, 3, 2, 1, true)?);
            c_in = c;
        }
        let out = Linear::new(ps, &format!("{name}.proj"), c_in, AUDIO_DIM, true)?;
        Ok(Self {
            convs,
            out,
            patch_frames: cfg.patch_frames.max(1),
            freq_bands: cfg.freq_bands,
        })
    }

    pub fn n_tokens(&self, n_frames: usize) -> usize {
        (n_frames / self.patch_frames).max(1)
    }

    /// `spec` is `(B, 1, T_frames, F_bins)`, already log-compressed.
    pub fn forward(&self, spec: &Tensor) -> Result<AudioFeatures> {
        let (_, _, n_frames, n_bins) = spec.dims4()?;
        let bands = self.freq_bands.clamp(1, n_bins);
        let pool = Tensor::from_vec(band_pooling_matrix(n_bins, bands), (n_bins, bands), spec.device())?
            .to_dtype(spec.dtype())?;
        let mut x = spec.broadcast_matmul(&pool)?;
        for conv in &self.convs {
            // the conv backward pass derives its output padding from the
            // time axis only, so both axes must share parity
            let (_, _, t, f) = x.dims4()?;
            if t % 2 != f % 2 {
                x = x.pad_with_zeros(3, 0, 1)?;
            }
            x = conv.forward(&x)?.silu()?;
        }
        // (B, C, T', F') -> (B, C, T')
        let x = x.mean(3)?;
        let (b, c, t_out) = x.dims3()?;
        let n_tok = self.n_tokens(n_frames).min(t_out);
        let chunk = t_out / n_tok;
        let x = x
            .narrow(2, 0, n_tok * chunk)?
            .reshape((b, c, n_tok, chunk))?
            .mean(D::Minus1)?
            .transpose(1, 2)?
            .contiguous()?;
        Ok(AudioFeatures {
            feats: self.out.forward(&x)?,
        })
    }
}

/// Stacks log-compressed spectrograms into a `(B, 1, T, F)` tensor.
pub fn spectrogram_batch(specs: &[&Spectrogram], dtype: candle_core::DType) -> Result<Tensor> {
    let (t, f) = specs[0].mags.dim();
    let mut data = Vec::with_capacity(specs.len() * t * f);
    for s in specs {
        if s.mags.dim() != (t, f) {
            return Err(Error::ShapeMismatch(format!(
                "spectrogram {:?} vs {:?}",
                s.mags.dim(),
                (t, f)
            )));
        }
        data.extend(s.log_compressed().iter().copied());
    }
    Ok(Tensor::from_vec(data, (specs.len(), 1, t, f), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Single-clip convenience wrapper around [`AudioEncoder::forward`].
pub fn encode_audio(spec: &Spectrogram, encoder: &AudioEncoder, dtype: candle_core::DType) -> Result<AudioFeatures> {
    encoder.forward(&spectrogram_batch(&[spec], dtype)?)
}
