use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use ndarray::{Array2, Array3};

use crate::data::io::{load_image, load_wav, save_image, save_mask};
use crate::error::{Error, Result};
use crate::metrics::{binarize, DEFAULT_THRESHOLD};
use crate::nn::resize_bilinear;
use crate::train::checkpoint::Checkpoint;
use crate::train::dataset::model_spectrogram;
use crate::train::eval::{predict_batch, ProbMaps};

pub const OVERLAY_ALPHA: f32 = 0.5;
pub const FUNC_TINT: [f32; 3] = [1.0, 0.0, 0.0];
pub const DEP_TINT: [f32; 3] = [0.0, 0.4, 1.0];

#[derive(Debug, Clone)]
pub struct PredictOutput {
    pub func: Array2<u8>,
    pub dep: Array2<u8>,
    /// Probability maps resized to the input resolution.
    pub probs: ProbMaps,
    pub overlay: Array3<f32>,
    pub files: Vec<PathBuf>,
}

fn resize_map(m: &Array2<f32>, h: usize, w: usize) -> Result<Array2<f32>> {
    if m.dim() == (h, w) {
        return Ok(m.clone());
    }
    let (mh, mw) = m.dim();
    let t = Tensor::from_vec(m.iter().copied().collect::<Vec<_>>(), (1, 1, mh, mw), &Device::Cpu)?;
    let v: Vec<f32> = resize_bilinear(&t, h, w)?.flatten_all()?.to_vec1()?;
    Ok(Array2::from_shape_vec((h, w), v).expect("shape"))
}

/// Dependency tint first, function tint on top, each an alpha blend
/// `(1 − α)·pixel + α·tint`.
pub fn overlay(image: &Array3<f32>, func: &Array2<u8>, dep: &Array2<u8>, alpha: f32) -> Array3<f32> {
    let mut out = image.clone();
    let (h, w, _) = image.dim();
    for y in 0..h {
        for x in 0..w {
            for (mask, tint) in [(dep, DEP_TINT), (func, FUNC_TINT)] {
                if mask[[y, x]] != 0 {
                    for c in 0..3 {
                        out[[y, x, c]] = (1.0 - alpha) * out[[y, x, c]] + alpha * tint[c];
                    }
                }
            }
        }
    }
    out
}

/// Runs a checkpoint on one image/audio pair and writes `func.png`,
/// `dep.png` and `overlay.png` at the input image's resolution.
pub fn predict(ck: &Checkpoint, image_path: &Path, audio_path: &Path, out_dir: &Path) -> Result<PredictOutput> {
    for p in [image_path, audio_path] {
        if !p.exists() {
            return Err(Error::MissingFile(p.to_path_buf()));
        }
    }
    let model = ck.model()?;
    let cfg = model.config();
    let original = load_image(image_path, None)?;
    let (h, w, _) = original.dim();
    let resized = load_image(image_path, Some((cfg.image_size, cfg.image_size)))?;
    let wave = load_wav(audio_path, cfg.sample_rate)?;
    let spec = model_spectrogram(&wave, cfg.sample_rate, cfg)?;

    let maps = predict_batch(&model, &[&resized], &[&spec])?.remove(0);
    let probs = ProbMaps {
        func: resize_map(&maps.func, h, w)?,
        dep: resize_map(&maps.dep, h, w)?,
    };
    let func = binarize(&probs.func, DEFAULT_THRESHOLD);
    let dep = binarize(&probs.dep, DEFAULT_THRESHOLD);
    let over = overlay(&original, &func, &dep, OVERLAY_ALPHA);

    std::fs::create_dir_all(out_dir)?;
    let files = vec![out_dir.join("func.png"), out_dir.join("dep.png"), out_dir.join("overlay.png")];
    save_mask(&func, &files[0])?;
    save_mask(&dep, &files[1])?;
    save_image(&over, &files[2])?;
    Ok(PredictOutput {
        func,
        dep,
        probs,
        overlay: over,
        files,
    })
}
