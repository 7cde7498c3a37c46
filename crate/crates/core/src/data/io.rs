//! Reading and writing images, masks and WAV audio.

use std::path::Path;

use image::imageops::FilterType;
use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use ndarray::{Array2, Array3};

use crate::data::manifest::{Manifest, ManifestRecord};
use crate::data::sample::Sample;
use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

fn open(path: &Path) -> Result<image::DynamicImage> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(image::open(path)?)
}

/// Loads an RGB image as H×W×3 in `[0, 1]`, optionally resized (bilinear).
pub fn load_image(path: &Path, size: Option<(usize, usize)>) -> Result<Array3<f32>> {
    let mut img = open(path)?.to_rgb8();
    if let Some((h, w)) = size {
        if img.dimensions() != (w as u32, h as u32) {
            img = image::imageops::resize(&img, w as u32, h as u32, FilterType::Triangle);
        }
    }
    Ok(rgb_to_array(&img))
}

pub fn rgb_to_array(img: &RgbImage) -> Array3<f32> {
    let (w, h) = img.dimensions();
    Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
        img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
    })
}

pub fn array_to_rgb(a: &Array3<f32>) -> RgbImage {
    let (h, w, _) = a.dim();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let px = |c| (a[[y as usize, x as usize, c]].clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([px(0), px(1), px(2)])
    })
}

/// Loads a single-channel mask; any pixel ≥ 128 is region.
/// Resizing uses nearest neighbour so the result stays binary.
pub fn load_mask(path: &Path, size: Option<(usize, usize)>) -> Result<Array2<u8>> {
    let mut img = open(path)?.to_luma8();
    if let Some((h, w)) = size {
        if img.dimensions() != (w as u32, h as u32) {
            img = image::imageops::resize(&img, w as u32, h as u32, FilterType::Nearest);
        }
    }
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        u8::from(img.get_pixel(x as u32, y as u32)[0] >= 128)
    }))
}

pub fn mask_to_gray(mask: &Array2<u8>) -> GrayImage {
    let (h, w) = mask.dim();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        Luma([if mask[[y as usize, x as usize]] != 0 { 255 } else { 0 }])
    })
}

pub fn save_mask(mask: &Array2<u8>, path: &Path) -> Result<()> {
    mask_to_gray(mask).save(path)?;
    Ok(())
}

pub fn save_image(img: &Array3<f32>, path: &Path) -> Result<()> {
    array_to_rgb(img).save(path)?;
    Ok(())
}

/// Reads a WAV file as mono f32, down-mixing channels and resampling to
/// `target_rate` with linear interpolation.
pub fn load_wav(path: &Path, target_rate: u32) -> Result<Vec<f32>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bad = |reason: String| Error::BadAudio {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| bad(e.to_string()))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(e.to_string()))?,
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(e.to_string()))?
        }
    };
    let mono: Vec<f32> = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f32>() / frame.len() as f32)
        .collect();
    if mono.is_empty() {
        return Err(bad("no samples".into()));
    }
    Ok(resample_linear(&mono, spec.sample_rate, target_rate))
}

pub fn resample_linear(x: &[f32], from: u32, to: u32) -> Vec<f32> {
    if from == to || x.is_empty() {
        return x.to_vec();
    }
    let n_out = ((x.len() as f64) * to as f64 / from as f64).round().max(1.0) as usize;
    let ratio = from as f64 / to as f64;
    (0..n_out)
        .map(|i| {
            let src = i as f64 * ratio;
            let i0 = (src.floor() as usize).min(x.len() - 1);
            let i1 = (i0 + 1).min(x.len() - 1);
            let f = (src - i0 as f64) as f32;
            x[i0] * (1.0 - f) + x[i1] * f
        })
        .collect()
}

pub fn save_wav(samples: &[f32], sample_rate: u32, path: &Path) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let to_err = |e: hound::Error| Error::BadAudio {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in samples {
        w.write_sample(s).map_err(to_err)?;
    }
    w.finalize().map_err(to_err)?;
    Ok(())
}

/// Materialises a manifest record into a [`Sample`] at the given size.
pub fn load_sample(record: &ManifestRecord, size: (usize, usize), sample_rate: u32) -> Result<Sample> {
    let image = load_image(&record.image_path, Some(size))?;
    let mask_func = load_mask(&record.mask_func_path, Some(size))?;
    let (mask_dep, has_dep) = match &record.mask_dep_path {
        Some(p) => (load_mask(p, Some(size))?, true),
        None => (Array2::zeros(size), false),
    };
    let audio = load_wav(&record.audio_path, sample_rate)?;
    let sample = Sample {
        image,
        audio,
        sample_rate,
        mask_func,
        mask_dep,
        category: record.category.clone(),
        has_dep,
    };
    sample.validate()?;
    Ok(sample)
}

/// Writes samples as PNG images and masks plus mono WAV clips under `dir`
/// and saves a `manifest.tsv` that references them.
pub fn write_dataset(samples: &[Sample], dir: &Path) -> Result<Manifest> {
    for sub in ["images", "audio", "masks"] {
        std::fs::create_dir_all(dir.join(sub))?;
    }
    let mut records = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let image_path = dir.join(format!("images/{i:05}.png"));
        let audio_path = dir.join(format!("audio/{i:05}.wav"));
        let mask_func_path = dir.join(format!("masks/{i:05}_func.png"));
        save_image(&s.image, &image_path)?;
        save_wav(&s.audio, s.sample_rate, &audio_path)?;
        save_mask(&s.mask_func, &mask_func_path)?;
        let mask_dep_path = if s.has_dep {
            let p = dir.join(format!("masks/{i:05}_dep.png"));
            save_mask(&s.mask_dep, &p)?;
            Some(p)
        } else {
            None
        };
        records.push(ManifestRecord {
            image_path,
            audio_path,
            mask_func_path,
            mask_dep_path,
            category: s.category.clone(),
        });
    }
    let manifest = Manifest {
        records,
        root: dir.to_path_buf(),
    };
    std::fs::write(dir.join("manifest.tsv"), manifest.to_tsv())?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = Array2::from_shape_fn((5, 7), |(y, x)| u8::from((x + y) % 3 == 0));
        save_mask(&m, &p).unwrap();
        assert_eq!(load_mask(&p, None).unwrap(), m);
    }

    #[test]
    fn wav_round_trip_and_resample() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let x: Vec<f32> = (0..800).map(|i| (i as f32 * 0.01).sin()).collect();
        save_wav(&x, 8_000, &p).unwrap();
        let y = load_wav(&p, 8_000).unwrap();
        assert_eq!(x, y);
        let z = load_wav(&p, 16_000).unwrap();
        assert_eq!(z.len(), 1600);
        assert!((z[2] - x[1]).abs() < 1e-6);
    }

    #[test]
    fn missing_audio() {
        assert!(matches!(
            load_wav(Path::new("/definitely/not/here.wav"), 16_000),
            Err(Error::MissingFile(_))
        ));
    }
}
