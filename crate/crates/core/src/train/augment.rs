use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};

/// Maximum relative strength of each colour perturbation; `hue` is a
/// fraction of a full turn.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ColorJitter {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue: f32,
}

impl Default for ColorJitter {
    fn default() -> Self {
        Self {
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            hue: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Random multiples of 90°; non-square images only get 0° or 180°.
    pub rotate: bool,
    pub hflip: bool,
    pub color: bool,
    pub jitter: ColorJitter,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotate: false,
            hflip: true,
            color: false,
            jitter: ColorJitter::default(),
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            hflip: false,
            ..Self::default()
        }
    }

    pub fn full() -> Self {
        Self {
            rotate: true,
            hflip: true,
            color: true,
            jitter: ColorJitter::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.jitter;
        let ok = [j.brightness, j.contrast, j.saturation]
            .iter()
            .all(|v| (0.0..1.0).contains(v))
            && (0.0..=0.5).contains(&j.hue);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("color jitter out of range: {j:?}")))
        }
    }
}

/// Counter-clockwise rotation by 90°: `out[i][j] = in[j][W-1-i]`.
pub fn rot90<T: Clone>(m: ArrayView2<T>) -> Array2<T> {
    let mut r = m.t().to_owned();
    r.invert_axis(Axis(0));
    r
}

fn rot90_image(img: &Array3<f32>) -> Array3<f32> {
    let mut r = img.view().permuted_axes([1, 0, 2]).to_owned();
    r.invert_axis(Axis(0));
    r
}

fn luma(p: [f32; 3]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

/// Brightness, contrast, saturation, then a hue rotation in YIQ space.
fn jitter_colors(img: &mut Array3<f32>, b: f32, c: f32, s: f32, hue_turns: f32) {
    let (h, w, _) = img.dim();
    let mut mean = 0.0;
    for y in 0..h {
        for x in 0..w {
            mean += luma([img[[y, x, 0]], img[[y, x, 1]], img[[y, x, 2]]]) * b;
        }
    }
    mean /= (h * w).max(1) as f32;
    let (sin, cos) = (hue_turns * std::f32::consts::TAU).sin_cos();
    for y in 0..h {
        for x in 0..w {
            let mut p = [img[[y, x, 0]] * b, img[[y, x, 1]] * b, img[[y, x, 2]] * b];
            for v in &mut p {
                *v = (*v - mean) * c + mean;
            }
            let g = luma(p);
            for v in &mut p {
                *v = g + (*v - g) * s;
            }
            let i = 0.596 * p[0] - 0.274 * p[1] - 0.322 * p[2];
            let q = 0.211 * p[0] - 0.523 * p[1] + 0.312 * p[2];
            let di = i * cos - q * sin - i;
            let dq = i * sin + q * cos - q;
            let delta = [
                0.956 * di + 0.621 * dq,
                -0.272 * di - 0.647 * dq,
                -1.106 * di + 1.703 * dq,
            ];
            for k in 0..3 {
                img[[y, x, k]] = (p[k] + delta[k]).clamp(0.0, 1.0);
            }
        }
    }
}

/// Applies the same spatial transform to the image and both masks and a
/// colour perturbation to the image only. Masks are only permuted, never
/// interpolated, so they stay binary.
pub fn augment<R: Rng>(sample: &Sample, cfg: &AugmentConfig, rng: &mut R) -> Sample {
    let mut out = sample.clone();
    if cfg.hflip && rng.random_bool(0.5) {
        out.image = out.image.slice(s![.., ..;-1, ..]).to_owned();
        out.mask_func = out.mask_func.slice(s![.., ..;-1]).to_owned();
        out.mask_dep = out.mask_dep.slice(s![.., ..;-1]).to_owned();
    }
    if cfg.rotate {
        let square = out.height() == out.width();
        let quarter_turns = if square {
            rng.random_range(0..4)
        } else {
            2 * rng.random_range(0..2)
        };
        for _ in 0..quarter_turns {
            out.image = rot90_image(&out.image);
            out.mask_func = rot90(out.mask_func.view());
            out.mask_dep = rot90(out.mask_dep.view());
        }
    }
    if cfg.color {
        let j = cfg.jitter;
        let mut f = |m: f32| 1.0 + rng.random_range(-m..=m);
        let (b, c, s) = (f(j.brightness), f(j.contrast), f(j.saturation));
        let hue = rng.random_range(-j.hue..=j.hue);
        jitter_colors(&mut out.image, b, c, s, hue);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Sample {
        let cfg = SynthConfig {
            num_samples: 1,
            num_categories: 1,
            image_size: 16,
            min_audio_seconds: 0.1,
            max_audio_seconds: 0.2,
            ..SynthConfig::default()
        };
        generate_synthetic(&cfg, 3).unwrap().remove(0)
    }

    #[test]
    fn all_off_is_identity() {
        let s = sample();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(augment(&s, &AugmentConfig::none(), &mut rng), s);
        }
    }

    #[test]
    fn hflip_moves_masks_with_image() {
        let s = sample();
        let cfg = AugmentConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut flipped = 0;
        for _ in 0..20 {
            let a = augment(&s, &cfg, &mut rng);
            if a == s {
                continue;
            }
            flipped += 1;
            let w = s.width();
            for y in 0..s.height() {
                for x in 0..w {
                    assert_eq!(a.mask_func[[y, x]], s.mask_func[[y, w - 1 - x]]);
                    assert_eq!(a.mask_dep[[y, x]], s.mask_dep[[y, w - 1 - x]]);
                    assert_eq!(a.image[[y, x, 1]], s.image[[y, w - 1 - x, 1]]);
                }
            }
        }
        assert!(flipped > 0);
    }

    #[test]
    fn rot90_index_oracle() {
        let m = Array2::from_shape_fn((4, 4), |(y, x)| (4 * y + x) as u8);
        let r = rot90(m.view());
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(r[[i, j]], m[[j, 3 - i]]);
            }
        }
        let k = array![[1u8, 0, 0, 0], [1, 1, 0, 0], [0, 0, 0, 0], [0, 0, 0, 1]];
        let want = array![[0u8, 0, 0, 1], [0, 0, 0, 0], [0, 1, 0, 0], [1, 1, 0, 0]];
        assert_eq!(rot90(k.view()), want);
        let img = Array3::from_shape_fn((4, 4, 3), |(y, x, c)| (16 * c + 4 * y + x) as f32);
        let ri = rot90_image(&img);
        for c in 0..3 {
            for i in 0..4 {
                for j in 0..4 {
                    assert_eq!(ri[[i, j, c]], img[[j, 3 - i, c]]);
                }
            }
        }
    }

    #[test]
    fn full_augmentation_keeps_alignment_and_binarity() {
        let s = sample();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a = augment(&s, &AugmentConfig::full(), &mut rng);
            assert!(a.mask_func.iter().chain(a.mask_dep.iter()).all(|&v| v <= 1));
            assert_eq!(a.mask_func.iter().map(|&v| v as usize).sum::<usize>(),
                       s.mask_func.iter().map(|&v| v as usize).sum::<usize>());
            assert!(a.image.iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(a.audio, s.audio);
            // function and dependency regions stay disjoint
            assert!(a.mask_func.iter().zip(a.mask_dep.iter()).all(|(f, d)| f & d == 0));
        }
    }

    #[test]
    fn neutral_jitter_is_identity() {
        let s = sample();
        let mut img = s.image.clone();
        jitter_colors(&mut img, 1.0, 1.0, 1.0, 0.0);
        let d = (&img - &s.image).mapv(f32::abs).fold(0.0f32, |a, &b| a.max(b));
        assert!(d < 1e-5);
    }
}
