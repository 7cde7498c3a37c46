//! Near-duplicate removal with a 64-bit average hash.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use ndarray::Array3;

use crate::data::io::load_image;
use crate::data::manifest::Manifest;
use crate::error::Result;

/// Average hash: 8×8 box-downscaled luma, one bit per cell set when the
/// cell is brighter than the mean of all 64 cells. Bit `8*row + col`.
pub fn average_hash(image: &Array3<f32>) -> u64 {
    let (h, w, _) = image.dim();
    assert!(h > 0 && w > 0, "average_hash needs a nonempty image");
    // cell (cy, cx) averages rows [cy*h/8, (cy+1)*h/8), widened to at least
    // one pixel so images smaller than 8×8 still hash
    let span = |c: usize, n: usize| {
        let a = c * n / 8;
        (a, ((c + 1) * n / 8).max(a + 1))
    };
    let cells: Vec<f64> = (0..64)
        .map(|i| {
            let (y0, y1) = span(i / 8, h);
            let (x0, x1) = span(i % 8, w);
            let mut sum = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    let px = image.slice(ndarray::s![y, x, ..]);
                    sum += 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
                }
            }
            sum / ((y1 - y0) * (x1 - x0)) as f64
        })
        .collect();
    let mean = cells.iter().sum::<f64>() / 64.0;
    cells
        .iter()
        .enumerate()
        .fold(0u64, |acc, (i, &v)| if v > mean { acc | (1 << i) } else { acc })
}

pub fn hamming(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}

/// Greedy deduplication: keeps image `i` iff its hash differs by more than
/// `max_hamming` bits from every previously kept hash. Indices are
/// returned in input order.
pub fn dedup_perceptual_hash(images: &[Array3<f32>], max_hamming: u32) -> Vec<usize> {
    let hashes: Vec<u64> = images.iter().map(average_hash).collect();
    dedup_hashes(&hashes, max_hamming)
}

pub fn dedup_hashes(hashes: &[u64], max_hamming: u32) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for (i, &h) in hashes.iter().enumerate() {
        if kept.iter().all(|&k| hamming(hashes[k], h) > max_hamming) {
            kept.push(i);
        }
    }
    kept
}

/// Drops manifest records whose image is a near-duplicate of an earlier
/// distinct image. Records sharing one image file are kept or dropped
/// together.
pub fn dedup_manifest(manifest: &Manifest, max_hamming: u32) -> Result<Manifest> {
    let mut first_seen: BTreeMap<usize, PathBuf> = BTreeMap::new();
    let mut seen = HashSet::new();
    for (i, r) in manifest.records.iter().enumerate() {
        if seen.insert(r.image_path.clone()) {
            first_seen.insert(i, r.image_path.clone());
        }
    }
    let paths: Vec<PathBuf> = first_seen.into_values().collect();
    let hashes = paths
        .iter()
        .map(|p| Ok(average_hash(&load_image(p, None)?)))
        .collect::<Result<Vec<_>>>()?;
    let kept: HashSet<&PathBuf> = dedup_hashes(&hashes, max_hamming).into_iter().map(|i| &paths[i]).collect();
    Ok(Manifest {
        records: manifest
            .records
            .iter()
            .filter(|r| kept.contains(&r.image_path))
            .cloned()
            .collect(),
        root: manifest.root.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(rng: &mut ChaCha8Rng, s: usize) -> Array3<f32> {
        Array3::from_shape_fn((s, s, 3), |_| rng.random::<f32>())
    }

    #[test]
    fn identical_images_collapse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = noise(&mut rng, 32);
        assert_eq!(dedup_perceptual_hash(&[a.clone(), a], 0), vec![0]);
    }

    #[test]
    fn singleton_is_kept() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(dedup_perceptual_hash(&[noise(&mut rng, 16)], 5), vec![0]);
    }

    #[test]
    fn brightness_shift_keeps_hash() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = noise(&mut rng, 32).mapv(|v| v * 0.5);
        let b = a.mapv(|v| v + 0.2);
        assert_eq!(average_hash(&a), average_hash(&b));
    }

    #[test]
    fn tiny_images_hash_without_panicking() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let _ = average_hash(&noise(&mut rng, 3));
        let _ = average_hash(&Array3::zeros((1, 1, 3)));
    }

    #[test]
    fn idempotent_on_kept_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let imgs: Vec<_> = (0..30).map(|_| noise(&mut rng, 16)).collect();
        let kept = dedup_perceptual_hash(&imgs, 24);
        let sub: Vec<_> = kept.iter().map(|&i| imgs[i].clone()).collect();
        assert_eq!(dedup_perceptual_hash(&sub, 24), (0..sub.len()).collect::<Vec<_>>());
    }
}
