use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Category;
use crate::error::{Error, Result};

/// One image index and the audio index it is heard with this epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub image: usize,
    pub audio: usize,
}

/// Pairs every image with one audio clip drawn uniformly from the clips of
/// its own category. The draw depends only on `(seed, epoch)`.
pub fn pair_samples(
    images_per_category: &BTreeMap<Category, Vec<usize>>,
    audios_per_category: &BTreeMap<Category, Vec<usize>>,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Pair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut pairs = Vec::new();
    for (cat, images) in images_per_category {
        let audios = match audios_per_category.get(cat) {
            Some(a) if !a.is_empty() => a,
            _ if images.is_empty() => continue,
            _ => return Err(Error::CategoryWithoutAudio(cat.as_str().to_string())),
        };
        for &image in images {
            let audio = audios[rng.random_range(0..audios.len())];
            pairs.push(Pair { image, audio });
        }
    }
    Ok(pairs)
}

/// Groups item indices by category.
pub fn group_by_category<'a, I>(categories: I) -> BTreeMap<Category, Vec<usize>>
where
    I: IntoIterator<Item = &'a Category>,
{
    let mut m: BTreeMap<Category, Vec<usize>> = BTreeMap::new();
    for (i, c) in categories.into_iter().enumerate() {
        m.entry(c.clone()).or_default().push(i);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat(s: &str) -> Category {
        Category::parse(s).unwrap()
    }

    #[test]
    fn single_pair() {
        let imgs = BTreeMap::from([(cat("cut@knife"), vec![4])]);
        let auds = BTreeMap::from([(cat("cut@knife"), vec![9])]);
        assert_eq!(
            pair_samples(&imgs, &auds, 0, 0).unwrap(),
            vec![Pair { image: 4, audio: 9 }]
        );
    }

    #[test]
    fn three_images_two_audios() {
        let imgs = BTreeMap::from([(cat("a@b"), vec![0, 1, 2])]);
        let auds = BTreeMap::from([(cat("a@b"), vec![10, 11])]);
        let p = pair_samples(&imgs, &auds, 1, 0).unwrap();
        assert_eq!(p.len(), 3);
        assert!(p.iter().all(|x| x.audio == 10 || x.audio == 11));
        assert_eq!(p, pair_samples(&imgs, &auds, 1, 0).unwrap());
    }

    #[test]
    fn uniform_frequencies() {
        let imgs = BTreeMap::from([(cat("a@b"), vec![0, 1, 2])]);
        let auds = BTreeMap::from([(cat("a@b"), vec![10, 11])]);
        let mut counts = [0usize; 3];
        for epoch in 0..1000 {
            for p in pair_samples(&imgs, &auds, 42, epoch).unwrap() {
                if p.audio == 10 {
                    counts[p.image] += 1;
                }
            }
        }
        for c in counts {
            let f = c as f64 / 1000.0;
            assert!((f - 0.5).abs() <= 0.05, "frequency {f}");
        }
    }

    #[test]
    fn missing_audio_is_an_error() {
        let imgs = BTreeMap::from([(cat("a@b"), vec![0])]);
        let auds = BTreeMap::from([(cat("c@d"), vec![1])]);
        assert!(matches!(
            pair_samples(&imgs, &auds, 0, 0),
            Err(Error::CategoryWithoutAudio(c)) if c == "a@b"
        ));
    }
}
