//! Binary-mask evaluation: IoU, mIoU and the recall-weighted F-score.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::data::Category;
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f32 = 0.5;
pub const DEFAULT_BETA2: f64 = 0.3;

/// `1` where `prob >= threshold`.
pub fn binarize(prob: &Array2<f32>, threshold: f32) -> Array2<u8> {
    prob.mapv(|p| u8::from(p >= threshold))
}

struct Counts {
    inter: u64,
    p: u64,
    q: u64,
}

fn counts(p: &Array2<u8>, q: &Array2<u8>) -> Result<Counts> {
    if p.dim() != q.dim() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", p.dim(), q.dim())));
    }
    let mut c = Counts { inter: 0, p: 0, q: 0 };
    Zip::from(p).and(q).for_each(|&a, &b| {
        let (a, b) = (a != 0, b != 0);
        c.p += a as u64;
        c.q += b as u64;
        c.inter += (a && b) as u64;
    });
    Ok(c)
}

/// `|P ∩ Q| / |P ∪ Q|`; 1 when both are empty.
pub fn iou(p: &Array2<u8>, q: &Array2<u8>) -> Result<f64> {
    let c = counts(p, q)?;
    let union = c.p + c.q - c.inter;
    Ok(if union == 0 { 1.0 } else { c.inter as f64 / union as f64 })
}

pub fn miou<'a, I>(pairs: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a Array2<u8>, &'a Array2<u8>)>,
{
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, q) in pairs {
        sum += iou(p, q)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyList);
    }
    Ok(sum / n as f64)
}

/// `P` is the prediction, `Q` the ground truth. Both empty gives 1, exactly
/// one empty gives 0.
pub fn f_score(p: &Array2<u8>, q: &Array2<u8>, beta2: f64) -> Result<f64> {
    let c = counts(p, q)?;
    Ok(match (c.p, c.q) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ if c.inter == 0 => 0.0,
        _ => {
            let prec = c.inter as f64 / c.p as f64;
            let rec = c.inter as f64 / c.q as f64;
            (1.0 + beta2) * prec * rec / (beta2 * prec + rec)
        }
    })
}

/// Binary function and dependency masks of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPair {
    pub func: Array2<u8>,
    pub dep: Array2<u8>,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq)]
pub struct Scores {
    pub miou_f: f64,
    pub f_f: f64,
    pub miou_d: f64,
    pub f_d: f64,
}

impl Scores {
    fn add(&mut self, o: &Scores) {
        self.miou_f += o.miou_f;
        self.f_f += o.f_f;
        self.miou_d += o.miou_d;
        self.f_d += o.f_d;
    }

    fn scale(&mut self, k: f64) {
        self.miou_f *= k;
        self.f_f *= k;
        self.miou_d *= k;
        self.f_d *= k;
    }

    pub fn sample(pred: &MaskPair, gt: &MaskPair) -> Result<Scores> {
        Ok(Scores {
            miou_f: iou(&pred.func, &gt.func)?,
            f_f: f_score(&pred.func, &gt.func, DEFAULT_BETA2)?,
            miou_d: iou(&pred.dep, &gt.dep)?,
            f_d: f_score(&pred.dep, &gt.dep, DEFAULT_BETA2)?,
        })
    }

    /// Mean of function and dependency mIoU, used for model selection.
    pub fn selection_score(&self) -> f64 {
        (self.miou_f + self.miou_d) / 2.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CategoryScores {
    #[serde(flatten)]
    pub scores: Scores,
    pub n_samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricReport {
    pub miou_f: f64,
    pub f_f: f64,
    pub miou_d: f64,
    pub f_d: f64,
    pub per_category: BTreeMap<String, CategoryScores>,
    pub n_samples: usize,
}

impl MetricReport {
    pub fn scores(&self) -> Scores {
        Scores {
            miou_f: self.miou_f,
            f_f: self.f_f,
            miou_d: self.miou_d,
            f_d: self.f_d,
        }
    }

    /// Aggregate per-sample scores.
    pub fn from_samples(samples: &[(Category, Scores)]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyList);
        }
        let mut total = Scores::default();
        let mut per: BTreeMap<String, (Scores, usize)> = BTreeMap::new();
        for (cat, s) in samples {
            total.add(s);
            let e = per.entry(cat.as_str().to_string()).or_default();
            e.0.add(s);
            e.1 += 1;
        }
        total.scale(1.0 / samples.len() as f64);
        let per_category = per
            .into_iter()
            .map(|(k, (mut s, n))| {
                s.scale(1.0 / n as f64);
                (k, CategoryScores { scores: s, n_samples: n })
            })
            .collect();
        Ok(Self {
            miou_f: total.miou_f,
            f_f: total.f_f,
            miou_d: total.miou_d,
            f_d: total.f_d,
            per_category,
            n_samples: samples.len(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Fixed-width table with values scaled by 100.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let name_w = self
            .per_category
            .keys()
            .map(|k| k.len())
            .max()
            .unwrap_or(0)
            .max(8);
        let _ = writeln!(
            out,
            "{:<name_w$} {:>5} {:>7} {:>7} {:>7} {:>7}",
            "category", "n", "mIoU_f", "F_f", "mIoU_d", "F_d"
        );
        let mut row = |name: &str, n: usize, s: &Scores| {
            let _ = writeln!(
                out,
                "{:<name_w$} {:>5} {:>7.2} {:>7.2} {:>7.2} {:>7.2}",
                name,
                n,
                100.0 * s.miou_f,
                100.0 * s.f_f,
                100.0 * s.miou_d,
                100.0 * s.f_d
            );
        };
        for (k, c) in &self.per_category {
            row(k, c.n_samples, &c.scores);
        }
        row("all", self.n_samples, &self.scores());
        out
    }
}

/// Score predictions against ground truth. Dependency scores cover every
/// sample; unannotated samples carry an all-zero dependency mask.
pub fn evaluate_split(
    predictions: &[MaskPair],
    ground_truths: &[MaskPair],
    categories: &[Category],
) -> Result<MetricReport> {
    if predictions.len() != ground_truths.len() {
        return Err(Error::LengthMismatch(predictions.len(), ground_truths.len()));
    }
    if predictions.len() != categories.len() {
        return Err(Error::LengthMismatch(predictions.len(), categories.len()));
    }
    let samples = predictions
        .iter()
        .zip(ground_truths)
        .zip(categories)
        .map(|((p, g), c)| Ok((c.clone(), Scores::sample(p, g)?)))
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_samples(&samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn mask(v: &[u8], w: usize) -> Array2<u8> {
        Array2::from_shape_vec((v.len() / w, w), v.to_vec()).unwrap()
    }

    // independent scorer on flat slices
    fn brute(p: &[u8], q: &[u8]) -> (f64, f64) {
        let mut i = 0.0;
        let mut u = 0.0;
        let mut np = 0.0;
        let mut nq = 0.0;
        for k in 0..p.len() {
            let a = p[k] == 1;
            let b = q[k] == 1;
            if a && b {
                i += 1.0;
            }
            if a || b {
                u += 1.0;
            }
            if a {
                np += 1.0;
            }
            if b {
                nq += 1.0;
            }
        }
        let iou = if u == 0.0 { 1.0 } else { i / u };
        let f = if np == 0.0 && nq == 0.0 {
            1.0
        } else if np == 0.0 || nq == 0.0 || i == 0.0 {
            0.0
        } else {
            let pr = i / np;
            let re = i / nq;
            1.3 * pr * re / (0.3 * pr + re)
        };
        (iou, f)
    }

    #[test]
    fn binarize_ties_and_zero() {
        let half = Array2::from_elem((3, 3), 0.5f32);
        assert!(binarize(&half, 0.5).iter().all(|&v| v == 1));
        let zero = Array2::zeros((3, 3));
        assert!(binarize(&zero, 0.5).iter().all(|&v| v == 0));
    }

    #[test]
    fn iou_hand_cases() {
        let p = array![[1u8, 1], [0, 0]];
        let q = array![[1u8, 0], [0, 0]];
        assert_eq!(iou(&p, &q).unwrap(), 0.5);
        assert_eq!(iou(&p, &p).unwrap(), 1.0);
        let r = array![[0u8, 0], [1, 1]];
        assert_eq!(iou(&p, &r).unwrap(), 0.0);
        let z = Array2::<u8>::zeros((2, 2));
        assert_eq!(iou(&z, &z).unwrap(), 1.0);
        assert!(matches!(iou(&p, &Array2::zeros((2, 3))), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn miou_cases() {
        let p = array![[1u8, 1], [0, 0]];
        let r = array![[0u8, 0], [1, 1]];
        assert_eq!(miou([(&p, &p)]).unwrap(), 1.0);
        assert_eq!(miou([(&p, &p), (&p, &r)]).unwrap(), 0.5);
        assert!(matches!(miou(std::iter::empty()), Err(Error::EmptyList)));
    }

    #[test]
    fn f_score_hand_cases() {
        // prec 0.5, rec 1
        let p = mask(&[1, 1, 0, 0], 2);
        let q = mask(&[1, 0, 0, 0], 2);
        let f = f_score(&p, &q, 0.3).unwrap();
        assert!((f - 0.65 / 1.15).abs() < 1e-12);
        assert!((f - 0.5652).abs() < 1e-4);
        assert_eq!(f_score(&p, &p, 0.3).unwrap(), 1.0);
        assert_eq!(f_score(&p, &mask(&[0, 0, 1, 1], 2), 0.3).unwrap(), 0.0);
        // asymmetric
        assert_ne!(f_score(&q, &p, 0.3).unwrap(), f);
    }

    #[test]
    fn f_score_empty_conventions() {
        let z = Array2::<u8>::zeros((2, 2));
        let p = mask(&[1, 0, 0, 0], 2);
        assert_eq!(f_score(&z, &z, 0.3).unwrap(), 1.0);
        assert_eq!(f_score(&z, &p, 0.3).unwrap(), 0.0);
        assert_eq!(f_score(&p, &z, 0.3).unwrap(), 0.0);
    }

    fn random_masks(seed: u64, n: usize, s: usize) -> Vec<(Array2<u8>, Array2<u8>)> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let d1: f64 = rng.random();
                let d2: f64 = rng.random();
                let p = Array2::from_shape_fn((s, s), |_| u8::from(rng.random::<f64>() < d1));
                let q = Array2::from_shape_fn((s, s), |_| u8::from(rng.random::<f64>() < d2));
                (p, q)
            })
            .collect()
    }

    #[test]
    fn matches_brute_force() {
        let pairs = random_masks(7, 50, 8);
        let mut sum = 0.0;
        for (p, q) in &pairs {
            let (bi, bf) = brute(p.as_slice().unwrap(), q.as_slice().unwrap());
            assert!((iou(p, q).unwrap() - bi).abs() < 1e-12);
            assert!((f_score(p, q, 0.3).unwrap() - bf).abs() < 1e-12);
            sum += bi;
        }
        let m = miou(pairs.iter().map(|(p, q)| (p, q))).unwrap();
        assert!((m - sum / 50.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_split_cases() {
        let pairs = random_masks(3, 20, 8);
        let cats: Vec<Category> = (0..20)
            .map(|i| Category::parse(&format!("a{}@o", i % 3)).unwrap())
            .collect();
        let preds: Vec<MaskPair> = pairs
            .iter()
            .map(|(p, q)| MaskPair { func: p.clone(), dep: q.clone() })
            .collect();
        let gts: Vec<MaskPair> = pairs
            .iter()
            .map(|(p, q)| MaskPair { func: q.clone(), dep: p.clone() })
            .collect();
        let r = evaluate_split(&preds, &gts, &cats).unwrap();
        let mut want = [0.0; 4];
        for (p, q) in &pairs {
            let (i1, f1) = brute(p.as_slice().unwrap(), q.as_slice().unwrap());
            let (i2, f2) = brute(q.as_slice().unwrap(), p.as_slice().unwrap());
            want[0] += i1 / 20.0;
            want[1] += f1 / 20.0;
            want[2] += i2 / 20.0;
            want[3] += f2 / 20.0;
        }
        assert!((r.miou_f - want[0]).abs() < 1e-12);
        assert!((r.f_f - want[1]).abs() < 1e-12);
        assert!((r.miou_d - want[2]).abs() < 1e-12);
        assert!((r.f_d - want[3]).abs() < 1e-12);
        // weighted per-category means recover the global means
        let weighted: f64 = r
            .per_category
            .values()
            .map(|c| c.scores.miou_f * c.n_samples as f64)
            .sum::<f64>()
            / 20.0;
        assert!((weighted - r.miou_f).abs() < 1e-12);

        let perfect = evaluate_split(&gts, &gts, &cats).unwrap();
        assert_eq!(perfect.scores(), Scores { miou_f: 1.0, f_f: 1.0, miou_d: 1.0, f_d: 1.0 });
        assert!(matches!(evaluate_split(&[], &[], &[]), Err(Error::EmptyList)));
        assert!(matches!(
            evaluate_split(&preds[..2], &gts[..3], &cats[..2]),
            Err(Error::LengthMismatch(2, 3))
        ));
        let json: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        for k in ["miou_f", "f_f", "miou_d", "f_d", "per_category", "n_samples"] {
            assert!(json.get(k).is_some());
        }
        assert!(r.table().contains("all"));
    }

    fn arb_pair() -> impl Strategy<Value = (Vec<u8>, Vec<u8>, Vec<usize>)> {
        (1usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec(0u8..2, n),
                prop::collection::vec(0u8..2, n),
                Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
            )
        })
    }

    proptest! {
        #[test]
        fn bounded_symmetric_and_permutation_invariant((p, q, perm) in arb_pair()) {
            let n = p.len();
            let pm = mask(&p, n);
            let qm = mask(&q, n);
            let i = iou(&pm, &qm).unwrap();
            let f = f_score(&pm, &qm, 0.3).unwrap();
            prop_assert!((0.0..=1.0).contains(&i));
            prop_assert!((0.0..=1.0).contains(&f));
            prop_assert_eq!(i, iou(&qm, &pm).unwrap());
            let pp: Vec<u8> = perm.iter().map(|&k| p[k]).collect();
            let qp: Vec<u8> = perm.iter().map(|&k| q[k]).collect();
            prop_assert_eq!(i, iou(&mask(&pp, n), &mask(&qp, n)).unwrap());
            prop_assert_eq!(f, f_score(&mask(&pp, n), &mask(&qp, n), 0.3).unwrap());
        }

        #[test]
        fn miou_permutation_invariant(seed in 0u64..1000) {
            let pairs = random_masks(seed, 6, 4);
            let a = miou(pairs.iter().map(|(p, q)| (p, q))).unwrap();
            let b = miou(pairs.iter().rev().map(|(p, q)| (p, q))).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
