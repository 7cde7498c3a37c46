use candle_core::{DType, Tensor};
use ndarray::{Array2, Array3};

use crate::audio::Spectrogram;
use crate::data::{Category, Manifest};
use crate::error::Result;
use crate::metrics::{binarize, MaskPair, MetricReport, Scores, DEFAULT_THRESHOLD};
use crate::model::AvagModel;
use crate::train::checkpoint::Checkpoint;
use crate::train::dataset::{load_manifest_split, Dataset, EvalSplit, Item};

/// Frames per clip in the video-style evaluation protocol.
pub const S4_FRAMES: usize = 5;

/// Probability maps of one forward pass.
#[derive(Debug, Clone)]
pub struct ProbMaps {
    pub func: Array2<f32>,
    pub dep: Array2<f32>,
}

impl ProbMaps {
    pub fn binarize(&self) -> MaskPair {
        MaskPair {
            func: binarize(&self.func, DEFAULT_THRESHOLD),
            dep: binarize(&self.dep, DEFAULT_THRESHOLD),
        }
    }
}

fn tensor_to_maps(t: &Tensor) -> Result<Vec<Array2<f32>>> {
    let (b, h, w) = t.dims3()?;
    let v: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    Ok((0..b)
        .map(|i| Array2::from_shape_vec((h, w), v[i * h * w..(i + 1) * h * w].to_vec()).expect("shape"))
        .collect())
}

/// Forward pass on a batch of images, each with its own spectrogram.
pub fn predict_batch(model: &AvagModel, images: &[&Array3<f32>], specs: &[&Spectrogram]) -> Result<Vec<ProbMaps>> {
    let pred = model.forward(&model.image_tensor(images)?, &model.spec_tensor(specs)?)?;
    let func = tensor_to_maps(&pred.func_prob()?)?;
    let dep = tensor_to_maps(&pred.dep_prob()?)?;
    Ok(func.into_iter().zip(dep).map(|(func, dep)| ProbMaps { func, dep }).collect())
}

fn predict_item(model: &AvagModel, item: &Item) -> Result<ProbMaps> {
    Ok(predict_batch(model, &[&item.sample.image], &[&item.spec])?.remove(0))
}

fn ground_truth(item: &Item) -> MaskPair {
    MaskPair {
        func: item.sample.mask_func.clone(),
        dep: item.sample.mask_dep.clone(),
    }
}

/// Per-sample scores, one forward pass per item so results do not depend
/// on batch composition.
pub fn score_items(model: &AvagModel, data: &Dataset) -> Result<Vec<(Category, Scores)>> {
    data.items
        .iter()
        .map(|item| {
            let pred = predict_item(model, item)?.binarize();
            Ok((item.sample.category.clone(), Scores::sample(&pred, &ground_truth(item))?))
        })
        .collect()
}

/// Scores a model on a prepared dataset without augmentation.
pub fn evaluate_model(model: &AvagModel, data: &Dataset) -> Result<MetricReport> {
    MetricReport::from_samples(&score_items(model, data)?)
}

/// Loads the requested split of a manifest, using the split settings stored
/// in the checkpoint, and scores the checkpoint on it.
pub fn evaluate(ck: &Checkpoint, manifest: &Manifest, split: EvalSplit) -> Result<MetricReport> {
    let model = ck.model()?;
    let cfg = &ck.meta.config;
    let data = load_manifest_split(manifest, &cfg.split_spec()?, &cfg.model_config())?.take(split);
    evaluate_model(&model, &data)
}

#[derive(Debug, Clone)]
pub struct S4Report {
    pub report: MetricReport,
    /// Per sample, the scores of each replicated frame.
    pub per_frame: Vec<[Scores; S4_FRAMES]>,
}

fn frame_mean(frames: &[Scores; S4_FRAMES]) -> Scores {
    // x₁ + mean(xᵢ − x₁): exact when all frames agree
    let f0 = frames[0];
    let mut d = Scores::default();
    for f in &frames[1..] {
        d.miou_f += f.miou_f - f0.miou_f;
        d.f_f += f.f_f - f0.f_f;
        d.miou_d += f.miou_d - f0.miou_d;
        d.f_d += f.f_d - f0.f_d;
    }
    let n = S4_FRAMES as f64;
    Scores {
        miou_f: f0.miou_f + d.miou_f / n,
        f_f: f0.f_f + d.f_f / n,
        miou_d: f0.miou_d + d.miou_d / n,
        f_d: f0.f_d + d.f_d / n,
    }
}

/// Video-style protocol: each still image is repeated as five frames with
/// the clip's (five-second) audio, every frame is scored, and the frame
/// scores are averaged per sample.
pub fn s4_protocol_eval_model(model: &AvagModel, data: &Dataset) -> Result<S4Report> {
    let mut per_frame = Vec::with_capacity(data.len());
    let mut samples = Vec::with_capacity(data.len());
    for item in &data.items {
        let gt = ground_truth(item);
        let mut frames = [Scores::default(); S4_FRAMES];
        for f in frames.iter_mut() {
            *f = Scores::sample(&predict_item(model, item)?.binarize(), &gt)?;
        }
        samples.push((item.sample.category.clone(), frame_mean(&frames)));
        per_frame.push(frames);
    }
    Ok(S4Report {
        report: MetricReport::from_samples(&samples)?,
        per_frame,
    })
}

pub fn s4_protocol_eval(ck: &Checkpoint, manifest: &Manifest, split: EvalSplit) -> Result<S4Report> {
    let model = ck.model()?;
    let cfg = &ck.meta.config;
    let data = load_manifest_split(manifest, &cfg.split_spec()?, &cfg.model_config())?.take(split);
    s4_protocol_eval_model(&model, &data)
}
