//! Double-precision toy problems whose analytic gradients are compared
//! against finite differences.

use avag::audio::{AudioEncoder, AudioEncoderConfig, AudioFeatures};
use avag::decoder::{decode, AffordanceDecoder, DecoderConfig, DecoderSkips};
use avag::mixer::{CrossModalMixer, MixedFeatures, MixerConfig, Task};
use avag::nn::ParamStore;
use avag::objectives::{dice_loss, focal_loss, soft_iou_loss};
use avag::visual::{Backbone, FeaturePyramid, PyramidEnhancer, VisualConfig};
use candle_core::{DType, Tensor, Var};

use super::*;


pub fn loss_gradients() -> GradReport {
    let mut total = GradReport::default();
    let pred = Var::from_tensor(&uniform(&[2, 4, 4], 0.05, 0.95, 1)).unwrap();
    let gt = uniform(&[2, 4, 4], 0.0, 1.0, 2).ge(0.5).unwrap().to_dtype(DType::F64).unwrap();
    let losses: Vec<(&str, Box<dyn Fn() -> Tensor>)> = vec![
        ("soft iou", Box::new(|| soft_iou_loss(pred.as_tensor(), &gt, 1e-6).unwrap().sum_all().unwrap())),
        ("dice", Box::new(|| dice_loss(pred.as_tensor(), &gt, 1e-6).unwrap().sum_all().unwrap())),
        ("focal", Box::new(|| focal_loss(pred.as_tensor(), &gt, 0.25, 2.0, 1e-6).unwrap().sum_all().unwrap())),
        ("focal gamma 1.5", Box::new(|| focal_loss(pred.as_tensor(), &gt, 0.4, 1.5, 1e-6).unwrap().sum_all().unwrap())),
    ];
    for (name, f) in &losses {
        let r = check_vars(std::slice::from_ref(&pred), f.as_ref(), 64, 1e-6);
        total = total.merge(r.labelled(name));
    }
    total
}

pub fn audio_encoder_gradients() -> GradReport {
    let mut ps = ParamStore::new(3, DType::F64);
    let cfg = AudioEncoderConfig {
        channels: [2, 3, 4],
        patch_frames: 4,
        freq_bands: 8,
    };
    let enc = AudioEncoder::new(&mut ps, "audio", &cfg).unwrap();
    let spec = Var::from_tensor(&uniform(&[1, 1, 18, 13], 0.0, 2.0, 4)).unwrap();
    let f = || enc.forward(spec.as_tensor()).unwrap().feats.sum_all().unwrap();
    let a = check_vars(std::slice::from_ref(&spec), &f, 80, 1e-6).labelled("input");
    let b = check_vars(&ps.all_vars(), &f, 6, 1e-6).labelled("params");
    a.merge(b)
}

pub fn backbone_and_enhancer_gradients() -> GradReport {
    let mut ps = ParamStore::new(5, DType::F64);
    let cfg = VisualConfig {
        channels: [4, 4, 8, 8],
        transformer_layers: 1,
        transformer_heads: 2,
    };
    let bb = Backbone::new(&mut ps, "bb", &cfg).unwrap();
    let en = PyramidEnhancer::new(&mut ps, "en", &cfg).unwrap();
    let img = Var::from_tensor(&randn(&[1, 3, 32, 32], 6)).unwrap();
    let f = || {
        let out = bb.forward(img.as_tensor()).unwrap();
        let e = en.forward(&out.pyramid).unwrap();
        let mut l = probe(&out.stem, 1);
        for (i, lvl) in e.pyramid.levels.iter().enumerate() {
            l = (l + probe(lvl, 10 + i as u64)).unwrap();
        }
        l
    };
    // the 1×1 coarsest level makes layer norm sharply curved, so the
    // plain O(h²) estimate is not accurate enough here
    let a = check_vars_richardson(std::slice::from_ref(&img), &f, 60, 1e-6).labelled("input");
    let b = check_vars_richardson(&ps.all_vars(), &f, 3, 1e-6).labelled("params");
    a.merge(b)
}

fn mixer_loss(m: &MixedFeatures) -> Tensor {
    let mut l = Tensor::zeros((), DType::F64, &candle_core::Device::Cpu).unwrap();
    for (ti, task) in Task::BOTH.iter().enumerate() {
        for (si, v) in m.visual_for(*task).iter().enumerate() {
            l = (l + probe(v, 100 + 10 * ti as u64 + si as u64)).unwrap();
        }
        l = (l + probe(m.audio_for(*task), 200 + ti as u64)).unwrap();
    }
    l
}

pub fn mixer_gradients_one_scale_four_tokens() -> GradReport {
    let mut ps = ParamStore::new(7, DType::F64);
    let cfg = MixerConfig {
        shared_dim: 8,
        heads: 2,
        ..MixerConfig::default()
    };
    let mixer = CrossModalMixer::new(&mut ps, "mixer", &[6], 5, &cfg).unwrap();
    jitter_params(&ps, 0.3, 70);
    let vis = Var::from_tensor(&randn(&[1, 6, 2, 2], 8)).unwrap();
    let aud = Var::from_tensor(&randn(&[1, 3, 128], 9)).unwrap();
    let f = || {
        let pyr = FeaturePyramid {
            levels: vec![vis.as_tensor().clone()],
        };
        let audio = AudioFeatures {
            feats: aud.as_tensor().clone(),
        };
        mixer_loss(&mixer.forward(&pyr, &audio).unwrap())
    };
    let a = check_vars(&[vis.clone(), aud.clone()], &f, 400, 1e-6).labelled("inputs");
    let b = check_vars(&ps.all_vars(), &f, 12, 1e-6).labelled("params");
    a.merge(b)
}

pub fn decoder_gradients_32x32() -> GradReport {
    let mut ps = ParamStore::new(11, DType::F64);
    let cfg = DecoderConfig {
        c_v: 6,
        n_queries: 2,
        audio_dim: 8,
        refine_channels: 3,
        se: true,
        mca: true,
        dual: true,
    };
    let dec = AffordanceDecoder::new(&mut ps, "dec", &cfg, 2).unwrap();
    jitter_params(&ps, 0.2, 110);
    let sizes = [8usize, 4, 2, 1];
    let vis: Vec<Vec<Var>> = (0..2)
        .map(|t| {
            sizes
                .iter()
                .enumerate()
                .map(|(i, &s)| Var::from_tensor(&randn(&[1, 6, s, s], 20 + 4 * t + i as u64)).unwrap())
                .collect()
        })
        .collect();
    let aud: Vec<Var> = (0..2).map(|t| Var::from_tensor(&randn(&[1, 3, 8], 40 + t)).unwrap()).collect();
    let stem = Var::from_tensor(&randn(&[1, 2, 16, 16], 50)).unwrap();
    let image = Var::from_tensor(&randn(&[1, 3, 32, 32], 51)).unwrap();
    let f = || {
        let mixed = MixedFeatures {
            visual: vis.iter().map(|v| v.iter().map(|x| x.as_tensor().clone()).collect()).collect(),
            audio: aud.iter().map(|a| a.as_tensor().clone()).collect(),
            attention: Vec::new(),
            gates: Vec::new(),
        };
        let skips = DecoderSkips {
            stem: stem.as_tensor().clone(),
            image: image.as_tensor().clone(),
        };
        let p = decode(&mixed, &skips, &dec).unwrap();
        let terms = [
            probe(&p.func_logits, 1),
            probe(&p.dep_logits, 2),
            probe(&p.aux_func, 3),
            probe(&p.aux_dep, 4),
        ];
        terms.iter().skip(1).fold(terms[0].clone(), |a, b| (a + b).unwrap())
    };
    let mut inputs: Vec<Var> = vis.iter().flatten().cloned().collect();
    inputs.extend(aud.iter().cloned());
    inputs.push(stem.clone());
    inputs.push(image.clone());
    let a = check_vars(&inputs, &f, 24, 1e-6).labelled("inputs");
    let b = check_vars(&ps.all_vars(), &f, 4, 1e-6).labelled("params");
    a.merge(b)
}
