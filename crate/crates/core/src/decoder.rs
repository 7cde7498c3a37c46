//! Dual-head affordance decoder.
//!
//! Mixed multi-scale features are fused into base semantics at the finest
//! pyramid resolution. Semantic queries attend over the base features to
//! produce per-query candidate masks for the function region; the predicted
//! function probability then conditions the dependency head through
//! mask-conditioned attention. Candidates are aggregated with a
//! squeeze-excitation block and refined back to input resolution.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixer::{MixedFeatures, Task};
use crate::nn::{
    multi_head_attention, resize_bilinear, sigmoid, to_tokens, Conv2d, Init, Linear, ParamStore,
};

/// Guard inside `log(p + ε)` of the mask-conditioned attention bias.
pub const MCA_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DecoderConfig {
    pub c_v: usize,
    pub n_queries: usize,
    /// Shared mixer width the audio tokens arrive in.
    pub audio_dim: usize,
    pub refine_channels: usize,
    pub se: bool,
    pub mca: bool,
    pub dual: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            c_v: 256,
            n_queries: 8,
            audio_dim: crate::audio::AUDIO_DIM,
            refine_channels: 16,
            se: true,
            mca: true,
            dual: true,
        }
    }
}

/// `N_q` query vectors per batch item, `(B, N_q, C_v)`.
#[derive(Debug, Clone)]
pub struct SemanticQuerySet {
    pub queries: Tensor,
}

/// Logit maps. Final maps are `(B, H, W)`; candidates `(B, N_q, h, w)` at
/// the finest pyramid resolution; auxiliary maps are the bilinear upsample
/// of the candidate mean, `(B, H, W)`.
#[derive(Debug, Clone)]
pub struct MaskPrediction {
    pub func_logits: Tensor,
    pub dep_logits: Tensor,
    pub func_candidates: Tensor,
    pub dep_candidates: Tensor,
    pub aux_func: Tensor,
    pub aux_dep: Tensor,
    /// Query-to-pixel attention maps, `(B, 1, N_q, h·w)`.
    pub attention: Vec<Tensor>,
    /// Excitation weights `(B, N_q)` of each SE aggregation.
    pub se_weights: Vec<Tensor>,
}

impl MaskPrediction {
    pub fn func_prob(&self) -> Result<Tensor> {
        sigmoid(&self.func_logits)
    }

    pub fn dep_prob(&self) -> Result<Tensor> {
        sigmoid(&self.dep_logits)
    }
}

/// Per-scale 1×1 projection, upsampling to the finest scale and a learned
/// weighted sum.
pub struct MultiScaleDecoder {
    proj: Vec<Conv2d>,
    scale_weights: Tensor,
}

impl MultiScaleDecoder {
    pub fn new(ps: &mut ParamStore, name: &str, c_v: usize, n_scales: usize) -> Result<Self> {
        let proj = (0..n_scales)
            .map(|i| Conv2d::new(ps, &format!("{name}.proj{i}"), c_v, c_v, 1, 1, 0, false))
            .collect::<Result<_>>()?;
        Ok(Self {
            proj,
            scale_weights: ps.param(&format!("{name}.scale_weights"), &[n_scales], Init::Const(1.0))?,
        })
    }
}

/// Fuses `(B, C_v, H_i, W_i)` levels into `(B, C_v, H_1, W_1)`.
pub fn decode_multiscale(levels: &[Tensor], dec: &MultiScaleDecoder) -> Result<Tensor> {
    if levels.len() != dec.proj.len() {
        return Err(Error::BadShape(format!(
            "decoder expects {} scales, got {}",
            dec.proj.len(),
            levels.len()
        )));
    }
    let (_, _, h, w) = levels[0].dims4()?;
    let mut acc: Option<Tensor> = None;
    for (i, (level, proj)) in levels.iter().zip(&dec.proj).enumerate() {
        let up = resize_bilinear(&proj.forward(level)?, h, w)?;
        let weighted = up.broadcast_mul(&dec.scale_weights.narrow(0, i, 1)?.reshape((1, 1, 1, 1))?)?;
        acc = Some(match acc {
            Some(a) => (a + weighted)?,
            None => weighted,
        });
    }
    Ok(acc.expect("at least one scale"))
}

/// Turns a task prompt, learned embeddings and pooled audio into queries.
pub struct QueryGenerator {
    embeddings: Tensor,
    prompt: Tensor,
    audio_proj: Linear,
}

impl QueryGenerator {
    pub fn new(ps: &mut ParamStore, name: &str, cfg: &DecoderConfig) -> Result<Self> {
        Ok(Self {
            embeddings: ps.param(&format!("{name}.embeddings"), &[cfg.n_queries, cfg.c_v], Init::Normal(1.0))?,
            prompt: ps.param(&format!("{name}.prompt"), &[cfg.c_v], Init::Normal(1.0))?,
            audio_proj: Linear::new(ps, &format!("{name}.audio_proj"), cfg.audio_dim, cfg.c_v, false)?,
        })
    }

    /// `audio` is the task's mixed audio `(B, T, C)`.
    pub fn forward(&self, audio: &Tensor) -> Result<SemanticQuerySet> {
        let b = audio.dim(0)?;
        let (nq, c) = self.embeddings.dims2()?;
        let a = self.audio_proj.forward(&audio.mean(1)?)?; // (B, C_v)
        let q = self
            .embeddings
            .broadcast_add(&self.prompt)?
            .unsqueeze(0)?
            .broadcast_as((b, nq, c))?
            .broadcast_add(&a.unsqueeze(1)?)?;
        Ok(SemanticQuerySet { queries: q })
    }
}

/// Query-over-pixels attention and the per-pixel mask embedding.
pub struct MaskHead {
    q: Linear,
    k: Linear,
    v: Linear,
    pix1: Linear,
    pix2: Linear,
}

pub struct HeadOutput {
    /// `(B, N_q, h, w)`
    pub candidates: Tensor,
    /// `(B, 1, N_q, h·w)`
    pub attention: Tensor,
}

impl MaskHead {
    pub fn new(ps: &mut ParamStore, name: &str, c_v: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::new(ps, &format!("{name}.q"), c_v, c_v, false)?,
            k: Linear::new(ps, &format!("{name}.k"), c_v, c_v, false)?,
            v: Linear::new(ps, &format!("{name}.v"), c_v, c_v, false)?,
            pix1: Linear::new(ps, &format!("{name}.pix1"), c_v, c_v, true)?,
            pix2: Linear::new(ps, &format!("{name}.pix2"), c_v, c_v, true)?,
        })
    }

    fn forward(&self, base: &Tensor, queries: &SemanticQuerySet, bias: Option<&Tensor>) -> Result<HeadOutput> {
        let (b, c, h, w) = base.dims4()?;
        let tokens = to_tokens(base)?;
        let q = self.q.forward(&queries.queries)?;
        let k = self.k.forward(&tokens)?;
        let v = self.v.forward(&tokens)?;
        let (attended, attention) = multi_head_attention(&q, &k, &v, 1, bias)?;
        let emb = (&queries.queries + attended)?; // (B, N_q, C)
        let pix = self.pix2.forward(&self.pix1.forward(&tokens)?.silu()?)?; // (B, hw, C)
        let nq = emb.dim(1)?;
        let cand = (emb.matmul(&pix.transpose(1, 2)?.contiguous()?)? / (c as f64).sqrt())?;
        Ok(HeadOutput {
            candidates: cand.reshape((b, nq, h, w))?,
            attention,
        })
    }
}

/// Function head: semantic queries attend over the base features; each
/// candidate is the dot product of a query embedding with pixel features.
pub fn function_head(base: &Tensor, queries: &SemanticQuerySet, head: &MaskHead) -> Result<HeadOutput> {
    head.forward(base, queries, None)
}

/// Injects the function probability into the dependency features and
/// biases query-to-pixel attention by `log(p + ε)`.
pub struct MaskConditioning {
    embed: Conv2d,
}

impl MaskConditioning {
    pub fn new(ps: &mut ParamStore, name: &str, c_v: usize) -> Result<Self> {
        Ok(Self {
            embed: Conv2d::new(ps, &format!("{name}.embed"), 1, c_v, 1, 1, 0, false)?,
        })
    }
}

/// `func_mask_prob` is `(B, 1, h, w)` in `[0, 1]`.
pub fn mask_conditioned_attention(
    base_dep: &Tensor,
    func_mask_prob: &Tensor,
    queries: &SemanticQuerySet,
    cond: &MaskConditioning,
    head: &MaskHead,
) -> Result<HeadOutput> {
    let (b, _, h, w) = base_dep.dims4()?;
    let conditioned = (base_dep + cond.embed.forward(func_mask_prob)?)?;
    let bias = (func_mask_prob + MCA_EPS)?.log()?.reshape((b, 1, 1, h * w))?;
    head.forward(&conditioned, queries, Some(&bias))
}

/// Squeeze-excitation over candidates followed by a scalar 1×1 projection.
pub struct SeAggregator {
    fc1: Linear,
    fc2: Linear,
    scale: Tensor,
    shift: Tensor,
}

pub struct Aggregated {
    /// `(B, 1, h, w)`
    pub fused: Tensor,
    /// `(B, N_q)`, present when SE is enabled
    pub weights: Option<Tensor>,
}

impl SeAggregator {
    pub fn new(ps: &mut ParamStore, name: &str, n_queries: usize) -> Result<Self> {
        let hidden = n_queries.max(2);
        Ok(Self {
            fc1: Linear::new(ps, &format!("{name}.fc1"), n_queries, hidden, true)?,
            fc2: Linear::new(ps, &format!("{name}.fc2"), hidden, n_queries, true)?,
            scale: ps.param(&format!("{name}.scale"), &[1], Init::Const(1.0))?,
            shift: ps.param(&format!("{name}.shift"), &[1], Init::Zeros)?,
        })
    }

    /// Excitation weights `σ(fc2(silu(fc1(GAP(candidates)))))`, `(B, N_q)`.
    pub fn excitation(&self, candidates: &Tensor) -> Result<Tensor> {
        let squeezed = candidates.mean(D::Minus1)?.mean(D::Minus1)?;
        sigmoid(&self.fc2.forward(&self.fc1.forward(&squeezed)?.silu()?)?)
    }
}

/// With `se = Some(..)`: `fused = scale · Σ_q w_q · cand_q + shift`.
/// With `se = None`: the unweighted candidate mean.
pub fn aggregate_se(candidates: &Tensor, se: Option<&SeAggregator>) -> Result<Aggregated> {
    let nq = candidates.dim(1)?;
    if nq == 0 {
        return Err(Error::EmptyList);
    }
    match se {
        None => Ok(Aggregated {
            fused: candidates.mean_keepdim(1)?,
            weights: None,
        }),
        Some(se) => {
            let wts = se.excitation(candidates)?;
            let weighted = candidates
                .broadcast_mul(&wts.unsqueeze(2)?.unsqueeze(3)?)?
                .sum_keepdim(1)?;
            let fused = weighted
                .broadcast_mul(&se.scale.reshape((1, 1, 1, 1))?)?
                .broadcast_add(&se.shift.reshape((1, 1, 1, 1))?)?;
            Ok(Aggregated {
                fused,
                weights: Some(wts),
            })
        }
    }
}

/// ×2 bilinear upsample, concatenation with a skip tensor, two convs, and
/// a residual add onto the upsampled logits.
pub struct RefineStage {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl RefineStage {
    pub fn new(ps: &mut ParamStore, name: &str, skip_channels: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(ps, &format!("{name}.conv1"), 1 + skip_channels, hidden, 3, 1, 1, true)?,
            conv2: Conv2d::new(ps, &format!("{name}.conv2"), hidden, 1, 3, 1, 1, true)?,
        })
    }

    pub fn forward(&self, logits: &Tensor, skip: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = skip.dims4()?;
        let up = resize_bilinear(logits, h, w)?;
        let x = Tensor::cat(&[&up, skip], 1)?;
        let r = self.conv2.forward(&self.conv1.forward(&x)?.silu()?)?;
        Ok((up + r)?)
    }
}

/// Full-resolution context for the refinement stages.
#[derive(Debug, Clone)]
pub struct DecoderSkips {
    /// `(B, C_stem, H/2, W/2)`
    pub stem: Tensor,
    /// `(B, 3, H, W)`
    pub image: Tensor,
}

/// Query branch of one task: multi-scale fusion, queries and mask head.
struct Branch {
    multiscale: MultiScaleDecoder,
    queries: QueryGenerator,
    head: MaskHead,
}

impl Branch {
    fn new(ps: &mut ParamStore, name: &str, cfg: &DecoderConfig) -> Result<Self> {
        Ok(Self {
            multiscale: MultiScaleDecoder::new(ps, &format!("{name}.multiscale"), cfg.c_v, 4)?,
            queries: QueryGenerator::new(ps, &format!("{name}.queries"), cfg)?,
            head: MaskHead::new(ps, &format!("{name}.head"), cfg.c_v)?,
        })
    }
}

/// Aggregation and refinement of one output mask.
struct OutputStage {
    se: SeAggregator,
    refine: [RefineStage; 2],
}

impl OutputStage {
    fn new(ps: &mut ParamStore, name: &str, cfg: &DecoderConfig, stem_channels: usize) -> Result<Self> {
        Ok(Self {
            se: SeAggregator::new(ps, &format!("{name}.se"), cfg.n_queries)?,
            refine: [
                RefineStage::new(ps, &format!("{name}.refine0"), stem_channels, cfg.refine_channels)?,
                RefineStage::new(ps, &format!("{name}.refine1"), 3, cfg.refine_channels)?,
            ],
        })
    }

    fn se(&self, cfg: &DecoderConfig) -> Option<&SeAggregator> {
        cfg.se.then_some(&self.se)
    }

    fn refine(&self, base_logits: &Tensor, skips: &DecoderSkips) -> Result<Tensor> {
        let x = self.refine[0].forward(base_logits, &skips.stem)?;
        self.refine[1].forward(&x, &skips.image)
    }
}

pub struct AffordanceDecoder {
    func: Branch,
    /// Absent in single-head mode, where the function branch's candidates
    /// feed both outputs.
    dep: Option<Branch>,
    func_out: OutputStage,
    dep_out: OutputStage,
    conditioning: Option<MaskConditioning>,
    cfg: DecoderConfig,
}

impl AffordanceDecoder {
    pub fn new(ps: &mut ParamStore, name: &str, cfg: &DecoderConfig, stem_channels: usize) -> Result<Self> {
        if cfg.n_queries == 0 {
            return Err(Error::InvalidConfig("n_queries must be at least 1".into()));
        }
        let func = Branch::new(ps, &format!("{name}.func"), cfg)?;
        let dep = if cfg.dual {
            Some(Branch::new(ps, &format!("{name}.dep"), cfg)?)
        } else {
            None
        };
        let func_out = OutputStage::new(ps, &format!("{name}.func_out"), cfg, stem_channels)?;
        let dep_out = OutputStage::new(ps, &format!("{name}.dep_out"), cfg, stem_channels)?;
        let conditioning = if cfg.mca && cfg.dual {
            Some(MaskConditioning::new(ps, &format!("{name}.mca"), cfg.c_v)?)
        } else {
            None
        };
        Ok(Self {
            func,
            dep,
            func_out,
            dep_out,
            conditioning,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }
}

fn aux_of(candidates: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    Ok(resize_bilinear(&candidates.mean_keepdim(1)?, h, w)?.squeeze(1)?)
}

pub fn decode(mixed: &MixedFeatures, skips: &DecoderSkips, dec: &AffordanceDecoder) -> Result<MaskPrediction> {
    let cfg = &dec.cfg;
    let (_, _, out_h, out_w) = skips.image.dims4()?;
    let mut attention = Vec::new();
    let mut se_weights = Vec::new();

    let base_func = decode_multiscale(mixed.visual_for(Task::Func), &dec.func.multiscale)?;
    let q_func = dec.func.queries.forward(mixed.audio_for(Task::Func))?;
    let fh = function_head(&base_func, &q_func, &dec.func.head)?;
    attention.push(fh.attention);
    let func_agg = aggregate_se(&fh.candidates, dec.func_out.se(cfg))?;
    se_weights.extend(func_agg.weights);

    let dep_candidates = match &dec.dep {
        Some(branch) => {
            let base_dep = decode_multiscale(mixed.visual_for(Task::Dep), &branch.multiscale)?;
            let q_dep = branch.queries.forward(mixed.audio_for(Task::Dep))?;
            let dh = match &dec.conditioning {
                Some(cond) => {
                    let prob = sigmoid(&func_agg.fused)?;
                    mask_conditioned_attention(&base_dep, &prob, &q_dep, cond, &branch.head)?
                }
                None => branch.head.forward(&base_dep, &q_dep, None)?,
            };
            attention.push(dh.attention);
            dh.candidates
        }
        None => fh.candidates.clone(),
    };
    let dep_agg = aggregate_se(&dep_candidates, dec.dep_out.se(cfg))?;
    se_weights.extend(dep_agg.weights);

    let func_logits = dec.func_out.refine(&func_agg.fused, skips)?.squeeze(1)?;
    let dep_logits = dec.dep_out.refine(&dep_agg.fused, skips)?.squeeze(1)?;
    Ok(MaskPrediction {
        func_logits,
        dep_logits,
        aux_func: aux_of(&fh.candidates, out_h, out_w)?,
        aux_dep: aux_of(&dep_candidates, out_h, out_w)?,
        func_candidates: fh.candidates,
        dep_candidates,
        attention,
        se_weights,
    })
}
