//! Multi-scale visual encoder: a four-stage convolutional pyramid plus a
//! transformer over the coarsest level and a top-down fusion pathway.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    from_tokens, multi_head_attention, resize_bilinear, to_tokens, Conv2d, LayerNorm, Linear,
    ParamStore,
};

/// Four levels, level `i` (1-based) shaped `(B, C_i, H/2^{i+1}, W/2^{i+1})`.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub levels: Vec<Tensor>,
}

impl FeaturePyramid {
    pub fn spatial_dims(&self) -> Result<Vec<(usize, usize)>> {
        self.levels
            .iter()
            .map(|l| {
                let (_, _, h, w) = l.dims4()?;
                Ok((h, w))
            })
            .collect()
    }

    pub fn channels(&self) -> Result<Vec<usize>> {
        self.levels.iter().map(|l| Ok(l.dim(1)?)).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VisualConfig {
    pub channels: [usize; 4],
    pub transformer_layers: usize,
    pub transformer_heads: usize,
}

impl Default for VisualConfig {
    fn default() -> Self {
        Self {
            channels: [32, 64, 128, 256],
            transformer_layers: 2,
            transformer_heads: 4,
        }
    }
}

pub struct BackboneOutput {
    pub pyramid: FeaturePyramid,
    /// Stem activation at half resolution, reused by the decoder's
    /// refinement stages.
    pub stem: Tensor,
}

struct Stage {
    down: Conv2d,
    refine: Conv2d,
}

impl Stage {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = self.down.forward(x)?.silu()?;
        Ok((self.refine.forward(&x)?.silu()? + x)?)
    }
}

/// Two stride-2 stem convolutions followed by four stages; stage 1 keeps
/// the stem's H/4 resolution and stages 2–4 halve it.
pub struct Backbone {
    stem0: Conv2d,
    stem1: Conv2d,
    stages: Vec<Stage>,
    stem_channels: usize,
}

impl Backbone {
    pub fn new(ps: &mut ParamStore, name: &str, cfg: &VisualConfig) -> Result<Self> {
        let c = cfg.channels;
        let c0 = (c[0] / 2).max(4);
        let stem0 = Conv2d::new(ps, &format!("{name}.stem0"), 3, c0, 3, 2, 1, true)?;
        let stem1 = Conv2d::new(ps, &format!("{name}.stem1"), c0, c[0], 3, 2, 1, true)?;
        let mut stages = Vec::new();
        let mut c_in = c[0];
        for (i, &c_out) in c.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            stages.push(Stage {
                down: Conv2d::new(ps, &format!("{name}.stage{i}.down"), c_in, c_out, 3, stride, 1, true)?,
                refine: Conv2d::new(ps, &format!("{name}.stage{i}.refine"), c_out, c_out, 3, 1, 1, true)?,
            });
            c_in = c_out;
        }
        Ok(Self {
            stem0,
            stem1,
            stages,
            stem_channels: c0,
        })
    }

    pub fn stem_channels(&self) -> usize {
        self.stem_channels
    }

    /// `image` is `(B, 3, H, W)`.
    pub fn forward(&self, image: &Tensor) -> Result<BackboneOutput> {
        let (_, _, h, w) = image.dims4()?;
        if h % 32 != 0 || w % 32 != 0 || h == 0 || w == 0 {
            return Err(Error::BadShape(format!(
                "image {h}x{w} must have sides divisible by 32"
            )));
        }
        let stem = self.stem0.forward(image)?.silu()?;
        let mut x = self.stem1.forward(&stem)?.silu()?;
        let mut levels = Vec::with_capacity(4);
        for stage in &self.stages {
            x = stage.forward(&x)?;
            levels.push(x.clone());
        }
        Ok(BackboneOutput {
            pyramid: FeaturePyramid { levels },
            stem,
        })
    }
}

pub fn extract_pyramid(image: &Tensor, backbone: &Backbone) -> Result<FeaturePyramid> {
    Ok(backbone.forward(image)?.pyramid)
}

struct EncoderLayer {
    norm1: LayerNorm,
    qkv: Linear,
    out: Linear,
    norm2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    heads: usize,
}

impl EncoderLayer {
    fn new(ps: &mut ParamStore, name: &str, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(ps, &format!("{name}.norm1"), dim)?,
            qkv: Linear::new(ps, &format!("{name}.qkv"), dim, 3 * dim, true)?,
            out: Linear::new(ps, &format!("{name}.out"), dim, dim, true)?,
            norm2: LayerNorm::new(ps, &format!("{name}.norm2"), dim)?,
            ff1: Linear::new(ps, &format!("{name}.ff1"), dim, 2 * dim, true)?,
            ff2: Linear::new(ps, &format!("{name}.ff2"), 2 * dim, dim, true)?,
            heads,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let c = x.dim(2)?;
        let qkv = self.qkv.forward(&self.norm1.forward(x)?)?;
        let q = qkv.narrow(2, 0, c)?;
        let k = qkv.narrow(2, c, c)?;
        let v = qkv.narrow(2, 2 * c, c)?;
        let (a, attn) = multi_head_attention(&q, &k, &v, self.heads, None)?;
        let x = (x + self.out.forward(&a)?)?;
        let h = self.ff1.forward(&self.norm2.forward(&x)?)?.silu()?;
        Ok(((&x + self.ff2.forward(&h)?)?, attn))
    }
}

/// Transformer encoder on the coarsest level followed by a top-down
/// pathway: `out_i = in_i + lateral_i(upsample(out_{i+1}))`.
pub struct PyramidEnhancer {
    layers: Vec<EncoderLayer>,
    laterals: Vec<Conv2d>,
}

pub struct EnhancedPyramid {
    pub pyramid: FeaturePyramid,
    /// Self-attention maps of each encoder layer, `(B, heads, N, N)`.
    pub attention: Vec<Tensor>,
}

impl PyramidEnhancer {
    pub fn new(ps: &mut ParamStore, name: &str, cfg: &VisualConfig) -> Result<Self> {
        let c = cfg.channels;
        let layers = (0..cfg.transformer_layers)
            .map(|i| EncoderLayer::new(ps, &format!("{name}.encoder{i}"), c[3], cfg.transformer_heads))
            .collect::<Result<_>>()?;
        let laterals = (0..3)
            .map(|i| Conv2d::new(ps, &format!("{name}.lateral{i}"), c[i + 1], c[i], 1, 1, 0, false))
            .collect::<Result<_>>()?;
        Ok(Self { layers, laterals })
    }

    pub fn forward(&self, pyr: &FeaturePyramid) -> Result<EnhancedPyramid> {
        if pyr.levels.len() != 4 {
            return Err(Error::BadShape(format!(
                "expected 4 pyramid levels, got {}",
                pyr.levels.len()
            )));
        }
        let (_, _, h4, w4) = pyr.levels[3].dims4()?;
        let mut tokens = to_tokens(&pyr.levels[3])?;
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (t, a) = layer.forward(&tokens)?;
            tokens = t;
            attention.push(a);
        }
        let mut out = vec![from_tokens(&tokens, h4, w4)?];
        for i in (0..3).rev() {
            let (_, _, h, w) = pyr.levels[i].dims4()?;
            let up = resize_bilinear(&out[0], h, w)?;
            out.insert(0, (&pyr.levels[i] + self.laterals[i].forward(&up)?)?);
        }
        Ok(EnhancedPyramid {
            pyramid: FeaturePyramid { levels: out },
            attention,
        })
    }
}

pub fn enhance_pyramid(pyr: &FeaturePyramid, enhancer: &PyramidEnhancer) -> Result<FeaturePyramid> {
    Ok(enhancer.forward(pyr)?.pyramid)
}
