//! Semantic-conditioned cross-modal mixer.
//!
//! For every pyramid scale and every task (function / dependency) the
//! visual tokens and audio tokens are projected to a shared width, attend
//! to each other in both directions with prompt-conditioned attention
//! biases, and are blended back with prompt-driven channel gates. The
//! channel-attention variant is kept as an ablation alternative.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::audio::{AudioFeatures, AUDIO_DIM};
use crate::error::{Error, Result};
use crate::nn::{
    from_tokens, multi_head_attention, sigmoid, to_tokens, Init, Linear, ParamStore,
};
use crate::visual::FeaturePyramid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Func,
    Dep,
}

impl Task {
    pub const BOTH: [Task; 2] = [Task::Func, Task::Dep];

    pub fn name(self) -> &'static str {
        match self {
            Task::Func => "func",
            Task::Dep => "dep",
        }
    }
}

/// Which side receives the fused features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// vision attends to audio (`v ← a`)
    Visual,
    /// audio attends to vision (`a ← v`)
    Audio,
}

/// How the bias network output enters the attention logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasMode {
    /// One scalar per head added to every logit. Softmax is invariant to
    /// it, so this mode leaves attention unchanged; kept for comparison.
    PerHead,
    /// One `d`-wide vector per head, scored against every key:
    /// `bias[h, k] = u_h · K_{h,k} / √d`.
    KeyProjected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MixerKind {
    /// token-level cross-attention
    Cra,
    /// channel attention (squeeze-excitation style)
    Cha,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MixerConfig {
    pub kind: MixerKind,
    /// Shared embedding width `C`; equals the audio width.
    pub shared_dim: usize,
    pub heads: usize,
    pub bias_mode: BiasMode,
    /// audio attends to vision
    pub v2a: bool,
    /// vision attends to audio
    pub a2v: bool,
}

impl Default for MixerConfig {
    fn default() -> Self {
        Self {
            kind: MixerKind::Cra,
            shared_dim: AUDIO_DIM,
            heads: 4,
            bias_mode: BiasMode::KeyProjected,
            v2a: true,
            a2v: true,
        }
    }
}

/// Per-task learnable conditioning: prompts, gate maps and bias networks.
pub struct TaskContext {
    pub task: Task,
    pub p_v: Tensor,
    pub p_a: Tensor,
    pub gate_v: Linear,
    pub gate_a: Linear,
    bias_v: BiasNet,
    bias_a: BiasNet,
}

struct BiasNet {
    hidden: Linear,
    out: Linear,
    heads: usize,
    width: usize,
}

impl BiasNet {
    fn new(ps: &mut ParamStore, name: &str, c: usize, heads: usize, width: usize) -> Result<Self> {
        Ok(Self {
            hidden: Linear::new(ps, &format!("{name}.hidden"), c + 2, c, true)?,
            out: Linear::with_init(ps, &format!("{name}.out"), c, heads * width, true, Init::Zeros)?,
            heads,
            width,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let b = x.dim(0)?;
        let h = self.hidden.forward(x)?.silu()?;
        Ok(self.out.forward(&h)?.reshape((b, self.heads, self.width))?)
    }
}

impl TaskContext {
    pub fn new(ps: &mut ParamStore, name: &str, task: Task, cfg: &MixerConfig) -> Result<Self> {
        let c = cfg.shared_dim;
        let width = match cfg.bias_mode {
            BiasMode::PerHead => 1,
            BiasMode::KeyProjected => c / cfg.heads,
        };
        Ok(Self {
            task,
            p_v: ps.param(&format!("{name}.p_v"), &[c], Init::Normal(1.0))?,
            p_a: ps.param(&format!("{name}.p_a"), &[c], Init::Normal(1.0))?,
            gate_v: Linear::with_init(ps, &format!("{name}.gate_v"), c, c, false, Init::Uniform(0.5 / (c as f64).sqrt()))?,
            gate_a: Linear::with_init(ps, &format!("{name}.gate_a"), c, c, false, Init::Uniform(0.5 / (c as f64).sqrt()))?,
            bias_v: BiasNet::new(ps, &format!("{name}.bias_v"), c, cfg.heads, width)?,
            bias_a: BiasNet::new(ps, &format!("{name}.bias_a"), c, cfg.heads, width)?,
        })
    }

    fn prompt(&self, direction: Direction) -> &Tensor {
        match direction {
            Direction::Visual => &self.p_v,
            Direction::Audio => &self.p_a,
        }
    }

    /// Gate vector `σ(W_g p)` of width `C`.
    pub fn gate(&self, direction: Direction) -> Result<Tensor> {
        let (w, p) = match direction {
            Direction::Visual => (&self.gate_v, &self.p_v),
            Direction::Audio => (&self.gate_a, &self.p_a),
        };
        sigmoid(&w.forward(&p.unsqueeze(0)?)?.squeeze(0)?)
    }
}

/// Output of a bias network: `(B, heads, width)`, width 1 for
/// [`BiasMode::PerHead`] and `d` for [`BiasMode::KeyProjected`].
#[derive(Debug, Clone)]
pub struct SemanticBias {
    pub values: Tensor,
}

impl SemanticBias {
    /// Logit offsets broadcastable to `(B, heads, Nq, Nk)` given the
    /// projected keys `(B, Nk, C)`.
    pub fn logits(&self, keys: &Tensor) -> Result<Tensor> {
        let (b, heads, width) = self.values.dims3()?;
        if width == 1 {
            return Ok(self.values.unsqueeze(3)?);
        }
        let (_, nk, c) = keys.dims3()?;
        let d = c / heads;
        let kh = keys.reshape((b, nk, heads, d))?.transpose(1, 2)?.contiguous()?;
        // (B, h, 1, d) x (B, h, d, Nk) -> (B, h, 1, Nk)
        let u = self.values.unsqueeze(2)?;
        Ok((u.matmul(&kh.transpose(2, 3)?.contiguous()?)? / (d as f64).sqrt())?)
    }
}

/// `X̃_v = X_v W_v`, `X̃_a = X_a W_a`; no bias terms.
pub fn project_shared(
    x_v: &Tensor,
    x_a: &Tensor,
    proj_v: &Linear,
    proj_a: &Linear,
) -> Result<(Tensor, Tensor)> {
    Ok((proj_v.forward(x_v)?, proj_a.forward(x_a)?))
}

fn mean_token_norm(x: &Tensor) -> Result<Tensor> {
    // s / sqrt(s + t) is sqrt(s) to rounding, exactly 0 at s = 0, and has
    // a finite derivative there
    const T: f64 = 1e-30;
    let s = x.sqr()?.sum(D::Minus1)?;
    let norms = (&s / (&s + T)?.sqrt()?)?;
    Ok(norms.mean(D::Minus1)?)
}

/// Mean per-token L2 norm of each modality, one scalar per batch item.
pub fn modality_magnitudes(x_v: &Tensor, x_a: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((mean_token_norm(x_v)?, mean_token_norm(x_a)?))
}

/// `f^dir(concat(p^dir_t, m̄_v, m̄_a))`.
pub fn semantic_bias(
    ctx: &TaskContext,
    m_v: &Tensor,
    m_a: &Tensor,
    direction: Direction,
) -> Result<SemanticBias> {
    let b = m_v.dim(0)?;
    let p = ctx.prompt(direction);
    let c = p.dim(0)?;
    let input = Tensor::cat(
        &[
            &p.unsqueeze(0)?.broadcast_as((b, c))?,
            &m_v.reshape((b, 1))?,
            &m_a.reshape((b, 1))?,
        ],
        1,
    )?;
    let net = match direction {
        Direction::Visual => &ctx.bias_v,
        Direction::Audio => &ctx.bias_a,
    };
    Ok(SemanticBias {
        values: net.forward(&input)?,
    })
}

/// Query/key/value projections of one attention direction.
pub struct CrossAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    heads: usize,
}

pub enum AttnBias<'a> {
    None,
    /// Raw logit offsets broadcastable to `(B, heads, Nq, Nk)`.
    Logits(&'a Tensor),
    Semantic(&'a SemanticBias),
}

impl CrossAttention {
    pub fn new(ps: &mut ParamStore, name: &str, c: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::new(ps, &format!("{name}.q"), c, c, false)?,
            k: Linear::new(ps, &format!("{name}.k"), c, c, false)?,
            v: Linear::new(ps, &format!("{name}.v"), c, c, false)?,
            heads,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }
}

/// `Attn = softmax(Q Kᵀ/√d + Bias)`, output `Attn · V`. Returns the fused
/// tokens `(B, Nq, C)` and the attention map `(B, heads, Nq, Nk)`.
pub fn cross_attend(
    queries_src: &Tensor,
    keys_vals_src: &Tensor,
    bias: AttnBias<'_>,
    attn: &CrossAttention,
) -> Result<(Tensor, Tensor)> {
    let q = attn.q.forward(queries_src)?;
    let k = attn.k.forward(keys_vals_src)?;
    let v = attn.v.forward(keys_vals_src)?;
    let logits_bias = match bias {
        AttnBias::None => None,
        AttnBias::Logits(t) => Some(t.clone()),
        AttnBias::Semantic(s) => Some(s.logits(&k)?),
    };
    multi_head_attention(&q, &k, &v, attn.heads, logits_bias.as_ref())
}

/// `g ⊙ fused + (1 − g) ⊙ projected` with `g` broadcast over tokens.
pub fn gated_merge_with(fused: &Tensor, projected: &Tensor, gate: &Tensor) -> Result<Tensor> {
    if fused.dims() != projected.dims() {
        return Err(Error::ShapeMismatch(format!(
            "fused {:?} vs projected {:?}",
            fused.dims(),
            projected.dims()
        )));
    }
    let keep = gate.affine(-1.0, 1.0)?;
    Ok((fused.broadcast_mul(gate)? + projected.broadcast_mul(&keep)?)?)
}

pub fn gated_merge(
    fused: &Tensor,
    projected: &Tensor,
    ctx: &TaskContext,
    direction: Direction,
) -> Result<Tensor> {
    gated_merge_with(fused, projected, &ctx.gate(direction)?)
}

/// Per-scale visual in/out projections and the audio input projection,
/// shared by both mixer variants.
pub struct SharedProjections {
    pub visual_in: Vec<Linear>,
    pub visual_out: Vec<Linear>,
    pub audio_in: Linear,
}

impl SharedProjections {
    pub fn new(ps: &mut ParamStore, name: &str, level_channels: &[usize], c: usize, c_v: usize) -> Result<Self> {
        let mut visual_in = Vec::new();
        let mut visual_out = Vec::new();
        for (i, &ci) in level_channels.iter().enumerate() {
            visual_in.push(Linear::new(ps, &format!("{name}.visual_in{i}"), ci, c, false)?);
            visual_out.push(Linear::new(ps, &format!("{name}.visual_out{i}"), c, c_v, false)?);
        }
        Ok(Self {
            visual_in,
            visual_out,
            audio_in: Linear::new(ps, &format!("{name}.audio_in"), AUDIO_DIM, c, false)?,
        })
    }
}

/// Task-conditioned features: `visual[task][scale]` is `(B, C_v, H_i, W_i)`
/// and `audio[task]` is `(B, T, C)` averaged over scales.
#[derive(Debug, Clone)]
pub struct MixedFeatures {
    pub visual: Vec<Vec<Tensor>>,
    pub audio: Vec<Tensor>,
    /// Every attention map computed, `(B, heads, Nq, Nk)`.
    pub attention: Vec<Tensor>,
    /// Every gate or channel-excitation vector applied.
    pub gates: Vec<Tensor>,
}

impl MixedFeatures {
    pub fn task_index(task: Task) -> usize {
        match task {
            Task::Func => 0,
            Task::Dep => 1,
        }
    }

    pub fn visual_for(&self, task: Task) -> &[Tensor] {
        &self.visual[Self::task_index(task)]
    }

    pub fn audio_for(&self, task: Task) -> &Tensor {
        &self.audio[Self::task_index(task)]
    }
}

struct TaskMixer {
    ctx: TaskContext,
    a_from_v: CrossAttention,
    v_from_a: CrossAttention,
}

/// Bidirectional semantic-conditioned cross-attention mixer. Attention,
/// bias and gate weights are shared across scales and separate per task.
pub struct CrossModalMixer {
    proj: SharedProjections,
    tasks: Vec<TaskMixer>,
    cfg: MixerConfig,
}

impl CrossModalMixer {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        level_channels: &[usize],
        c_v: usize,
        cfg: &MixerConfig,
    ) -> Result<Self> {
        let c = cfg.shared_dim;
        if c % cfg.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "shared width {c} not divisible by {} heads",
                cfg.heads
            )));
        }
        let proj = SharedProjections::new(ps, &format!("{name}.proj"), level_channels, c, c_v)?;
        let tasks = Task::BOTH
            .iter()
            .map(|&t| {
                let tn = format!("{name}.{}", t.name());
                Ok(TaskMixer {
                    ctx: TaskContext::new(ps, &format!("{tn}.ctx"), t, cfg)?,
                    a_from_v: CrossAttention::new(ps, &format!("{tn}.a_from_v"), c, cfg.heads)?,
                    v_from_a: CrossAttention::new(ps, &format!("{tn}.v_from_a"), c, cfg.heads)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            proj,
            tasks,
            cfg: cfg.clone(),
        })
    }

    pub fn context(&self, task: Task) -> &TaskContext {
        &self.tasks[MixedFeatures::task_index(task)].ctx
    }

    pub fn projections(&self) -> &SharedProjections {
        &self.proj
    }

    pub fn forward(&self, pyr: &FeaturePyramid, audio: &AudioFeatures) -> Result<MixedFeatures> {
        check_levels(pyr, &self.proj)?;
        let x_a = &audio.feats;
        let mut out = MixedFeatures {
            visual: vec![Vec::new(), Vec::new()],
            audio: Vec::new(),
            attention: Vec::new(),
            gates: Vec::new(),
        };
        for (ti, tm) in self.tasks.iter().enumerate() {
            let mut audio_sum: Option<Tensor> = None;
            for (i, level) in pyr.levels.iter().enumerate() {
                let (_, _, h, w) = level.dims4()?;
                let x_v = to_tokens(level)?;
                let (pv, pa) = project_shared(&x_v, x_a, &self.proj.visual_in[i], &self.proj.audio_in)?;
                let (m_v, m_a) = modality_magnitudes(&pv, &pa)?;

                let mixed_a = if self.cfg.v2a {
                    let bias = semantic_bias(&tm.ctx, &m_v, &m_a, Direction::Audio)?;
                    let (fused, attn) = cross_attend(&pa, &pv, AttnBias::Semantic(&bias), &tm.a_from_v)?;
                    let g = tm.ctx.gate(Direction::Audio)?;
                    out.attention.push(attn);
                    let merged = gated_merge_with(&fused, &pa, &g)?;
                    out.gates.push(g);
                    merged
                } else {
                    pa.clone()
                };
                let mixed_v = if self.cfg.a2v {
                    let bias = semantic_bias(&tm.ctx, &m_v, &m_a, Direction::Visual)?;
                    let (fused, attn) = cross_attend(&pv, &pa, AttnBias::Semantic(&bias), &tm.v_from_a)?;
                    let g = tm.ctx.gate(Direction::Visual)?;
                    out.attention.push(attn);
                    let merged = gated_merge_with(&fused, &pv, &g)?;
                    out.gates.push(g);
                    merged
                } else {
                    pv
                };
                let back = self.proj.visual_out[i].forward(&mixed_v)?;
                out.visual[ti].push(from_tokens(&back, h, w)?);
                audio_sum = Some(match audio_sum {
                    Some(s) => (s + mixed_a)?,
                    None => mixed_a,
                });
            }
            let n = pyr.levels.len() as f64;
            out.audio.push((audio_sum.expect("at least one level") / n)?);
        }
        Ok(out)
    }
}

fn check_levels(pyr: &FeaturePyramid, proj: &SharedProjections) -> Result<()> {
    if pyr.levels.is_empty() || pyr.levels.len() != proj.visual_in.len() {
        return Err(Error::BadShape(format!(
            "mixer built for {} levels, got {}",
            proj.visual_in.len(),
            pyr.levels.len()
        )));
    }
    Ok(())
}

/// Rescales visual tokens `(B, N, C)` by per-channel weights `(B, C)`.
pub fn apply_channel_weights(tokens: &Tensor, weights: &Tensor) -> Result<Tensor> {
    Ok(tokens.broadcast_mul(&weights.unsqueeze(1)?)?)
}

/// Channel-attention mixer: the pooled audio vector drives sigmoid weights
/// that rescale the projected visual channels. No token-level attention.
pub struct ChannelAttentionMixer {
    proj: SharedProjections,
    excite: Vec<Linear>,
}

impl ChannelAttentionMixer {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        level_channels: &[usize],
        c_v: usize,
        cfg: &MixerConfig,
    ) -> Result<Self> {
        let c = cfg.shared_dim;
        let proj = SharedProjections::new(ps, &format!("{name}.proj"), level_channels, c, c_v)?;
        let excite = Task::BOTH
            .iter()
            .map(|t| Linear::new(ps, &format!("{name}.{}.excite", t.name()), AUDIO_DIM, c, true))
            .collect::<Result<_>>()?;
        Ok(Self { proj, excite })
    }

    pub fn channel_weights(&self, task: Task, audio: &AudioFeatures) -> Result<Tensor> {
        let pooled = audio.feats.mean(1)?;
        sigmoid(&self.excite[MixedFeatures::task_index(task)].forward(&pooled)?)
    }

    pub fn forward(&self, pyr: &FeaturePyramid, audio: &AudioFeatures) -> Result<MixedFeatures> {
        check_levels(pyr, &self.proj)?;
        let pa = self.proj.audio_in.forward(&audio.feats)?;
        let mut out = MixedFeatures {
            visual: vec![Vec::new(), Vec::new()],
            audio: Vec::new(),
            attention: Vec::new(),
            gates: Vec::new(),
        };
        for (ti, &task) in Task::BOTH.iter().enumerate() {
            let w = self.channel_weights(task, audio)?;
            for (i, level) in pyr.levels.iter().enumerate() {
                let (_, _, h, wd) = level.dims4()?;
                let pv = self.proj.visual_in[i].forward(&to_tokens(level)?)?;
                let scaled = apply_channel_weights(&pv, &w)?;
                let back = self.proj.visual_out[i].forward(&scaled)?;
                out.visual[ti].push(from_tokens(&back, h, wd)?);
            }
            out.gates.push(w);
            out.audio.push(pa.clone());
        }
        Ok(out)
    }
}

pub enum Mixer {
    Cross(CrossModalMixer),
    Channel(ChannelAttentionMixer),
}

impl Mixer {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        level_channels: &[usize],
        c_v: usize,
        cfg: &MixerConfig,
    ) -> Result<Self> {
        Ok(match cfg.kind {
            MixerKind::Cra => Mixer::Cross(CrossModalMixer::new(ps, name, level_channels, c_v, cfg)?),
            MixerKind::Cha => Mixer::Channel(ChannelAttentionMixer::new(ps, name, level_channels, c_v, cfg)?),
        })
    }

    pub fn forward(&self, pyr: &FeaturePyramid, audio: &AudioFeatures) -> Result<MixedFeatures> {
        match self {
            Mixer::Cross(m) => m.forward(pyr, audio),
            Mixer::Channel(m) => m.forward(pyr, audio),
        }
    }
}

pub fn mix(pyr: &FeaturePyramid, audio: &AudioFeatures, mixer: &CrossModalMixer) -> Result<MixedFeatures> {
    mixer.forward(pyr, audio)
}

pub fn channel_attention_mix(
    pyr: &FeaturePyramid,
    audio: &AudioFeatures,
    mixer: &ChannelAttentionMixer,
) -> Result<MixedFeatures> {
    mixer.forward(pyr, audio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn randn(shape: &[usize]) -> Tensor {
        Tensor::randn(0.0f64, 1.0, shape, &Device::Cpu).unwrap()
    }

    fn vec(t: &Tensor) -> Vec<f64> {
        t.flatten_all().unwrap().to_vec1().unwrap()
    }

    fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
        (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar().unwrap()
    }

    fn toy_cfg() -> MixerConfig {
        MixerConfig {
            shared_dim: 8,
            heads: 2,
            ..Default::default()
        }
    }

    #[test]
    fn projection_is_linear_without_bias() {
        let mut ps = ParamStore::new(0, DType::F64);
        let pv = Linear::new(&mut ps, "v", 6, 8, false).unwrap();
        let pa = Linear::new(&mut ps, "a", 5, 8, false).unwrap();
        let (xv, xa) = (randn(&[2, 7, 6]), randn(&[2, 3, 5]));
        let (zv, za) = project_shared(&xv.zeros_like().unwrap(), &xa.zeros_like().unwrap(), &pv, &pa).unwrap();
        assert!(vec(&zv).iter().chain(vec(&za).iter()).all(|&v| v == 0.0));
        let alpha = -1.7;
        let (yv, ya) = project_shared(&xv, &xa, &pv, &pa).unwrap();
        let (sv, sa) = project_shared(&(&xv * alpha).unwrap(), &(&xa * alpha).unwrap(), &pv, &pa).unwrap();
        assert!(max_abs_diff(&(yv * alpha).unwrap(), &sv) < 1e-6);
        assert!(max_abs_diff(&(ya * alpha).unwrap(), &sa) < 1e-6);
        assert_eq!(zv.dims(), &[2, 7, 8]);
        assert_eq!(za.dims(), &[2, 3, 8]);
    }

    #[test]
    fn identity_projection_keeps_tokens() {
        let mut ps = ParamStore::new(0, DType::F64);
        let pv = Linear::new(&mut ps, "v", 4, 4, false).unwrap();
        let pa = Linear::new(&mut ps, "a", 4, 4, false).unwrap();
        ps.set("v.weight", &Tensor::eye(4, DType::F64, &Device::Cpu).unwrap()).unwrap();
        let xv = randn(&[1, 5, 4]);
        let (yv, _) = project_shared(&xv, &randn(&[1, 2, 4]), &pv, &pa).unwrap();
        assert_eq!(vec(&yv), vec(&xv));
    }

    #[test]
    fn magnitudes() {
        let z = Tensor::zeros((2, 3, 4), DType::F64, &Device::Cpu).unwrap();
        let (mv, ma) = modality_magnitudes(&z, &z).unwrap();
        assert_eq!(vec(&mv), vec![0.0, 0.0]);
        assert_eq!(vec(&ma), vec![0.0, 0.0]);
        let unit = Tensor::new(&[[[0.0f64, 1.0]]], &Device::Cpu).unwrap();
        let (m, _) = modality_magnitudes(&unit, &unit).unwrap();
        assert_eq!(vec(&m), vec![1.0]);
        let t = Tensor::new(&[[[3.0f64, 4.0], [0.0, 1.0]]], &Device::Cpu).unwrap();
        let (m, _) = modality_magnitudes(&t, &unit).unwrap();
        assert!((vec(&m)[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_bias_from_zero_inputs() {
        let mut ps = ParamStore::new(0, DType::F64);
        let ctx = TaskContext::new(&mut ps, "ctx", Task::Func, &toy_cfg()).unwrap();
        ps.fill_prefix("ctx.p_", 0.0).unwrap();
        let z = Tensor::zeros(2, DType::F64, &Device::Cpu).unwrap();
        let b = semantic_bias(&ctx, &z, &z, Direction::Audio).unwrap();
        assert_eq!(b.values.dims(), &[2, 2, 4]);
        assert!(vec(&b.values).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bias_is_sensitive_to_audio_magnitude() {
        let mut ps = ParamStore::new(0, DType::F64);
        let ctx = TaskContext::new(&mut ps, "ctx", Task::Func, &toy_cfg()).unwrap();
        ps.set("ctx.bias_v.out.weight", &randn(&[8, 8])).unwrap();
        let mv = Tensor::new(&[0.7f64], &Device::Cpu).unwrap();
        let a1 = Tensor::new(&[0.2f64], &Device::Cpu).unwrap();
        let a2 = Tensor::new(&[1.9f64], &Device::Cpu).unwrap();
        let b1 = semantic_bias(&ctx, &mv, &a1, Direction::Visual).unwrap();
        let b2 = semantic_bias(&ctx, &mv, &a2, Direction::Visual).unwrap();
        assert!(max_abs_diff(&b1.values, &b2.values) > 1e-8);
    }

    #[test]
    fn per_head_bias_shape() {
        let mut ps = ParamStore::new(0, DType::F64);
        let cfg = MixerConfig {
            bias_mode: BiasMode::PerHead,
            ..toy_cfg()
        };
        let ctx = TaskContext::new(&mut ps, "ctx", Task::Dep, &cfg).unwrap();
        let m = Tensor::new(&[0.3f64, 0.1, 2.0], &Device::Cpu).unwrap();
        let b = semantic_bias(&ctx, &m, &m, Direction::Audio).unwrap();
        assert_eq!(b.values.dims(), &[3, 2, 1]);
        assert_eq!(b.logits(&randn(&[3, 5, 8])).unwrap().dims(), &[3, 2, 1, 1]);
    }

    #[test]
    fn identical_keys_average_values() {
        let mut ps = ParamStore::new(0, DType::F64);
        let attn = CrossAttention::new(&mut ps, "x", 8, 2).unwrap();
        let row = randn(&[1, 1, 8]);
        let kv = row.broadcast_as((1, 6, 8)).unwrap().contiguous().unwrap();
        let q = randn(&[1, 3, 8]);
        let (out, a) = cross_attend(&q, &kv, AttnBias::None, &attn).unwrap();
        let v_mean = attn.v.forward(&kv).unwrap().mean_keepdim(1).unwrap();
        let expect = v_mean.broadcast_as((1, 3, 8)).unwrap();
        assert!(max_abs_diff(&out, &expect) < 1e-12);
        assert_eq!(a.dims(), &[1, 2, 3, 6]);
    }

    #[test]
    fn saturating_bias_selects_one_key() {
        let mut ps = ParamStore::new(0, DType::F64);
        let attn = CrossAttention::new(&mut ps, "x", 8, 2).unwrap();
        let (q, kv) = (randn(&[2, 4, 8]), randn(&[2, 5, 8]));
        let j = 3;
        let mask: Vec<f64> = (0..5).map(|k| if k == j { 0.0 } else { -1e4 }).collect();
        let bias = Tensor::from_vec(mask, (1, 1, 1, 5), &Device::Cpu).unwrap();
        let (out, a) = cross_attend(&q, &kv, AttnBias::Logits(&bias), &attn).unwrap();
        let v = attn.v.forward(&kv).unwrap();
        let vj = v.narrow(1, j, 1).unwrap().broadcast_as((2, 4, 8)).unwrap();
        assert!(max_abs_diff(&out, &vj) < 1e-3);
        let sums = vec(&a.sum(3).unwrap());
        assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-6));
    }

    #[test]
    fn gate_formulas() {
        let f = randn(&[2, 3, 4]);
        let p = randn(&[2, 3, 4]);
        let half = Tensor::full(0.5f64, 4, &Device::Cpu).unwrap();
        let m = gated_merge_with(&f, &p, &half).unwrap();
        let expect = ((&f + &p).unwrap() / 2.0).unwrap();
        assert!(max_abs_diff(&m, &expect) < 1e-12);

        let sat = sigmoid(&Tensor::full(20.0f64, 4, &Device::Cpu).unwrap()).unwrap();
        let m = gated_merge_with(&f, &p, &sat).unwrap();
        assert!(max_abs_diff(&m, &f) < 1e-6 * (1.0 + vec(&p).iter().fold(0.0f64, |a, v| a.max(v.abs()))));

        let bad = gated_merge_with(&f, &randn(&[2, 2, 4]), &half);
        assert!(matches!(bad, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn zero_gate_weights_give_half() {
        let mut ps = ParamStore::new(0, DType::F64);
        let ctx = TaskContext::new(&mut ps, "ctx", Task::Func, &toy_cfg()).unwrap();
        ps.fill_prefix("ctx.gate_", 0.0).unwrap();
        let g = ctx.gate(Direction::Visual).unwrap();
        assert!(vec(&g).iter().all(|&v| v == 0.5));
        let (f, p) = (randn(&[1, 3, 8]), randn(&[1, 3, 8]));
        let m = gated_merge(&f, &p, &ctx, Direction::Visual).unwrap();
        let expect = ((&f + &p).unwrap() * 0.5).unwrap();
        assert!(max_abs_diff(&m, &expect) <= 1e-9);
    }

    fn toy_pyramid() -> FeaturePyramid {
        FeaturePyramid {
            levels: vec![randn(&[2, 3, 4, 4]), randn(&[2, 5, 2, 2])],
        }
    }

    #[test]
    fn mix_shapes_and_ablation() {
        let mut ps = ParamStore::new(4, DType::F64);
        let cfg = toy_cfg();
        let mixer = CrossModalMixer::new(&mut ps, "mix", &[3, 5], 6, &cfg).unwrap();
        let pyr = toy_pyramid();
        let audio = AudioFeatures { feats: randn(&[2, 3, AUDIO_DIM]) };
        let out = mix(&pyr, &audio, &mixer).unwrap();
        for t in 0..2 {
            assert_eq!(out.visual[t][0].dims(), &[2, 6, 4, 4]);
            assert_eq!(out.visual[t][1].dims(), &[2, 6, 2, 2]);
            assert_eq!(out.audio[t].dims(), &[2, 3, 8]);
        }
        // different prompts per task give different features
        assert!(max_abs_diff(&out.visual[0][0], &out.visual[1][0]) > 1e-8);

        let mut ps2 = ParamStore::new(4, DType::F64);
        let no_a2v = CrossModalMixer::new(&mut ps2, "mix", &[3, 5], 6, &MixerConfig { a2v: false, ..cfg }).unwrap();
        let out2 = no_a2v.forward(&pyr, &audio).unwrap();
        for (i, level) in pyr.levels.iter().enumerate() {
            let (_, _, h, w) = level.dims4().unwrap();
            let proj = no_a2v.proj.visual_in[i].forward(&to_tokens(level).unwrap()).unwrap();
            let back = from_tokens(&no_a2v.proj.visual_out[i].forward(&proj).unwrap(), h, w).unwrap();
            assert_eq!(vec(&out2.visual[0][i]), vec(&back));
        }
    }

    #[test]
    fn channel_mixer_contracts() {
        let mut ps = ParamStore::new(5, DType::F64);
        let cfg = MixerConfig {
            kind: MixerKind::Cha,
            ..toy_cfg()
        };
        let m = ChannelAttentionMixer::new(&mut ps, "cha", &[3, 5], 6, &cfg).unwrap();
        let pyr = toy_pyramid();
        let zero_audio = AudioFeatures {
            feats: Tensor::zeros((2, 3, AUDIO_DIM), DType::F64, &Device::Cpu).unwrap(),
        };
        let w = m.channel_weights(Task::Func, &zero_audio).unwrap();
        assert!(vec(&w).iter().all(|&v| v == 0.5));
        let out = channel_attention_mix(&pyr, &zero_audio, &m).unwrap();
        assert_eq!(out.visual[0][0].dims(), &[2, 6, 4, 4]);

        let toks = randn(&[2, 7, 8]);
        let ones = Tensor::ones((2, 8), DType::F64, &Device::Cpu).unwrap();
        assert_eq!(vec(&apply_channel_weights(&toks, &ones).unwrap()), vec(&toks));
    }
}
