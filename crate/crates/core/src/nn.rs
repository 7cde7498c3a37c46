//! Minimal layer toolkit on top of candle: deterministic parameter
//! initialisation, linear/conv/norm layers and the few tensor helpers the
//! model needs that candle does not differentiate out of the box.

use std::collections::HashMap;

use candle_core::{DType, Device, Tensor, Var, D};
use candle_nn::VarMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;

/// How a freshly created parameter is filled.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Const(f64),
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
    Normal(f64),
}

/// Owns every trainable tensor of a model. Initialisation draws from a
/// seeded ChaCha stream so two stores built with the same seed and the same
/// construction order are bit-identical.
pub struct ParamStore {
    varmap: VarMap,
    rng: ChaCha8Rng,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            varmap: VarMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn varmap(&self) -> &VarMap {
        &self.varmap
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::Uniform(b) => (0..n).map(|_| self.rng.random_range(-b..=b)).collect(),
            Init::Normal(std) => {
                let normal = Normal::new(0.0, std).expect("positive std");
                (0..n).map(|_| normal.sample(&mut self.rng)).collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let mut data = self.varmap.data().lock().expect("varmap lock");
        assert!(
            !data.contains_key(name),
            "parameter {name} registered twice"
        );
        data.insert(name.to_string(), var.clone());
        Ok(var.as_tensor().clone())
    }

    pub fn all_vars(&self) -> Vec<Var> {
        let data = self.varmap.data().lock().expect("varmap lock");
        let mut named: Vec<_> = data.iter().collect();
        named.sort_by(|a, b| a.0.cmp(b.0));
        named.into_iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn names(&self) -> Vec<String> {
        let data = self.varmap.data().lock().expect("varmap lock");
        let mut names: Vec<_> = data.keys().cloned().collect();
        names.sort();
        names
    }

    pub fn num_params(&self) -> usize {
        let data = self.varmap.data().lock().expect("varmap lock");
        data.values().map(|v| v.elem_count()).sum()
    }

    /// Overwrites every parameter whose name starts with `prefix`.
    pub fn fill_prefix(&self, prefix: &str, value: f64) -> Result<()> {
        let data = self.varmap.data().lock().expect("varmap lock");
        for (name, var) in data.iter() {
            if name.starts_with(prefix) {
                let t = (var.as_tensor().zeros_like()? + value)?;
                var.set(&t)?;
            }
        }
        Ok(())
    }

    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let data = self.varmap.data().lock().expect("varmap lock");
        let var = data
            .get(name)
            .ok_or_else(|| crate::Error::InvalidConfig(format!("no parameter named {name}")))?;
        var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    pub fn snapshot(&self) -> Result<HashMap<String, Tensor>> {
        let data = self.varmap.data().lock().expect("varmap lock");
        data.iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?)))
            .collect()
    }

    pub fn restore(&self, tensors: &HashMap<String, Tensor>) -> Result<()> {
        let data = self.varmap.data().lock().expect("varmap lock");
        if tensors.len() != data.len() {
            return Err(crate::Error::InvalidConfig(format!(
                "checkpoint holds {} tensors, model has {}",
                tensors.len(),
                data.len()
            )));
        }
        for (name, var) in data.iter() {
            let t = tensors.get(name).ok_or_else(|| {
                crate::Error::InvalidConfig(format!("checkpoint lacks parameter {name}"))
            })?;
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }
}

fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool) -> Result<Self> {
        Self::with_init(ps, name, d_in, d_out, bias, Init::Uniform(fan_in_bound(d_in)))
    }

    pub fn with_init(
        ps: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        init: Init,
    ) -> Result<Self> {
        let weight = ps.param(&format!("{name}.weight"), &[d_out, d_in], init)?;
        let bias = if bias {
            Some(ps.param(&format!("{name}.bias"), &[d_out], Init::Zeros)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.broadcast_matmul(&self.weight.t()?)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let bound = fan_in_bound(c_in * kernel * kernel);
        let weight = ps.param(
            &format!("{name}.weight"),
            &[c_out, c_in, kernel, kernel],
            Init::Uniform(bound),
        )?;
        let bias = if bias {
            Some(ps.param(&format!("{name}.bias"), &[c_out], Init::Zeros)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?,
            None => y,
        })
    }
}

/// LayerNorm over the last dimension, composed from differentiable ops.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: ps.param(&format!("{name}.gamma"), &[dim], Init::Const(1.0))?,
            beta: ps.param(&format!("{name}.beta"), &[dim], Init::Zeros)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// Numerically stable softmax over the last dimension. The max shift is
/// detached; softmax is invariant to it.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

/// 1-D linear interpolation matrix (out × in) with half-pixel centres,
/// matching the usual `align_corners = false` convention.
pub fn interp_matrix(n_in: usize, n_out: usize) -> Vec<f64> {
    let mut m = vec![0.0; n_out * n_in];
    let scale = n_in as f64 / n_out as f64;
    for o in 0..n_out {
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        let frac = src - i0 as f64;
        m[o * n_in + i0] += 1.0 - frac;
        m[o * n_in + i1] += frac;
    }
    m
}

/// Bilinear resize of a (B, C, H, W) tensor, expressed as two matmuls so
/// the operation is differentiable in candle.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if h == out_h && w == out_w {
        return Ok(x.clone());
    }
    let dev = x.device();
    let ry = Tensor::from_vec(interp_matrix(h, out_h), (out_h, h), dev)?.to_dtype(x.dtype())?;
    let rx = Tensor::from_vec(interp_matrix(w, out_w), (out_w, w), dev)?.to_dtype(x.dtype())?;
    // rows: (B*C*H, W) x (W, W') -> (B*C*H, W')
    let y = x.reshape((b * c * h, w))?.matmul(&rx.t()?)?;
    // (B*C, H, W') -> (B*C, W', H) x (H, H') -> (B*C, W', H')
    let y = y
        .reshape((b * c, h, out_w))?
        .transpose(1, 2)?
        .contiguous()?
        .reshape((b * c * out_w, h))?
        .matmul(&ry.t()?)?;
    Ok(y
        .reshape((b * c, out_w, out_h))?
        .transpose(1, 2)?
        .contiguous()?
        .reshape((b, c, out_h, out_w))?)
}

/// (B, C, H, W) -> (B, H*W, C)
pub fn to_tokens(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    Ok(x.reshape((b, c, h * w))?.transpose(1, 2)?.contiguous()?)
}

/// (B, H*W, C) -> (B, C, H, W)
pub fn from_tokens(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (b, n, c) = x.dims3()?;
    assert_eq!(n, h * w, "token count does not match spatial size");
    Ok(x.transpose(1, 2)?.contiguous()?.reshape((b, c, h, w))?)
}

/// Scaled dot-product attention over already-projected, head-concatenated
/// tensors. `q` is `(B, Nq, C)`, `k` and `v` are `(B, Nk, C)`; `bias`, when
/// given, must broadcast to `(B, heads, Nq, Nk)` and is added to the logits.
/// Returns the `(B, Nq, C)` output and the `(B, heads, Nq, Nk)` attention map.
pub fn multi_head_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    bias: Option<&Tensor>,
) -> Result<(Tensor, Tensor)> {
    let (b, nq, c) = q.dims3()?;
    let nk = k.dim(1)?;
    assert!(c % heads == 0, "width {c} not divisible by {heads} heads");
    let d = c / heads;
    let split = |x: &Tensor, n: usize| -> Result<Tensor> {
        Ok(x.reshape((b, n, heads, d))?.transpose(1, 2)?.contiguous()?)
    };
    let (qh, kh, vh) = (split(q, nq)?, split(k, nk)?, split(v, nk)?);
    let mut logits = (qh.matmul(&kh.transpose(2, 3)?.contiguous()?)? / (d as f64).sqrt())?;
    if let Some(bias) = bias {
        logits = logits.broadcast_add(bias)?;
    }
    let attn = softmax_last(&logits)?;
    let out = attn
        .matmul(&vh)?
        .transpose(1, 2)?
        .contiguous()?
        .reshape((b, nq, c))?;
    Ok((out, attn))
}
