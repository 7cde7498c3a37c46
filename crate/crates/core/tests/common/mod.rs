#![allow(dead_code)]

pub mod toys;

use avag::nn::ParamStore;
use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn randn(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap()[0]
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GradReport {
    pub max_rel: f64,
    pub checked: usize,
    /// analytic and numeric values at the worst coordinate
    pub worst: (f64, f64),
    /// which check produced the worst coordinate
    pub label: &'static str,
}

impl GradReport {
    pub fn merge(self, o: GradReport) -> GradReport {
        let (worst, label) = if self.max_rel >= o.max_rel {
            (self.worst, self.label)
        } else {
            (o.worst, o.label)
        };
        GradReport {
            max_rel: self.max_rel.max(o.max_rel),
            checked: self.checked + o.checked,
            worst,
            label,
        }
    }

    pub fn labelled(self, label: &'static str) -> GradReport {
        GradReport { label, ..self }
    }
}

/// Picks up to `max` flat coordinates out of `n`, deterministically.
fn coords(n: usize, max: usize, seed: u64) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..max).map(|_| rng.random_range(0..n)).collect()
}

/// Central-difference check of `f` with respect to each var in `vars`.
/// `f` must rebuild its graph from the vars on every call.
pub fn check_vars(vars: &[Var], f: &dyn Fn() -> Tensor, max_coords: usize, floor: f64) -> GradReport {
    check_vars_with(vars, f, max_coords, floor, false)
}

/// Like [`check_vars`] with Richardson extrapolation, for functions whose
/// third derivative is large enough to dominate the plain estimate.
pub fn check_vars_richardson(vars: &[Var], f: &dyn Fn() -> Tensor, max_coords: usize, floor: f64) -> GradReport {
    check_vars_with(vars, f, max_coords, floor, true)
}

fn check_vars_with(vars: &[Var], f: &dyn Fn() -> Tensor, max_coords: usize, floor: f64, richardson: bool) -> GradReport {
    let loss = f();
    let grads = loss.backward().unwrap();
    let mut report = GradReport::default();
    for (vi, var) in vars.iter().enumerate() {
        let base = var.as_tensor().copy().unwrap();
        let shape = base.shape().clone();
        let flat: Vec<f64> = base.flatten_all().unwrap().to_vec1().unwrap();
        let analytic: Vec<f64> = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all().unwrap().to_vec1().unwrap(),
            None => vec![0.0; flat.len()],
        };
        for i in coords(flat.len(), max_coords, vi as u64) {
            let eval = |delta: f64| {
                let mut p = flat.clone();
                p[i] += delta;
                var.set(&Tensor::from_vec(p, &shape, &Device::Cpu).unwrap()).unwrap();
                scalar(&f())
            };
            let d1 = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            let numeric = if richardson {
                // O(h⁴) extrapolation from steps h and h/2
                let d2 = (eval(FD_STEP / 2.0) - eval(-FD_STEP / 2.0)) / FD_STEP;
                d2 + (d2 - d1) / 3.0
            } else {
                d1
            };
            var.set(&base).unwrap();
            let r = rel_err(analytic[i], numeric, floor);
            if r > report.max_rel {
                report.max_rel = r;
                report.worst = (analytic[i], numeric);
            }
            report.checked += 1;
        }
    }
    report
}

/// Adds noise to every parameter so zero-initialised layers are exercised.
pub fn jitter_params(ps: &ParamStore, scale: f64, seed: u64) {
    for (i, var) in ps.all_vars().iter().enumerate() {
        let noise = randn(var.as_tensor().dims(), seed + i as u64);
        var.set(&(var.as_tensor() + (noise * scale).unwrap()).unwrap()).unwrap();
    }
}

/// Weighted sum `Σ w ⊙ x` with fixed pseudo-random weights.
pub fn probe(x: &Tensor, seed: u64) -> Tensor {
    let w = randn(x.dims(), seed).to_dtype(x.dtype()).unwrap();
    (x * w).unwrap().sum_all().unwrap()
}
