use std::path::Path;

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Scores;
use crate::model::AvagModel;
use crate::objectives::{batch_mean, dependency_loss, function_loss};
use crate::train::augment::augment;
use crate::train::checkpoint::{Checkpoint, CheckpointMeta};
use crate::train::config::TrainConfig;
use crate::train::dataset::Dataset;
use crate::train::eval::evaluate_model;
use crate::train::pairing::{pair_samples, Pair};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub func_loss: f64,
    pub dep_loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val: Option<Scores>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub best_val: Option<Scores>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss).collect()
    }
}

pub struct TrainOutcome {
    /// Model state after the last step.
    pub model: AvagModel,
    /// Highest validation `(mIoU_f + mIoU_d) / 2`, or the last epoch when
    /// no validation data was given.
    pub best: Checkpoint,
    pub log: TrainLog,
}

fn mask_tensor(masks: &[&ndarray::Array2<u8>], dtype: DType) -> Result<Tensor> {
    let (h, w) = masks[0].dim();
    let data: Vec<f32> = masks.iter().flat_map(|m| m.iter().map(|&v| v as f32)).collect();
    Ok(Tensor::from_vec(data, (masks.len(), h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

struct StepLosses {
    total: Tensor,
    func: f64,
    dep: f64,
}

fn batch_losses(
    model: &AvagModel,
    cfg: &TrainConfig,
    data: &Dataset,
    batch: &[Pair],
    rng: &mut ChaCha8Rng,
) -> Result<StepLosses> {
    let dtype = model.dtype();
    let samples: Vec<_> = batch
        .iter()
        .map(|p| augment(&data.items[p.image].sample, &cfg.augment, rng))
        .collect();
    let images: Vec<_> = samples.iter().map(|s| &s.image).collect();
    let specs: Vec<_> = batch.iter().map(|p| &data.items[p.audio].spec).collect();
    let pred = model.forward(&model.image_tensor(&images)?, &model.spec_tensor(&specs)?)?;

    let gt_func = mask_tensor(&samples.iter().map(|s| &s.mask_func).collect::<Vec<_>>(), dtype)?;
    let gt_dep = mask_tensor(&samples.iter().map(|s| &s.mask_dep).collect::<Vec<_>>(), dtype)?;
    let has: Vec<f32> = samples.iter().map(|s| if s.has_dep { 1.0 } else { 0.0 }).collect();
    let has = Tensor::from_vec(has, samples.len(), &Device::Cpu)?.to_dtype(dtype)?;

    let loss_cfg = cfg.loss_config();
    let mut total = Tensor::zeros((), dtype, &Device::Cpu)?;
    let mut func = 0.0;
    let mut dep = 0.0;
    if cfg.ablation.supervise_func {
        let l = batch_mean(&function_loss(&pred, &gt_func, &loss_cfg)?)?;
        func = l.to_dtype(DType::F64)?.to_scalar()?;
        total = (total + l)?;
    }
    if cfg.ablation.supervise_dep {
        let l = batch_mean(&dependency_loss(&pred, &gt_dep, &gt_func, &has, &loss_cfg)?)?;
        dep = l.to_dtype(DType::F64)?.to_scalar()?;
        total = (total + l)?;
    }
    Ok(StepLosses { total, func, dep })
}

/// Trains from scratch. With `out_dir` set, the best checkpoint, the final
/// checkpoint and the log are written there as training progresses.
pub fn train(cfg: &TrainConfig, data: &Dataset, val: Option<&Dataset>, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyList);
    }
    let model = AvagModel::new(&cfg.model_config(), cfg.seed, DType::F32)?;
    let mut opt = AdamW::new(
        model.params().all_vars(),
        ParamsAdamW {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..ParamsAdamW::default()
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let by_cat = data.by_category();
    let val = val.filter(|v| !v.is_empty());

    let mut log = TrainLog::default();
    let mut best: Option<Checkpoint> = None;
    let mut step = 0usize;
    'epochs: for epoch in 0..cfg.epochs {
        let mut pairs = pair_samples(&by_cat, &by_cat, cfg.seed, epoch as u64)?;
        pairs.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_steps = 0usize;
        let mut stop = false;
        for batch in pairs.chunks(cfg.batch_size) {
            let l = batch_losses(&model, cfg, data, batch, &mut rng)?;
            let loss: f64 = l.total.to_dtype(DType::F64)?.to_scalar()?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    detail: format!("func {} dep {}", l.func, l.dep),
                });
            }
            opt.backward_step(&l.total)?;
            debug!("epoch {epoch} step {step} loss {loss:.5}");
            log.steps.push(StepLog {
                epoch,
                step,
                loss,
                func_loss: l.func,
                dep_loss: l.dep,
            });
            epoch_loss += loss;
            epoch_steps += 1;
            step += 1;
            if cfg.max_steps.is_some_and(|m| step >= m) {
                stop = true;
                break;
            }
        }
        let scores = match val {
            Some(v) => Some(evaluate_model(&model, v)?.scores()),
            None => None,
        };
        let mean_loss = epoch_loss / epoch_steps.max(1) as f64;
        info!(
            "epoch {epoch}: loss {mean_loss:.4}{}",
            scores
                .map(|s| format!(", val mIoU_f {:.4} mIoU_d {:.4}", s.miou_f, s.miou_d))
                .unwrap_or_default()
        );
        log.epochs.push(EpochLog {
            epoch,
            mean_loss,
            val: scores,
        });

        let meta = CheckpointMeta {
            config: cfg.clone(),
            epoch,
            step,
            rng: rng.clone(),
            val_scores: scores,
        };
        let improved = match (&scores, &log.best_val) {
            (Some(s), Some(b)) => s.selection_score() > b.selection_score(),
            (Some(_), None) => true,
            (None, _) => true,
        };
        if improved {
            let ck = Checkpoint::capture(&model, meta.clone())?;
            if let Some(dir) = out_dir {
                ck.save(&dir.join("best"))?;
            }
            best = Some(ck);
            log.best_epoch = Some(epoch);
            log.best_val = scores;
        }
        if let Some(dir) = out_dir {
            Checkpoint::capture(&model, meta)?.save(&dir.join("last"))?;
            std::fs::write(dir.join("log.json"), serde_json::to_string_pretty(&log)?)?;
        }
        if stop {
            break 'epochs;
        }
    }
    Ok(TrainOutcome {
        model,
        best: best.expect("at least one epoch"),
        log,
    })
}
