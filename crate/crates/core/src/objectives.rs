//! Training objectives.
//!
//! All per-pixel losses take probability maps `(B, H, W)` in `[0, 1]` and
//! binary targets of the same shape, and return one loss per batch item.
//! `*_mean` helpers average over the batch.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::decoder::MaskPrediction;
use crate::error::{Error, Result};
use crate::nn::sigmoid;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LossConfig {
    pub lambda_aux: f64,
    pub dice_weight: f64,
    pub focal_weight: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    /// `(w_iou, w_aux)` of the total dependency loss.
    pub dep_total_weights: (f64, f64),
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_aux: 0.1,
            dice_weight: 1.0,
            focal_weight: 1.0,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            dep_total_weights: (1.0, 0.1),
            eps: 1e-6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            self.lambda_aux,
            self.dice_weight,
            self.focal_weight,
            self.focal_alpha,
            self.focal_gamma,
            self.dep_total_weights.0,
            self.dep_total_weights.1,
        ];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidConfig("loss weights must be finite and >= 0".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidConfig("eps must be positive".into()));
        }
        Ok(())
    }
}

fn check(pred: &Tensor, gt: &Tensor) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    Ok(())
}

/// Sum over every axis but the first.
fn per_item_sum(x: &Tensor) -> Result<Tensor> {
    let b = x.dim(0)?;
    Ok(x.reshape((b, ()))?.sum(D::Minus1)?)
}

fn per_item_mean(x: &Tensor) -> Result<Tensor> {
    let b = x.dim(0)?;
    Ok(x.reshape((b, ()))?.mean(D::Minus1)?)
}

/// `1 − (Σpg + ε) / (Σp + Σg − Σpg + ε)`
pub fn soft_iou_loss(pred: &Tensor, gt: &Tensor, eps: f64) -> Result<Tensor> {
    check(pred, gt)?;
    let inter = per_item_sum(&(pred * gt)?)?;
    let union = ((per_item_sum(pred)? + per_item_sum(gt)?)? - &inter)?;
    Ok(((inter + eps)? / (union + eps)?)?.affine(-1.0, 1.0)?)
}

/// `1 − (2Σpg + ε) / (Σp + Σg + ε)`
pub fn dice_loss(pred: &Tensor, gt: &Tensor, eps: f64) -> Result<Tensor> {
    check(pred, gt)?;
    let inter = per_item_sum(&(pred * gt)?)?;
    let denom = (per_item_sum(pred)? + per_item_sum(gt)?)?;
    Ok(((inter * 2.0)? + eps)?.div(&(denom + eps)?)?.affine(-1.0, 1.0)?)
}

fn pow(x: &Tensor, gamma: f64) -> Result<Tensor> {
    Ok(if gamma == 0.0 {
        x.ones_like()?
    } else if gamma == 1.0 {
        x.clone()
    } else if gamma == 2.0 {
        x.sqr()?
    } else {
        x.powf(gamma)?
    })
}

/// Pixel mean of `−α g (1−p)^γ log(p+ε) − (1−α)(1−g) p^γ log(1−p+ε)`.
pub fn focal_loss(pred: &Tensor, gt: &Tensor, alpha: f64, gamma: f64, eps: f64) -> Result<Tensor> {
    check(pred, gt)?;
    let one_minus_p = pred.affine(-1.0, 1.0)?;
    let one_minus_g = gt.affine(-1.0, 1.0)?;
    let pos = (gt * pow(&one_minus_p, gamma)?)?.mul(&(pred + eps)?.log()?)?;
    let neg = (one_minus_g * pow(pred, gamma)?)?.mul(&(one_minus_p + eps)?.log()?)?;
    let px = ((pos * (-alpha))? - (neg * (1.0 - alpha))?)?;
    per_item_mean(&px)
}

/// Weighted Dice + Focal on the auxiliary (averaged-candidate) mask.
pub fn aux_loss(aux_pred: &Tensor, gt: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    let dice = dice_loss(aux_pred, gt, cfg.eps)?;
    let focal = focal_loss(aux_pred, gt, cfg.focal_alpha, cfg.focal_gamma, cfg.eps)?;
    Ok(((dice * cfg.dice_weight)? + (focal * cfg.focal_weight)?)?)
}

/// `L_IoU(final) + λ · L_aux(aux)`, one value per batch item.
pub fn function_loss(pred: &MaskPrediction, gt_func: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    let iou = soft_iou_loss(&sigmoid(&pred.func_logits)?, gt_func, cfg.eps)?;
    if cfg.lambda_aux == 0.0 {
        return Ok(iou);
    }
    let aux = aux_loss(&sigmoid(&pred.aux_func)?, gt_func, cfg)?;
    Ok((iou + (aux * cfg.lambda_aux)?)?)
}

/// Terms of the dependency loss, each `(B,)`.
#[derive(Debug, Clone)]
pub struct DependencyTerms {
    pub fg: Tensor,
    pub bg: Tensor,
    pub aux: Tensor,
    pub total: Tensor,
}

/// Background cross-entropy `mean_{region}(−log(1 − p + ε))` over the
/// pixels where `region = 1`.
pub fn background_bce(pred: &Tensor, region: &Tensor, eps: f64) -> Result<Tensor> {
    check(pred, region)?;
    let nll = pred.affine(-1.0, 1.0 + eps)?.log()?.neg()?;
    let count = per_item_sum(region)?.clamp(1.0, f64::INFINITY)?;
    Ok((per_item_sum(&(nll * region)?)? / count)?)
}

/// Dependency loss with foreground/background decomposition.
///
/// Annotated items (`has_dep = 1`) get Dice+Focal on the dependency map, a
/// background term outside `gt_dep ∪ gt_func`, and the auxiliary loss.
/// Unannotated items get only the background term over the whole map.
/// `total = w_iou · (fg + bg) + w_aux · aux`.
pub fn dependency_terms(
    dep_prob: &Tensor,
    aux_dep_prob: &Tensor,
    gt_dep: &Tensor,
    gt_func: &Tensor,
    has_dep: &Tensor,
    cfg: &LossConfig,
) -> Result<DependencyTerms> {
    check(dep_prob, gt_dep)?;
    check(dep_prob, gt_func)?;
    let has = has_dep.to_dtype(dep_prob.dtype())?;
    let fg_raw = (dice_loss(dep_prob, gt_dep, cfg.eps)?
        + focal_loss(dep_prob, gt_dep, cfg.focal_alpha, cfg.focal_gamma, cfg.eps)?)?;
    let fg = (fg_raw * &has)?;

    // union for annotated items, the whole map otherwise
    let union = gt_dep.maximum(gt_func)?;
    let b = has.dim(0)?;
    let has_map = has.reshape((b, 1, 1))?;
    let region = union.broadcast_mul(&has_map)?.affine(-1.0, 1.0)?;
    let bg = background_bce(dep_prob, &region, cfg.eps)?;

    let aux = (aux_loss(aux_dep_prob, gt_dep, cfg)? * &has)?;
    let (w_iou, w_aux) = cfg.dep_total_weights;
    let total = ((((&fg + &bg)? * w_iou)?) + (&aux * w_aux)?)?;
    Ok(DependencyTerms { fg, bg, aux, total })
}

pub fn dependency_loss(
    pred: &MaskPrediction,
    gt_dep: &Tensor,
    gt_func: &Tensor,
    has_dep: &Tensor,
    cfg: &LossConfig,
) -> Result<Tensor> {
    Ok(dependency_terms(
        &sigmoid(&pred.dep_logits)?,
        &sigmoid(&pred.aux_dep)?,
        gt_dep,
        gt_func,
        has_dep,
        cfg,
    )?
    .total)
}

pub fn batch_mean(per_item: &Tensor) -> Result<Tensor> {
    Ok(per_item.mean_all()?)
}
