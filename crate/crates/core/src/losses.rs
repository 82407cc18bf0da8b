//! Training objectives and the residual inference rule as plain numerics.
//!
//! Nothing here differentiates automatically. The closed-form gradients of
//! the two reconstruction terms with respect to the reconstruction are
//! provided for trainers that need them:
//!
//! - global: `d/dÎ_k mean((I - Î)^2) = 2 (Î_k - I_k) / N`
//! - local:  `d/dÎ_k [sum m (I - Î)^2 / (sum m + eps)] = 2 m_k (Î_k - I_k) / (sum m + eps)`

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ensure_same_dims, BinaryMask, GrayImage};
use crate::metrics::dice_score;

/// A finite, non-empty embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig("feature vector is empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("feature vector has non-finite entries".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `1 - cos(f_syn, f_norm)`, in `[0, 2]`.
pub fn feature_alignment_loss(f_syn: &FeatureVector, f_norm: &FeatureVector) -> Result<f64> {
    if f_syn.0.len() != f_norm.0.len() {
        return Err(Error::LengthMismatch(f_syn.0.len(), f_norm.0.len()));
    }
    let (na, nb) = (f_syn.norm(), f_norm.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    // With unit vectors u, v: 1 - cos = |u - v|^2 / 2 = 2 - |u + v|^2 / 2.
    // Using the difference near cos = 1 and the sum near cos = -1 avoids
    // cancellation at both ends, and makes identical and opposite inputs
    // give exactly 0 and 2.
    let dot: f64 = f_syn.0.iter().zip(&f_norm.0).map(|(a, b)| a * b).sum();
    if dot == 0.0 {
        return Ok(1.0);
    }
    let sign = if dot > 0.0 { -1.0 } else { 1.0 };
    let half_sq = f_syn
        .0
        .iter()
        .zip(&f_norm.0)
        .map(|(a, b)| {
            let d = a / na + sign * (b / nb);
            d * d
        })
        .sum::<f64>()
        / 2.0;
    let loss = if dot > 0.0 { half_sq } else { 2.0 - half_sq };
    Ok(loss.clamp(0.0, 2.0))
}

/// Mean squared error over all pixels.
pub fn global_recon_loss(i_norm: &GrayImage, i_hat: &GrayImage) -> Result<f64> {
    ensure_same_dims(i_norm.dims(), i_hat.dims())?;
    let sum: f64 = i_norm
        .pixels()
        .iter()
        .zip(i_hat.pixels())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / i_norm.len() as f64)
}

/// Squared error inside `mask`, divided by `mask area + eps`.
pub fn local_recon_loss(
    i_norm: &GrayImage,
    i_hat: &GrayImage,
    mask: &BinaryMask,
    eps: f64,
) -> Result<f64> {
    ensure_same_dims(i_norm.dims(), i_hat.dims())?;
    ensure_same_dims(i_norm.dims(), mask.dims())?;
    let mut num = 0.0;
    let mut area = 0usize;
    for ((a, b), &m) in i_norm.pixels().iter().zip(i_hat.pixels()).zip(mask.bits()) {
        if m {
            num += (a - b) * (a - b);
            area += 1;
        }
    }
    Ok(num / (area as f64 + eps))
}

/// Gradient of [`global_recon_loss`] with respect to each pixel of `i_hat`.
pub fn global_recon_grad(i_norm: &GrayImage, i_hat: &GrayImage) -> Result<Vec<f64>> {
    ensure_same_dims(i_norm.dims(), i_hat.dims())?;
    let n = i_norm.len() as f64;
    Ok(i_norm
        .pixels()
        .iter()
        .zip(i_hat.pixels())
        .map(|(a, b)| 2.0 * (b - a) / n)
        .collect())
}

/// Gradient of [`local_recon_loss`] with respect to each pixel of `i_hat`.
pub fn local_recon_grad(
    i_norm: &GrayImage,
    i_hat: &GrayImage,
    mask: &BinaryMask,
    eps: f64,
) -> Result<Vec<f64>> {
    ensure_same_dims(i_norm.dims(), i_hat.dims())?;
    ensure_same_dims(i_norm.dims(), mask.dims())?;
    let denom = mask.count() as f64 + eps;
    Ok(i_norm
        .pixels()
        .iter()
        .zip(i_hat.pixels())
        .zip(mask.bits())
        .map(|((a, b), &m)| if m { 2.0 * (b - a) / denom } else { 0.0 })
        .collect())
}

/// Predicted anomaly mask: `(i_syn - i_hat)^2 >= tau`.
pub fn binarize_error(i_syn: &GrayImage, i_hat: &GrayImage, tau: f64) -> Result<BinaryMask> {
    ensure_same_dims(i_syn.dims(), i_hat.dims())?;
    let (w, h) = i_syn.dims();
    Ok(BinaryMask::from_raw(
        w,
        h,
        i_syn
            .pixels()
            .iter()
            .zip(i_hat.pixels())
            .map(|(a, b)| (a - b) * (a - b) >= tau)
            .collect(),
    ))
}

/// Inference-time binarization of an absolute-residual map with the same
/// rule as training: `a^2 >= tau`.
pub fn binarize_map(map: &GrayImage, tau: f64) -> BinaryMask {
    let (w, h) = map.dims();
    BinaryMask::from_raw(w, h, map.pixels().iter().map(|&a| a * a >= tau).collect())
}

/// Dice coefficient; two empty masks agree perfectly.
pub fn dice_coefficient(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    dice_score(pred, gt)
}

/// `1 - Dice`, so 0 is perfect overlap.
pub fn dice_loss(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    Ok(1.0 - dice_coefficient(pred, gt)?)
}

/// `|I - Î|`.
pub fn anomaly_map(i: &GrayImage, i_hat: &GrayImage) -> Result<GrayImage> {
    ensure_same_dims(i.dims(), i_hat.dims())?;
    let (w, h) = i.dims();
    Ok(GrayImage::from_raw(
        w,
        h,
        i.pixels()
            .iter()
            .zip(i_hat.pixels())
            .map(|(a, b)| (a - b).abs())
            .collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub feat: f64,
    pub global: f64,
    pub local: f64,
    pub dice: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            feat: 1.0,
            global: 1.0,
            local: 1.0,
            dice: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Binarization threshold on squared residuals.
    pub tau: f64,
    /// Denominator guard of the local term.
    pub eps: f64,
    pub weights: LossWeights,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.01,
            eps: 1e-8,
            weights: LossWeights::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::InvalidConfig(format!("loss.tau {} must be > 0", self.tau)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidConfig(format!("loss.eps {} must be > 0", self.eps)));
        }
        Ok(())
    }
}

/// Per-term values and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub feat: f64,
    pub global: f64,
    pub local: f64,
    pub dice: f64,
    pub total: f64,
}

impl LossReport {
    /// `total = w_feat*feat + w_global*global + w_local*local + w_dice*dice`.
    pub fn from_terms(feat: f64, global: f64, local: f64, dice: f64, weights: &LossWeights) -> Self {
        let total = weights.feat * feat
            + weights.global * global
            + weights.local * local
            + weights.dice * dice;
        Self {
            feat,
            global,
            local,
            dice,
            total,
        }
    }
}

/// Everything one training step needs to score.
pub struct LossInputs<'a> {
    pub i_norm: &'a GrayImage,
    pub i_syn: &'a GrayImage,
    pub i_hat: &'a GrayImage,
    pub m_anomaly: &'a BinaryMask,
    /// `(f_enc(I_syn), f_enc(I_norm))`; the feature term is 0 when absent.
    pub features: Option<(&'a FeatureVector, &'a FeatureVector)>,
}

pub fn total_loss(inputs: &LossInputs<'_>, config: &LossConfig) -> Result<LossReport> {
    config.validate()?;
    let feat = match inputs.features {
        Some((a, b)) => feature_alignment_loss(a, b)?,
        None => 0.0,
    };
    let global = global_recon_loss(inputs.i_norm, inputs.i_hat)?;
    let local = local_recon_loss(inputs.i_norm, inputs.i_hat, inputs.m_anomaly, config.eps)?;
    let predicted = binarize_error(inputs.i_syn, inputs.i_hat, config.tau)?;
    let dice = dice_loss(&predicted, inputs.m_anomaly)?;
    Ok(LossReport::from_terms(feat, global, local, dice, &config.weights))
}
