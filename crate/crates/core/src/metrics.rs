//! Image-level ranking metrics and pixel-level overlap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, GrayImage};

/// One image-level prediction: an anomaly score and the true label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSample {
    pub score: f64,
    /// `true` for abnormal.
    pub label: bool,
}

impl ScoreSample {
    pub fn new(score: f64, label: bool) -> Self {
        Self { score, label }
    }
}

fn check_finite(samples: &[ScoreSample]) -> Result<()> {
    match samples.iter().find(|s| !s.score.is_finite()) {
        Some(s) => Err(Error::InvalidConfig(format!("non-finite score {}", s.score))),
        None => Ok(()),
    }
}

/// Sorts by descending score and returns `(positives, negatives)` per tie group.
fn tie_groups(samples: &[ScoreSample]) -> Vec<(u64, u64)> {
    let mut sorted: Vec<&ScoreSample> = samples.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut groups: Vec<(u64, u64)> = Vec::new();
    let mut last: Option<f64> = None;
    for s in sorted {
        if last != Some(s.score) {
            groups.push((0, 0));
            last = Some(s.score);
        }
        let g = groups.last_mut().expect("group pushed above");
        if s.label {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    groups
}

/// Area under the ROC curve as the Mann-Whitney statistic: the fraction of
/// (positive, negative) pairs where the positive scores higher, ties counting
/// one half.
pub fn auc(samples: &[ScoreSample]) -> Result<f64> {
    check_finite(samples)?;
    let groups = tie_groups(samples);
    let positives: u64 = groups.iter().map(|g| g.0).sum();
    let negatives: u64 = groups.iter().map(|g| g.1).sum();
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass);
    }
    // Twice the U statistic keeps everything integral.
    let mut twice_u: u64 = 0;
    let mut negatives_below = negatives;
    for (p, n) in groups {
        negatives_below -= n;
        twice_u += 2 * p * negatives_below + p * n;
    }
    Ok(twice_u as f64 / 2.0 / (positives * negatives) as f64)
}

/// Step-wise average precision: `sum_n (R_n - R_{n-1}) * P_n` over descending
/// distinct score thresholds. No interpolation.
pub fn average_precision(samples: &[ScoreSample]) -> Result<f64> {
    check_finite(samples)?;
    let groups = tie_groups(samples);
    let positives: u64 = groups.iter().map(|g| g.0).sum();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let total = positives as f64;
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for (p, n) in groups {
        tp += p;
        fp += n;
        let recall = tp as f64 / total;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// `2|A ∩ B| / (|A| + |B|)`, with two empty masks scoring 1.
pub fn dice_score(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let inter = pred.intersection_count(gt)?;
    let total = pred.count() + gt.count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// How an anomaly map collapses to one image-level score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Reducer {
    Max,
    Mean,
    /// Mean of the `ceil(fraction * pixels)` largest values (at least one).
    TopKMean { fraction: f64 },
}

impl Default for Reducer {
    fn default() -> Self {
        Reducer::TopKMean { fraction: 0.01 }
    }
}

pub fn image_score_from_map(map: &GrayImage, reducer: Reducer) -> f64 {
    let px = map.pixels();
    match reducer {
        Reducer::Max => px.iter().copied().fold(f64::MIN, f64::max),
        Reducer::Mean => px.iter().sum::<f64>() / px.len() as f64,
        Reducer::TopKMean { fraction } => {
            let k = ((fraction.clamp(0.0, 1.0) * px.len() as f64).ceil() as usize).clamp(1, px.len());
            let mut sorted = px.to_vec();
            sorted.sort_by(|a, b| b.total_cmp(a));
            sorted[..k].iter().sum::<f64>() / k as f64
        }
    }
}
