//! Realism transforms applied to a painted opacity layer.

use serde::{Deserialize, Serialize};

use crate::blur::gaussian_blur;
use crate::brush::AnomalyLayer;
use crate::error::{Error, Result};
use crate::image::{ensure_same_dims, percentile, GrayImage};
use crate::rng::RandomStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Cryst,
    Blur,
    Rib,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Cryst => "cryst",
            Stage::Blur => "blur",
            Stage::Rib => "rib",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformConfig {
    /// Voronoi seeds per 1000 pixels of the support's bounding box.
    pub cryst_cells_per_1k_px: f64,
    pub blur_sigma: f64,
    pub rib_alpha: f64,
    pub rib_percentile: f64,
    /// Stages in application order; each at most once.
    pub stages: Vec<Stage>,
    pub cryst_prob: f64,
    pub blur_prob: f64,
    pub rib_prob: f64,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            cryst_cells_per_1k_px: 1.5,
            blur_sigma: 2.0,
            rib_alpha: 0.8,
            rib_percentile: 0.85,
            stages: vec![Stage::Cryst, Stage::Blur, Stage::Rib],
            cryst_prob: 0.5,
            blur_prob: 0.9,
            rib_prob: 1.0,
        }
    }
}

impl TransformConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(format!("transform: {msg}")));
        if !(self.cryst_cells_per_1k_px > 0.0 && self.cryst_cells_per_1k_px.is_finite()) {
            return bad(format!(
                "cryst_cells_per_1k_px {} must be > 0",
                self.cryst_cells_per_1k_px
            ));
        }
        if !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return bad(format!("blur_sigma {} must be >= 0", self.blur_sigma));
        }
        if !(0.0..=1.0).contains(&self.rib_alpha) {
            return bad(format!("rib_alpha {} outside [0, 1]", self.rib_alpha));
        }
        if !(self.rib_percentile > 0.0 && self.rib_percentile < 1.0) {
            return bad(format!("rib_percentile {} outside (0, 1)", self.rib_percentile));
        }
        for (name, p) in [
            ("cryst_prob", self.cryst_prob),
            ("blur_prob", self.blur_prob),
            ("rib_prob", self.rib_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1]"));
            }
        }
        let mut seen = self.stages.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.stages.len() {
            return bad("a stage appears more than once".into());
        }
        Ok(())
    }

    pub fn probability(&self, stage: Stage) -> f64 {
        match stage {
            Stage::Cryst => self.cryst_prob,
            Stage::Blur => self.blur_prob,
            Stage::Rib => self.rib_prob,
        }
    }
}

/// Piecewise-constant quantization of the support over the Voronoi cells of
/// `seeds`. Each support pixel takes the mean support value of its cell;
/// pixels outside the support stay 0. Distance ties go to the lower seed index.
pub fn crystallize_with_seeds(layer: &AnomalyLayer, seeds: &[(f64, f64)]) -> AnomalyLayer {
    let (w, _) = layer.dims();
    let support: Vec<usize> = layer
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(i, _)| i)
        .collect();
    if support.is_empty() || seeds.is_empty() {
        return layer.clone();
    }
    let owner: Vec<usize> = support
        .iter()
        .map(|&i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, &(sx, sy)) in seeds.iter().enumerate() {
                let d = (x - sx) * (x - sx) + (y - sy) * (y - sy);
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            best
        })
        .collect();
    let mut sums = vec![0.0; seeds.len()];
    let mut counts = vec![0usize; seeds.len()];
    for (&i, &k) in support.iter().zip(&owner) {
        sums[k] += layer.values()[i];
        counts[k] += 1;
    }
    let mut out = vec![0.0; layer.values().len()];
    for (&i, &k) in support.iter().zip(&owner) {
        out[i] = (sums[k] / counts[k] as f64).min(1.0);
    }
    let (w, h) = layer.dims();
    AnomalyLayer::from_image(GrayImage::from_raw(w, h, out))
}

/// Seed points scattered uniformly over the support's bounding box, at
/// `density` seeds per 1000 box pixels (at least one).
pub fn crystal_seeds(layer: &AnomalyLayer, density: f64, rng: &mut RandomStream) -> Vec<(f64, f64)> {
    let support = layer.support();
    let fg = support.foreground();
    if fg.is_empty() {
        return Vec::new();
    }
    let min_x = fg.iter().map(|p| p.0).min().unwrap_or(0) as f64;
    let max_x = fg.iter().map(|p| p.0).max().unwrap_or(0) as f64 + 1.0;
    let min_y = fg.iter().map(|p| p.1).min().unwrap_or(0) as f64;
    let max_y = fg.iter().map(|p| p.1).max().unwrap_or(0) as f64 + 1.0;
    let area = (max_x - min_x) * (max_y - min_y);
    let n = ((density * area / 1000.0).round() as usize).max(1);
    (0..n)
        .map(|_| (rng.uniform(min_x, max_x), rng.uniform(min_y, max_y)))
        .collect()
}

pub fn crystallize(layer: &AnomalyLayer, density: f64, rng: &mut RandomStream) -> AnomalyLayer {
    let seeds = crystal_seeds(layer, density, rng);
    crystallize_with_seeds(layer, &seeds)
}

/// Gaussian softening of the layer; the support may grow by the kernel radius.
pub fn blur_transform(layer: &AnomalyLayer, sigma: f64) -> AnomalyLayer {
    AnomalyLayer::from_image(gaussian_blur(&layer.to_image(), sigma))
}

/// Bone-likelihood map: `clamp((I - v_p) / (1 - v_p), 0, 1)` where `v_p` is
/// the image's `percentile` intensity.
pub fn rib_intensity_map(image: &GrayImage, percentile_frac: f64) -> GrayImage {
    let v_p = percentile(image.pixels(), percentile_frac);
    rib_map_with_cutoff(image, v_p)
}

pub fn rib_map_with_cutoff(image: &GrayImage, cutoff: f64) -> GrayImage {
    if cutoff >= 1.0 {
        let (w, h) = image.dims();
        return GrayImage::zeros(w, h);
    }
    image.map(|v| (v - cutoff) / (1.0 - cutoff))
}

/// `layer * (1 - alpha * rib)`, pixelwise.
pub fn rib_scale(layer: &AnomalyLayer, rib: &GrayImage, alpha: f64) -> Result<AnomalyLayer> {
    ensure_same_dims(layer.dims(), rib.dims())?;
    let (w, h) = layer.dims();
    let out = layer
        .values()
        .iter()
        .zip(rib.pixels())
        .map(|(&a, &r)| a * (1.0 - alpha * r))
        .collect();
    Ok(AnomalyLayer::from_image(GrayImage::from_raw(w, h, out)))
}

/// Random choices made while composing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComposeTrace {
    pub stages_applied: Vec<Stage>,
    pub cryst_seeds: Vec<(f64, f64)>,
}

pub fn compose(
    layer: &AnomalyLayer,
    image: &GrayImage,
    config: &TransformConfig,
    rng: &mut RandomStream,
) -> Result<AnomalyLayer> {
    compose_traced(layer, image, config, rng).map(|(out, _)| out)
}

/// Applies each configured stage in order, each included independently with
/// its probability. One Bernoulli draw is consumed per listed stage whether or
/// not it fires.
pub fn compose_traced(
    layer: &AnomalyLayer,
    image: &GrayImage,
    config: &TransformConfig,
    rng: &mut RandomStream,
) -> Result<(AnomalyLayer, ComposeTrace)> {
    config.validate()?;
    ensure_same_dims(layer.dims(), image.dims())?;
    let included: Vec<Stage> = config
        .stages
        .iter()
        .copied()
        .filter(|&s| rng.bernoulli(config.probability(s)))
        .collect();
    let mut trace = ComposeTrace::default();
    let mut current = layer.clone();
    for stage in included {
        current = match stage {
            Stage::Cryst => {
                let seeds = crystal_seeds(&current, config.cryst_cells_per_1k_px, rng);
                let out = crystallize_with_seeds(&current, &seeds);
                trace.cryst_seeds = seeds;
                out
            }
            Stage::Blur => blur_transform(&current, config.blur_sigma),
            Stage::Rib => {
                let rib = rib_intensity_map(image, config.rib_percentile);
                rib_scale(&current, &rib, config.rib_alpha)?
            }
        };
        trace.stages_applied.push(stage);
    }
    Ok((current, trace))
}

/// Re-applies a recorded composition without drawing any randomness.
pub fn replay(
    layer: &AnomalyLayer,
    image: &GrayImage,
    config: &TransformConfig,
    trace: &ComposeTrace,
) -> Result<AnomalyLayer> {
    let mut current = layer.clone();
    for &stage in &trace.stages_applied {
        current = match stage {
            Stage::Cryst => crystallize_with_seeds(&current, &trace.cryst_seeds),
            Stage::Blur => blur_transform(&current, config.blur_sigma),
            Stage::Rib => {
                let rib = rib_intensity_map(image, config.rib_percentile);
                rib_scale(&current, &rib, config.rib_alpha)?
            }
        };
    }
    Ok(current)
}
