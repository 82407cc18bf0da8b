//! Triplet generation: normal image, synthetic-opacity image, anomaly mask.

use serde::{Deserialize, Serialize};

use crate::brush::{self, AnomalyLayer, BrushConfig, BrushTrace};
use crate::error::{Error, Result};
use crate::image::{BinaryMask, GrayImage};
use crate::pbtseg::{LungMasks, PbtSegConfig};
use crate::rng::RandomStream;
use crate::transforms::{self, ComposeTrace, Stage, TransformConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub brush: BrushConfig,
    pub transform: TransformConfig,
    /// Opacity at or above which a pixel joins the anomaly mask.
    pub mask_threshold: f64,
    pub pbtseg: PbtSegConfig,
    pub master_seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            brush: BrushConfig::default(),
            transform: TransformConfig::default(),
            mask_threshold: 0.05,
            pbtseg: PbtSegConfig::default(),
            master_seed: 0,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_threshold > 0.0 && self.mask_threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "mask_threshold {} outside (0, 1)",
                self.mask_threshold
            )));
        }
        self.brush.validate()?;
        self.transform.validate()?;
        self.pbtseg.validate()
    }
}

/// Every random choice behind one triplet; enough to rebuild it exactly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub master_seed: u64,
    pub stream_id: u64,
    pub brush: BrushTrace,
    pub compose: ComposeTrace,
}

impl Provenance {
    pub fn stages_applied(&self) -> &[Stage] {
        &self.compose.stages_applied
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub i_norm: GrayImage,
    pub i_syn: GrayImage,
    pub m_anomaly: BinaryMask,
    /// The final opacity layer, kept so the mask can be re-derived exactly.
    pub a_final: AnomalyLayer,
    pub a_base: AnomalyLayer,
    pub seed: u64,
    pub provenance: Provenance,
}

/// `bit = a >= threshold`.
pub fn threshold_layer(layer: &AnomalyLayer, threshold: f64) -> BinaryMask {
    let (w, h) = layer.dims();
    BinaryMask::from_raw(w, h, layer.values().iter().map(|&v| v >= threshold).collect())
}

/// `clamp(image + layer, 0, 1)`.
pub fn overlay(image: &GrayImage, layer: &AnomalyLayer) -> Result<GrayImage> {
    crate::image::ensure_same_dims(image.dims(), layer.dims())?;
    let (w, h) = image.dims();
    let px = image
        .pixels()
        .iter()
        .zip(layer.values())
        .map(|(&i, &a)| (i + a).min(1.0))
        .collect();
    Ok(GrayImage::from_raw(w, h, px))
}

pub fn synthesize(
    image: &GrayImage,
    lungs: &LungMasks,
    config: &SynthesisConfig,
    stream_id: u64,
) -> Result<Triplet> {
    config.validate()?;
    crate::image::ensure_same_dims(image.dims(), lungs.combined.dims())?;
    let mut rng = RandomStream::new(config.master_seed, stream_id);
    let (a_base, brush_trace) = brush::paint_base_traced(&lungs.combined, &config.brush, &mut rng)?;
    let (mut a_final, compose_trace) =
        transforms::compose_traced(&a_base, image, &config.transform, &mut rng)?;
    // Blur may spread opacity past the lung boundary.
    a_final.restrict_to(&lungs.combined)?;
    let i_syn = overlay(image, &a_final)?;
    let m_anomaly = threshold_layer(&a_final, config.mask_threshold);
    Ok(Triplet {
        i_norm: image.clone(),
        i_syn,
        m_anomaly,
        a_final,
        a_base,
        seed: config.master_seed,
        provenance: Provenance {
            master_seed: config.master_seed,
            stream_id,
            brush: brush_trace,
            compose: compose_trace,
        },
    })
}

/// Rebuilds the final layer from recorded provenance alone, drawing no
/// randomness.
pub fn replay_final_layer(
    image: &GrayImage,
    lungs: &LungMasks,
    config: &SynthesisConfig,
    provenance: &Provenance,
) -> Result<AnomalyLayer> {
    let base = brush::replay(&lungs.combined, &provenance.brush)?;
    let mut layer = transforms::replay(&base, image, &config.transform, &provenance.compose)?;
    layer.restrict_to(&lungs.combined)?;
    Ok(layer)
}
