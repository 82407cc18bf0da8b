//! Dynamic-brush painting of the base opacity layer.
//!
//! Anchors are sampled uniformly from the lung foreground. From every anchor
//! a stroke walks outward as a chain of soft elliptical stamps; each step
//! jitters the heading, the stamp radius and the stamp opacity. Stamps blend
//! by saturating addition and the finished layer is cut to the lung mask.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, GrayImage};
use crate::rng::RandomStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BrushConfig {
    /// Inclusive `[min, max]` anchors per image.
    pub anchor_count: [u32; 2],
    /// Inclusive `[min, max]` stamps per stroke.
    pub stamps_per_anchor: [u32; 2],
    /// Stamp semi-major axis in pixels at `reference_width`.
    pub base_radius: f64,
    pub size_jitter: f64,
    /// Maximum heading change per step, degrees.
    pub angle_jitter: f64,
    pub opacity_base: f64,
    pub opacity_jitter: f64,
    /// Minor/major axis ratio of a stamp.
    pub stamp_aspect: f64,
    /// Distance between consecutive stamps at `reference_width`.
    pub walk_step: f64,
    /// Image width the pixel-valued parameters are expressed at; radii and
    /// steps scale linearly with the actual width.
    pub reference_width: f64,
}

impl Default for BrushConfig {
    fn default() -> Self {
        Self {
            anchor_count: [2, 4],
            stamps_per_anchor: [25, 50],
            base_radius: 6.0,
            size_jitter: 0.5,
            angle_jitter: 45.0,
            opacity_base: 0.25,
            opacity_jitter: 0.6,
            stamp_aspect: 0.4,
            walk_step: 3.0,
            reference_width: 256.0,
        }
    }
}

impl BrushConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(format!("brush: {msg}")));
        for (name, [lo, hi]) in [
            ("anchor_count", self.anchor_count),
            ("stamps_per_anchor", self.stamps_per_anchor),
        ] {
            if lo < 1 || lo > hi {
                return bad(format!("{name} needs 1 <= min <= max, got [{lo}, {hi}]"));
            }
        }
        for (name, v) in [
            ("size_jitter", self.size_jitter),
            ("opacity_jitter", self.opacity_jitter),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        if !(self.base_radius >= 1.0) {
            return bad(format!("base_radius {} below 1", self.base_radius));
        }
        if !(self.opacity_base > 0.0 && self.opacity_base <= 1.0) {
            return bad(format!("opacity_base {} outside (0, 1]", self.opacity_base));
        }
        if !(self.stamp_aspect > 0.0 && self.stamp_aspect <= 1.0) {
            return bad(format!("stamp_aspect {} outside (0, 1]", self.stamp_aspect));
        }
        if !(self.angle_jitter >= 0.0 && self.angle_jitter.is_finite()) {
            return bad(format!("angle_jitter {} must be >= 0", self.angle_jitter));
        }
        if !(self.walk_step >= 0.0 && self.walk_step.is_finite()) {
            return bad(format!("walk_step {} must be >= 0", self.walk_step));
        }
        if !(self.reference_width > 0.0) {
            return bad("reference_width must be positive".into());
        }
        Ok(())
    }
}

/// Additive opacity field. Values stay in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyLayer {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl AnomalyLayer {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn from_image(image: GrayImage) -> Self {
        let (width, height) = image.dims();
        Self {
            width,
            height,
            values: image.into_pixels(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_raw(self.width, self.height, self.values.clone())
    }

    pub fn into_image(self) -> GrayImage {
        GrayImage::from_raw(self.width, self.height, self.values)
    }

    pub fn support(&self) -> BinaryMask {
        BinaryMask::from_raw(
            self.width,
            self.height,
            self.values.iter().map(|&v| v > 0.0).collect(),
        )
    }

    /// Zeroes everything outside `mask`.
    pub fn restrict_to(&mut self, mask: &BinaryMask) -> Result<()> {
        crate::image::ensure_same_dims(self.dims(), mask.dims())?;
        for (v, &b) in self.values.iter_mut().zip(mask.bits()) {
            if !b {
                *v = 0.0;
            }
        }
        Ok(())
    }
}

/// Raised-cosine falloff: 1 at the centre, 0 at normalized distance 1.
#[inline]
pub fn stamp_profile(normalized_distance: f64) -> f64 {
    if normalized_distance >= 1.0 {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * normalized_distance).cos())
    }
}

/// One brush dab.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub center: (f64, f64),
    /// Semi-major axis, pixels.
    pub radius: f64,
    /// Major-axis orientation, degrees.
    pub angle: f64,
    pub opacity: f64,
    pub aspect: f64,
}

/// Adds a rotated elliptical raised-cosine dab, saturating at 1. Parts falling
/// outside the layer are clipped.
pub fn stamp(layer: &mut AnomalyLayer, s: &Stamp) {
    assert!(s.radius >= 1.0, "stamp radius must be >= 1");
    if s.opacity <= 0.0 {
        return;
    }
    let major = s.radius;
    let minor = s.radius * s.aspect;
    let (sin, cos) = s.angle.to_radians().sin_cos();
    let (cx, cy) = s.center;
    let (w, h) = layer.dims();
    let x0 = (cx - major).floor().max(0.0) as usize;
    let y0 = (cy - major).floor().max(0.0) as usize;
    let x1 = ((cx + major).ceil() as isize).min(w as isize - 1);
    let y1 = ((cy + major).ceil() as isize).min(h as isize - 1);
    if x1 < 0 || y1 < 0 {
        return;
    }
    for y in y0..=y1 as usize {
        for x in x0..=x1 as usize {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let u = (dx * cos + dy * sin) / major;
            let v = (-dx * sin + dy * cos) / minor;
            let d = (u * u + v * v).sqrt();
            let add = s.opacity * stamp_profile(d);
            if add > 0.0 {
                let cell = &mut layer.values[y * w + x];
                *cell = (*cell + add).min(1.0);
            }
        }
    }
}

/// Draws `count` foreground pixels uniformly without replacement, or with
/// replacement once `count` exceeds the foreground size.
pub fn sample_anchors(
    lung: &BinaryMask,
    count: usize,
    rng: &mut RandomStream,
) -> Result<Vec<(usize, usize)>> {
    let fg = lung.foreground();
    if fg.is_empty() {
        return Err(Error::EmptyLungMask);
    }
    if count <= fg.len() {
        Ok(index::sample(rng, fg.len(), count)
            .into_iter()
            .map(|i| fg[i])
            .collect())
    } else {
        Ok((0..count)
            .map(|_| fg[rng.int_inclusive(0, fg.len() as u32 - 1) as usize])
            .collect())
    }
}

/// Everything random that went into one painted layer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BrushTrace {
    pub anchors: Vec<(usize, usize)>,
    pub strokes: Vec<Vec<Stamp>>,
    /// Heading change applied before each stamp after the first, degrees.
    pub heading_deltas: Vec<f64>,
}

impl BrushTrace {
    pub fn stamps(&self) -> impl Iterator<Item = &Stamp> {
        self.strokes.iter().flatten()
    }
}

pub fn paint_base(
    lung: &BinaryMask,
    config: &BrushConfig,
    rng: &mut RandomStream,
) -> Result<AnomalyLayer> {
    paint_base_traced(lung, config, rng).map(|(layer, _)| layer)
}

pub fn paint_base_traced(
    lung: &BinaryMask,
    config: &BrushConfig,
    rng: &mut RandomStream,
) -> Result<(AnomalyLayer, BrushTrace)> {
    config.validate()?;
    if lung.is_empty() {
        return Err(Error::EmptyLungMask);
    }
    let (w, h) = lung.dims();
    let scale = w as f64 / config.reference_width;
    let radius = (config.base_radius * scale).max(1.0);
    let step = config.walk_step * scale;

    let count = rng.int_inclusive(config.anchor_count[0], config.anchor_count[1]) as usize;
    let anchors = sample_anchors(lung, count, rng)?;
    let mut layer = AnomalyLayer::zeros(w, h);
    let mut trace = BrushTrace {
        anchors: anchors.clone(),
        ..BrushTrace::default()
    };

    for &(ax, ay) in &anchors {
        let n = rng.int_inclusive(config.stamps_per_anchor[0], config.stamps_per_anchor[1]);
        let mut heading = rng.uniform(0.0, 360.0);
        let (mut px, mut py) = (ax as f64, ay as f64);
        let mut stroke = Vec::with_capacity(n as usize);
        for i in 0..n {
            if i > 0 {
                let delta = config.angle_jitter * rng.symmetric();
                trace.heading_deltas.push(delta);
                heading += delta;
                let (sin, cos) = heading.to_radians().sin_cos();
                px += step * cos;
                py += step * sin;
            }
            let r = (radius * (1.0 + config.size_jitter * rng.symmetric())).max(1.0);
            let opacity =
                (config.opacity_base * (1.0 + config.opacity_jitter * rng.symmetric())).clamp(0.0, 1.0);
            let s = Stamp {
                center: (px, py),
                radius: r,
                angle: heading,
                opacity,
                aspect: config.stamp_aspect,
            };
            stamp(&mut layer, &s);
            stroke.push(s);
        }
        trace.strokes.push(stroke);
    }
    layer.restrict_to(lung)?;
    Ok((layer, trace))
}

/// Re-renders a recorded trace onto a fresh layer and masks it.
pub fn replay(lung: &BinaryMask, trace: &BrushTrace) -> Result<AnomalyLayer> {
    let (w, h) = lung.dims();
    let mut layer = AnomalyLayer::zeros(w, h);
    for s in trace.stamps() {
        stamp(&mut layer, s);
    }
    layer.restrict_to(lung)?;
    Ok(layer)
}
