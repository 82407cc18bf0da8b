//! Progressive binary-threshold lung segmentation.
//!
//! Lungs are the darkest large structures on a frontal radiograph. A single
//! global threshold either fragments them (too low) or leaks into the
//! mediastinum and external artifacts (too high). Instead we sweep an
//! ascending threshold list; at each level the dark components are screened
//! by shape rules, the two largest survivors are assigned to a side by their
//! centroid, and a side mask is only ever replaced by a strictly larger,
//! still-valid, non-overlapping candidate.

use serde::{Deserialize, Serialize};

use crate::components::{label_components, Connectivity, Region};
use crate::error::{Error, Result};
use crate::image::{threshold_below, BinaryMask, GrayImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PbtSegConfig {
    /// Strictly ascending, each in (0, 1).
    pub thresholds: Vec<f64>,
    pub circularity_min: f64,
    /// Maximum `border_contact / perimeter`.
    pub border_contact_max: f64,
    /// Area bounds as fractions of the image area.
    pub area_min: f64,
    pub area_max: f64,
    pub require_taller_than_wide: bool,
    pub connectivity: Connectivity,
    /// Fill enclosed background pockets in each final side mask.
    pub fill_holes: bool,
}

impl Default for PbtSegConfig {
    fn default() -> Self {
        Self {
            thresholds: vec![
                0.2, 0.225, 0.25, 0.275, 0.3, 0.325, 0.35, 0.375, 0.4, 0.425, 0.45, 0.475, 0.5,
            ],
            circularity_min: 0.15,
            border_contact_max: 0.05,
            area_min: 0.02,
            area_max: 0.35,
            require_taller_than_wide: true,
            connectivity: Connectivity::Eight,
            fill_holes: false,
        }
    }
}

impl PbtSegConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(format!("pbtseg: {msg}")));
        if self.thresholds.len() < 2 {
            return bad("at least two thresholds are required".into());
        }
        if let Some(t) = self.thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return bad(format!("threshold {t} outside (0, 1)"));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return bad("thresholds must be strictly ascending".into());
        }
        if !(0.0 < self.area_min && self.area_min < self.area_max && self.area_max < 1.0) {
            return bad(format!(
                "need 0 < area_min < area_max < 1, got {} / {}",
                self.area_min, self.area_max
            ));
        }
        if !(self.circularity_min > 0.0 && self.circularity_min < 1.0) {
            return bad(format!("circularity_min {} outside (0, 1)", self.circularity_min));
        }
        if !(0.0..1.0).contains(&self.border_contact_max) {
            return bad(format!(
                "border_contact_max {} outside [0, 1)",
                self.border_contact_max
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// Left and right lung masks plus their union.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LungMasks {
    pub left: BinaryMask,
    pub right: BinaryMask,
    pub combined: BinaryMask,
}

impl LungMasks {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            left: BinaryMask::empty(width, height),
            right: BinaryMask::empty(width, height),
            combined: BinaryMask::empty(width, height),
        }
    }

    /// Builds the pair, rejecting overlapping sides.
    pub fn from_sides(left: BinaryMask, right: BinaryMask) -> Result<Self> {
        if !left.is_disjoint(&right)? {
            return Err(Error::InvalidImage("left and right lung masks overlap".into()));
        }
        let combined = left.union(&right)?;
        Ok(Self {
            left,
            right,
            combined,
        })
    }

    pub fn side(&self, side: Side) -> &BinaryMask {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty() && self.right.is_empty()
    }
}

/// One shape rule a candidate can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Circularity,
    TallerThanWide,
    BorderContact,
    AreaMin,
    AreaMax,
}

/// Rules `region` violates; empty means it is a valid lung candidate.
pub fn rule_violations(region: &Region, config: &PbtSegConfig, dims: (usize, usize)) -> Vec<Rule> {
    let image_area = (dims.0 * dims.1) as f64;
    let area = region.area as f64;
    let mut failed = Vec::new();
    if region.circularity < config.circularity_min {
        failed.push(Rule::Circularity);
    }
    if config.require_taller_than_wide && region.bbox_height() <= region.bbox_width() {
        failed.push(Rule::TallerThanWide);
    }
    if region.border_contact as f64 > config.border_contact_max * region.perimeter as f64 {
        failed.push(Rule::BorderContact);
    }
    if area < config.area_min * image_area {
        failed.push(Rule::AreaMin);
    }
    if area > config.area_max * image_area {
        failed.push(Rule::AreaMax);
    }
    failed
}

pub fn passes_rules(region: &Region, config: &PbtSegConfig, dims: (usize, usize)) -> bool {
    rule_violations(region, config, dims).is_empty()
}

pub fn filter_candidates(
    regions: &[Region],
    config: &PbtSegConfig,
    dims: (usize, usize),
) -> Vec<Region> {
    regions
        .iter()
        .filter(|r| passes_rules(r, config, dims))
        .cloned()
        .collect()
}

/// Side of the image holding `region`'s centroid.
pub fn side_of(region: &Region, dims: (usize, usize)) -> Side {
    if region.centroid.0 < dims.0 as f64 / 2.0 {
        Side::Left
    } else {
        Side::Right
    }
}

/// Picks the two largest candidates and assigns each to the half containing
/// its centroid. When both land in one half only the larger is kept.
pub fn select_lung_pair(
    candidates: &[Region],
    dims: (usize, usize),
) -> (Option<Region>, Option<Region>) {
    let mut ranked: Vec<&Region> = candidates.iter().collect();
    ranked.sort_by(|a, b| {
        b.area
            .cmp(&a.area)
            .then(a.centroid.0.total_cmp(&b.centroid.0))
            .then(a.label.cmp(&b.label))
    });
    let mut left = None;
    let mut right = None;
    for region in ranked.into_iter().take(2) {
        let slot = match side_of(region, dims) {
            Side::Left => &mut left,
            Side::Right => &mut right,
        };
        if slot.is_none() {
            *slot = Some(region.clone());
        }
    }
    (left, right)
}

/// Outcome of offering a candidate to one side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateDecision {
    Accepted,
    NotLarger,
    FailsRules,
    OverlapsOtherSide,
}

/// Replaces the `side` mask with `pixels` iff the candidate is strictly
/// larger, still passes every rule, and stays disjoint from the other side.
pub fn update_masks(
    current: &LungMasks,
    candidate: &Region,
    pixels: &BinaryMask,
    side: Side,
    config: &PbtSegConfig,
) -> Result<(LungMasks, UpdateDecision)> {
    let dims = current.left.dims();
    crate::image::ensure_same_dims(dims, pixels.dims())?;
    let (own, other) = match side {
        Side::Left => (&current.left, &current.right),
        Side::Right => (&current.right, &current.left),
    };
    let decision = if candidate.area <= own.count() {
        UpdateDecision::NotLarger
    } else if !passes_rules(candidate, config, dims) {
        UpdateDecision::FailsRules
    } else if !pixels.is_disjoint(other)? {
        UpdateDecision::OverlapsOtherSide
    } else {
        UpdateDecision::Accepted
    };
    if decision != UpdateDecision::Accepted {
        return Ok((current.clone(), decision));
    }
    let updated = match side {
        Side::Left => LungMasks::from_sides(pixels.clone(), current.right.clone())?,
        Side::Right => LungMasks::from_sides(current.left.clone(), pixels.clone())?,
    };
    Ok((updated, decision))
}

/// Per-candidate record in a segmentation trace.
#[derive(Debug, Clone, Serialize)]
pub struct CandidateTrace {
    pub region: Region,
    pub failed_rules: Vec<Rule>,
}

/// What happened at one threshold.
#[derive(Debug, Clone, Serialize)]
pub struct ThresholdTrace {
    pub threshold: f64,
    pub component_count: usize,
    /// Components at least as large as a quarter of the minimum lung area;
    /// smaller specks are counted but not itemised.
    pub candidates: Vec<CandidateTrace>,
    pub left_label: Option<u32>,
    pub right_label: Option<u32>,
    pub left_decision: Option<UpdateDecision>,
    pub right_decision: Option<UpdateDecision>,
    pub left_area: usize,
    pub right_area: usize,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SegmentationTrace {
    pub width: usize,
    pub height: usize,
    pub steps: Vec<ThresholdTrace>,
}

pub fn segment_lungs(image: &GrayImage, config: &PbtSegConfig) -> Result<LungMasks> {
    segment_lungs_traced(image, config).map(|(masks, _)| masks)
}

pub fn segment_lungs_traced(
    image: &GrayImage,
    config: &PbtSegConfig,
) -> Result<(LungMasks, SegmentationTrace)> {
    config.validate()?;
    let dims = image.dims();
    let mut masks = LungMasks::empty(dims.0, dims.1);
    let mut trace = SegmentationTrace {
        width: dims.0,
        height: dims.1,
        steps: Vec::with_capacity(config.thresholds.len()),
    };
    let speck = (config.area_min * (dims.0 * dims.1) as f64 / 4.0).max(1.0);

    for &t in &config.thresholds {
        let binary = threshold_below(image, t);
        let labeling = label_components(&binary, config.connectivity);
        let valid = filter_candidates(labeling.regions(), config, dims);
        let (left, right) = select_lung_pair(&valid, dims);

        let mut step = ThresholdTrace {
            threshold: t,
            component_count: labeling.regions().len(),
            candidates: labeling
                .regions()
                .iter()
                .filter(|r| r.area as f64 >= speck)
                .map(|r| CandidateTrace {
                    region: r.clone(),
                    failed_rules: rule_violations(r, config, dims),
                })
                .collect(),
            left_label: left.as_ref().map(|r| r.label),
            right_label: right.as_ref().map(|r| r.label),
            left_decision: None,
            right_decision: None,
            left_area: 0,
            right_area: 0,
        };

        for (side, candidate) in [(Side::Left, left), (Side::Right, right)] {
            let Some(candidate) = candidate else { continue };
            let pixels = labeling.region_mask(candidate.label);
            let (next, decision) = update_masks(&masks, &candidate, &pixels, side, config)?;
            if decision != UpdateDecision::Accepted {
                log::debug!(
                    "t={t:.3} {side:?} candidate {} (area {}) rejected: {decision:?}",
                    candidate.label,
                    candidate.area
                );
            }
            masks = next;
            match side {
                Side::Left => step.left_decision = Some(decision),
                Side::Right => step.right_decision = Some(decision),
            }
        }
        step.left_area = masks.left.count();
        step.right_area = masks.right.count();
        trace.steps.push(step);
    }

    if masks.is_empty() {
        return Err(Error::NoLungFound);
    }
    if config.fill_holes {
        let left = masks.left.fill_holes().difference(&masks.right)?;
        let right = masks.right.fill_holes().difference(&left)?;
        masks = LungMasks::from_sides(left, right)?;
    }
    Ok((masks, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::components::connected_components;

    fn disc_mask(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            dx * dx + dy * dy <= r * r
        })
    }

    fn ellipse_mask(w: usize, h: usize, cx: f64, cy: f64, a: f64, b: f64) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| {
            let dx = (x as f64 - cx) / a;
            let dy = (y as f64 - cy) / b;
            dx * dx + dy * dy <= 1.0
        })
    }

    fn single_region(mask: &BinaryMask) -> Region {
        let mut r = connected_components(mask, Connectivity::Eight);
        assert_eq!(r.len(), 1);
        r.remove(0)
    }

    /// Region with made-up geometry; selection only reads area, centroid, label.
    fn fake_region(label: u32, area: usize, cx: f64) -> Region {
        Region {
            label,
            area,
            bbox: (0, 0, 1, 1),
            centroid: (cx, 50.0),
            perimeter: 10,
            border_contact: 0,
            circularity: 0.9,
        }
    }

    #[test]
    fn default_thresholds_match_sweep() {
        let c = PbtSegConfig::default();
        assert_eq!(c.thresholds.len(), 13);
        for (i, t) in c.thresholds.iter().enumerate() {
            assert!((t - (0.20 + 0.025 * i as f64)).abs() < 1e-12);
        }
        c.validate().unwrap();
    }

    #[test]
    fn config_validation() {
        let mut c = PbtSegConfig::default();
        c.thresholds = vec![0.3, 0.2];
        assert!(c.validate().is_err());
        let mut c = PbtSegConfig::default();
        c.thresholds = vec![0.3];
        assert!(c.validate().is_err());
        let mut c = PbtSegConfig::default();
        c.area_min = 0.5;
        assert!(c.validate().is_err());
        let mut c = PbtSegConfig::default();
        c.border_contact_max = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn disc_of_tenth_area_is_retained() {
        // A disc is not taller than wide, so that rule is disabled here.
        let (w, h) = (200, 200);
        let r = (0.1 * (w * h) as f64 / std::f64::consts::PI).sqrt();
        let region = single_region(&disc_mask(w, h, 100.0, 100.0, r));
        let config = PbtSegConfig {
            require_taller_than_wide: false,
            ..PbtSegConfig::default()
        };
        assert!(rule_violations(&region, &config, (w, h)).is_empty());
        // A slightly taller ellipse of the same area passes the defaults.
        let tall = single_region(&ellipse_mask(w, h, 100.0, 100.0, r * 0.9, r / 0.9));
        assert!(passes_rules(&tall, &PbtSegConfig::default(), (w, h)));
    }

    #[test]
    fn single_pixel_is_rejected_for_area() {
        let m = BinaryMask::from_fn(50, 50, |x, y| x == 20 && y == 20);
        let region = single_region(&m);
        let failed = rule_violations(&region, &PbtSegConfig::default(), (50, 50));
        assert!(failed.contains(&Rule::AreaMin));
    }

    #[test]
    fn horizontal_band_is_rejected() {
        let m = BinaryMask::from_fn(100, 100, |_, y| (40..60).contains(&y));
        let region = single_region(&m);
        assert_eq!(region.bbox_width(), 100);
        assert_eq!(region.bbox_height(), 20);
        // 40 border pixels (two 20-pixel edges) out of a 236-pixel perimeter
        assert_eq!(region.border_contact, 40);
        assert_eq!(region.perimeter, 2 * 100 + 2 * 18);
        let failed = rule_violations(&region, &PbtSegConfig::default(), (100, 100));
        assert!(failed.contains(&Rule::TallerThanWide));
        assert!(failed.contains(&Rule::BorderContact));
    }

    #[test]
    fn pair_selection_one_per_half() {
        let a = fake_region(1, 500, 30.0);
        let b = fake_region(2, 400, 70.0);
        let (l, r) = select_lung_pair(&[a.clone(), b.clone()], (100, 100));
        assert_eq!(l, Some(a.clone()));
        assert_eq!(r, Some(b));
        let (l, r) = select_lung_pair(&[a.clone()], (100, 100));
        assert_eq!((l, r), (Some(a), None));
        assert_eq!(select_lung_pair(&[], (100, 100)), (None, None));
    }

    #[test]
    fn pair_selection_takes_two_largest() {
        let regions = [
            fake_region(1, 300, 50.0),
            fake_region(2, 500, 30.0),
            fake_region(3, 400, 70.0),
        ];
        let (l, r) = select_lung_pair(&regions, (100, 100));
        assert_eq!(l.unwrap().area, 500);
        assert_eq!(r.unwrap().area, 400);
    }

    #[test]
    fn pair_selection_same_side_keeps_larger() {
        let regions = [fake_region(1, 300, 20.0), fake_region(2, 500, 30.0)];
        let (l, r) = select_lung_pair(&regions, (100, 100));
        assert_eq!(l.unwrap().label, 2);
        assert!(r.is_none());
    }

    #[test]
    fn pair_selection_tie_breaks_by_centroid() {
        let regions = [
            fake_region(3, 400, 80.0),
            fake_region(1, 400, 60.0),
            fake_region(2, 400, 10.0),
        ];
        let (l, r) = select_lung_pair(&regions, (100, 100));
        assert_eq!(l.unwrap().label, 2);
        assert_eq!(r.unwrap().label, 1);
    }

    #[test]
    fn update_first_assignment_and_growth() {
        let (w, h) = (100, 100);
        let config = PbtSegConfig::default();
        let small = ellipse_mask(w, h, 30.0, 50.0, 8.0, 20.0);
        let big = ellipse_mask(w, h, 30.0, 50.0, 10.0, 25.0);
        let masks = LungMasks::empty(w, h);
        let (m1, d1) =
            update_masks(&masks, &single_region(&big), &big, Side::Left, &config).unwrap();
        assert_eq!(d1, UpdateDecision::Accepted);
        assert_eq!(m1.left, big);
        assert_eq!(m1.combined, big);
        let (m2, d2) =
            update_masks(&m1, &single_region(&small), &small, Side::Left, &config).unwrap();
        assert_eq!(d2, UpdateDecision::NotLarger);
        assert_eq!(m2, m1);
    }

    #[test]
    fn update_rejects_overlap_with_other_side() {
        // Two lungs merge into one blob at a high threshold; the merged blob
        // is larger than the right mask but covers the left one.
        let (w, h) = (100, 100);
        let config = PbtSegConfig {
            area_max: 0.6,
            ..PbtSegConfig::default()
        };
        let left = ellipse_mask(w, h, 30.0, 50.0, 10.0, 40.0);
        let right = ellipse_mask(w, h, 70.0, 50.0, 10.0, 40.0);
        let masks = LungMasks::from_sides(left.clone(), right.clone()).unwrap();
        let bridge = BinaryMask::from_fn(w, h, |x, y| (30..=70).contains(&x) && (45..55).contains(&y));
        let merged = left.union(&right).unwrap().union(&bridge).unwrap();
        let region = single_region(&merged);
        assert!(passes_rules(&region, &config, (w, h)));
        let (after, decision) = update_masks(&masks, &region, &merged, Side::Right, &config).unwrap();
        assert_eq!(decision, UpdateDecision::OverlapsOtherSide);
        assert_eq!(after, masks);
    }

    #[test]
    fn update_rejects_rule_failures() {
        let (w, h) = (100, 100);
        let config = PbtSegConfig::default();
        let wide = BinaryMask::from_fn(w, h, |x, y| (10..60).contains(&x) && (40..60).contains(&y));
        let (after, decision) =
            update_masks(&LungMasks::empty(w, h), &single_region(&wide), &wide, Side::Left, &config)
                .unwrap();
        assert_eq!(decision, UpdateDecision::FailsRules);
        assert!(after.is_empty());
    }

    #[test]
    fn constant_image_finds_no_lung() {
        let img = GrayImage::filled(64, 64, 0.6);
        assert!(matches!(
            segment_lungs(&img, &PbtSegConfig::default()),
            Err(Error::NoLungFound)
        ));
        let dark = GrayImage::filled(64, 64, 0.1);
        assert!(matches!(
            segment_lungs(&dark, &PbtSegConfig::default()),
            Err(Error::NoLungFound)
        ));
    }

    #[test]
    fn clean_two_ellipse_image_is_recovered() {
        let (w, h) = (128, 128);
        let left = ellipse_mask(w, h, 36.0, 64.0, 16.0, 36.0);
        let right = ellipse_mask(w, h, 92.0, 64.0, 16.0, 36.0);
        let img = GrayImage::from_fn(w, h, |x, y| {
            if left.get(x, y) || right.get(x, y) {
                0.3
            } else {
                0.8
            }
        });
        let (masks, trace) = segment_lungs_traced(&img, &PbtSegConfig::default()).unwrap();
        assert_eq!(masks.left, left);
        assert_eq!(masks.right, right);
        assert_eq!(trace.steps.len(), 13);
        // monotone growth along the sweep
        for pair in trace.steps.windows(2) {
            assert!(pair[1].left_area >= pair[0].left_area);
            assert!(pair[1].right_area >= pair[0].right_area);
        }
    }

    #[test]
    fn hole_fill_option() {
        let (w, h) = (128, 128);
        let left = ellipse_mask(w, h, 36.0, 64.0, 16.0, 36.0);
        let hole = ellipse_mask(w, h, 36.0, 64.0, 3.0, 3.0);
        let img = GrayImage::from_fn(w, h, |x, y| {
            if left.get(x, y) && !hole.get(x, y) {
                0.3
            } else {
                0.8
            }
        });
        let plain = segment_lungs(&img, &PbtSegConfig::default()).unwrap();
        assert_eq!(plain.left.count(), left.count() - hole.count());
        let filled = segment_lungs(
            &img,
            &PbtSegConfig {
                fill_holes: true,
                ..PbtSegConfig::default()
            },
        )
        .unwrap();
        assert_eq!(filled.left, left);
    }
}
