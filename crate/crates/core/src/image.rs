//! Grayscale intensity fields and binary masks.
//!
//! Both types are row-major and immutable once built; every operation in the
//! crate returns a fresh value.

use crate::error::{Error, Result};

/// A 2-D grayscale field with every sample finite and inside `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "expected {} pixels for {width}x{height}, got {}",
                width * height,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidImage(format!(
                "pixel {bad} has value {} outside [0, 1]",
                pixels[bad]
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image by evaluating `f(x, y)` and clamping into `[0, 1]`.
    /// Non-finite values become 0.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(clamp_unit(f(x, y)));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    /// Wraps already-clamped samples without re-validating them.
    pub(crate) fn from_raw(width: usize, height: usize, pixels: Vec<f64>) -> Self {
        debug_assert_eq!(pixels.len(), width * height);
        debug_assert!(pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        let pixels = self.pixels.iter().map(|&v| clamp_unit(f(v))).collect();
        Self::from_raw(self.width, self.height, pixels)
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    pub fn max_value(&self) -> f64 {
        self.pixels.iter().copied().fold(0.0, f64::max)
    }

    /// Pixels strictly above zero.
    pub fn support(&self) -> BinaryMask {
        BinaryMask::from_raw(
            self.width,
            self.height,
            self.pixels.iter().map(|&v| v > 0.0).collect(),
        )
    }

    /// Pixelwise product with a mask: values outside the mask become 0.
    pub fn masked(&self, mask: &BinaryMask) -> Result<Self> {
        ensure_same_dims(self.dims(), mask.dims())?;
        let pixels = self
            .pixels
            .iter()
            .zip(mask.bits())
            .map(|(&v, &b)| if b { v } else { 0.0 })
            .collect();
        Ok(Self::from_raw(self.width, self.height, pixels))
    }
}

/// A 2-D `{0, 1}` field.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if bits.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "expected {} bits for {width}x{height}, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Self::from_raw(width, height, bits))
    }

    /// Parses rows of `'0'`/`'1'` characters, handy for small fixtures.
    pub fn from_rows(rows: &[&str]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mut bits = Vec::with_capacity(width * height);
        for row in rows {
            if row.len() != width {
                return Err(Error::InvalidImage("ragged mask rows".into()));
            }
            for c in row.chars() {
                match c {
                    '0' => bits.push(false),
                    '1' => bits.push(true),
                    other => {
                        return Err(Error::InvalidImage(format!("bad mask character {other:?}")))
                    }
                }
            }
        }
        Self::new(width, height, bits)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self::from_raw(width, height, bits)
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self::from_fn(width, height, |_, _| false)
    }

    pub(crate) fn from_raw(width: usize, height: usize, bits: Vec<bool>) -> Self {
        debug_assert_eq!(bits.len(), width * height);
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Foreground coordinates in raster order.
    pub fn foreground(&self) -> Vec<(usize, usize)> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i % self.width, i / self.width))
            .collect()
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a && b)
    }

    /// Pixels set in `self` but not in `other`.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn intersection_count(&self, other: &Self) -> Result<usize> {
        ensure_same_dims(self.dims(), other.dims())?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count())
    }

    pub fn is_subset_of(&self, other: &Self) -> Result<bool> {
        ensure_same_dims(self.dims(), other.dims())?;
        Ok(self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b))
    }

    pub fn is_disjoint(&self, other: &Self) -> Result<bool> {
        Ok(self.intersection_count(other)? == 0)
    }

    /// Mean (x, y) of the foreground, or `None` for an empty mask.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for (x, y) in self.foreground() {
            sx += x as f64;
            sy += y as f64;
            n += 1;
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    /// Fills background pockets that cannot be reached from the image border.
    pub fn fill_holes(&self) -> Self {
        let (w, h) = self.dims();
        let mut outside = vec![false; w * h];
        let mut stack = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let on_border = x == 0 || y == 0 || x + 1 == w || y + 1 == h;
                if on_border && !self.bits[y * w + x] {
                    outside[y * w + x] = true;
                    stack.push((x, y));
                }
            }
        }
        while let Some((x, y)) = stack.pop() {
            let neighbors = [
                (x.wrapping_sub(1), y),
                (x + 1, y),
                (x, y.wrapping_sub(1)),
                (x, y + 1),
            ];
            for (nx, ny) in neighbors {
                if nx < w && ny < h {
                    let i = ny * w + nx;
                    if !self.bits[i] && !outside[i] {
                        outside[i] = true;
                        stack.push((nx, ny));
                    }
                }
            }
        }
        Self::from_raw(w, h, outside.into_iter().map(|o| !o).collect())
    }

    fn zip_with(&self, other: &Self, f: impl Fn(bool, bool) -> bool) -> Result<Self> {
        ensure_same_dims(self.dims(), other.dims())?;
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self::from_raw(self.width, self.height, bits))
    }
}

pub(crate) fn ensure_same_dims(left: (usize, usize), right: (usize, usize)) -> Result<()> {
    if left == right {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { left, right })
    }
}

#[inline]
pub(crate) fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Percentile of `values` with linear interpolation between order statistics
/// (rank `p * (n - 1)` in the sorted sequence).
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    percentile_sorted(&sorted, p)
}

pub(crate) fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    let rank = p * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Percentile stretch: maps the `lo_percentile` intensity to 0 and the
/// `hi_percentile` intensity to 1, clamping outside. A constant image maps to
/// all zeros.
pub fn normalize(image: &GrayImage, lo_percentile: f64, hi_percentile: f64) -> Result<GrayImage> {
    if !(0.0 <= lo_percentile && lo_percentile < hi_percentile && hi_percentile <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "normalization percentiles must satisfy 0 <= lo < hi <= 1, got ({lo_percentile}, {hi_percentile})"
        )));
    }
    let mut sorted = image.pixels.clone();
    sorted.sort_by(f64::total_cmp);
    let v_lo = percentile_sorted(&sorted, lo_percentile);
    let v_hi = percentile_sorted(&sorted, hi_percentile);
    let range = v_hi - v_lo;
    if range <= 0.0 {
        return Ok(GrayImage::zeros(image.width, image.height));
    }
    Ok(image.map(|v| (v - v_lo) / range))
}

/// Bit is set where the pixel is strictly below `t`.
pub fn threshold_below(image: &GrayImage, t: f64) -> BinaryMask {
    BinaryMask::from_raw(
        image.width,
        image.height,
        image.pixels.iter().map(|&v| v < t).collect(),
    )
}
