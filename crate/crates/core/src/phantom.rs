//! Procedural two-lung test images with exact ground-truth masks.
//!
//! Each lung is an upright ellipse on a bright background. Intensity inside
//! an ellipse rises quadratically from a dark core to a brighter rim, so low
//! thresholds capture only the core and the full field appears gradually.

use serde::{Deserialize, Serialize};

use crate::image::{BinaryMask, GrayImage};
use crate::rng::RandomStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    /// Horizontal semi-axis.
    pub rx: f64,
    /// Vertical semi-axis.
    pub ry: f64,
}

impl Ellipse {
    /// Squared normalized radius of `(x, y)`; `<= 1` means inside.
    pub fn radius2(&self, x: f64, y: f64) -> f64 {
        let dx = (x - self.cx) / self.rx;
        let dy = (y - self.cy) / self.ry;
        dx * dx + dy * dy
    }

    pub fn mask(&self, width: usize, height: usize) -> BinaryMask {
        BinaryMask::from_fn(width, height, |x, y| self.radius2(x as f64, y as f64) <= 1.0)
    }
}

/// A lung ellipse and its core/rim intensities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LungShape {
    pub ellipse: Ellipse,
    pub core: f64,
    pub rim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: GrayImage,
    pub left: BinaryMask,
    pub right: BinaryMask,
}

impl Phantom {
    pub fn lungs(&self) -> BinaryMask {
        self.left.union(&self.right).expect("same dims")
    }
}

/// Background level of every phantom.
pub const BACKGROUND: f64 = 0.8;

/// Renders lungs over the background. `shadow`, if given, is a rectangle
/// `(x0, y0, x1, y1)` (exclusive upper bounds) drawn at `shadow_level`
/// underneath the lungs.
pub fn render(
    width: usize,
    height: usize,
    left: LungShape,
    right: LungShape,
    shadow: Option<((usize, usize, usize, usize), f64)>,
    noise_sigma: f64,
    rng: &mut RandomStream,
) -> Phantom {
    let image = GrayImage::from_fn(width, height, |x, y| {
        let (fx, fy) = (x as f64, y as f64);
        let mut v = BACKGROUND;
        if let Some(((x0, y0, x1, y1), level)) = shadow {
            if (x0..x1).contains(&x) && (y0..y1).contains(&y) {
                v = level;
            }
        }
        for lung in [left, right] {
            let r2 = lung.ellipse.radius2(fx, fy);
            if r2 <= 1.0 {
                v = lung.core + (lung.rim - lung.core) * r2;
            }
        }
        v + noise_sigma * rng.normal()
    });
    Phantom {
        image,
        left: left.ellipse.mask(width, height),
        right: right.ellipse.mask(width, height),
    }
}

/// Two jittered ellipses, one per half, dark core 0.2 rising to 0.35.
pub fn two_lung(size: usize, rng: &mut RandomStream) -> Phantom {
    let s = size as f64;
    let mut lung = |cx: f64| {
        let ellipse = Ellipse {
            cx: s * (cx + rng.uniform(-0.03, 0.03)),
            cy: s * (0.5 + rng.uniform(-0.04, 0.04)),
            rx: s * rng.uniform(0.10, 0.14),
            ry: s * rng.uniform(0.25, 0.32),
        };
        LungShape {
            ellipse,
            core: 0.2,
            rim: 0.35,
        }
    };
    let left = lung(0.25);
    let right = lung(0.75);
    render(size, size, left, right, None, 0.01, rng)
}

/// A phantom on which no single global threshold segments both lungs.
///
/// The left lung is dark (0.12 to 0.28) and touches a lateral soft-tissue
/// shadow at 0.32 that runs the full image height along the left border. The
/// right lung is brighter (0.22 to 0.45). Any threshold high enough to fill the
/// right lung also floods the shadow; any threshold below the shadow leaves
/// the right lung incomplete.
pub fn merge_inducing(size: usize, rng: &mut RandomStream) -> Phantom {
    let s = size as f64;
    let left = Ellipse {
        cx: s * (0.28 + rng.uniform(-0.02, 0.02)),
        cy: s * (0.5 + rng.uniform(-0.03, 0.03)),
        rx: s * rng.uniform(0.10, 0.13),
        ry: s * rng.uniform(0.26, 0.31),
    };
    let right = Ellipse {
        cx: s * (0.74 + rng.uniform(-0.02, 0.02)),
        cy: s * (0.5 + rng.uniform(-0.03, 0.03)),
        rx: s * rng.uniform(0.10, 0.13),
        ry: s * rng.uniform(0.26, 0.31),
    };
    // Shadow reaches two pixels into the left lung so the two always touch.
    let shadow_right = (left.cx - left.rx).ceil() as usize + 2;
    render(
        size,
        size,
        LungShape {
            ellipse: left,
            core: 0.12,
            rim: 0.28,
        },
        LungShape {
            ellipse: right,
            core: 0.22,
            rim: 0.45,
        },
        Some(((0, 0, shadow_right, size), 0.32)),
        0.005,
        rng,
    )
}
