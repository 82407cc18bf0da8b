//! Connected-component labeling with per-region shape statistics.

use serde::{Deserialize, Serialize};

use crate::image::BinaryMask;

/// Which neighbours count as connected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    /// N, S, E and W.
    Four,
    /// All eight surrounding pixels.
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(format!("connectivity must be 4 or 8, got {other}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

impl Connectivity {
    fn backward_offsets(self) -> &'static [(isize, isize)] {
        // Neighbours already visited in a raster scan.
        match self {
            Connectivity::Four => &[(-1, 0), (0, -1)],
            Connectivity::Eight => &[(-1, 0), (-1, -1), (0, -1), (1, -1)],
        }
    }
}

/// One connected foreground component and its geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    /// 1-based label, assigned in raster order of each component's first pixel.
    pub label: u32,
    pub area: usize,
    /// Inclusive `(min_x, min_y, max_x, max_y)`.
    pub bbox: (usize, usize, usize, usize),
    pub centroid: (f64, f64),
    /// Foreground pixels with at least one 4-neighbour that is background or
    /// outside the image.
    pub perimeter: usize,
    /// Foreground pixels lying on the outermost image row or column.
    pub border_contact: usize,
    /// `4 * pi * area / perimeter^2`.
    pub circularity: f64,
}

impl Region {
    pub fn bbox_width(&self) -> usize {
        self.bbox.2 - self.bbox.0 + 1
    }

    pub fn bbox_height(&self) -> usize {
        self.bbox.3 - self.bbox.1 + 1
    }
}

/// A label image plus the statistics of every labelled region.
#[derive(Debug, Clone)]
pub struct Labeling {
    width: usize,
    height: usize,
    /// 0 for background, otherwise the region label.
    labels: Vec<u32>,
    regions: Vec<Region>,
}

impl Labeling {
    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn into_regions(self) -> Vec<Region> {
        self.regions
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn region_mask(&self, label: u32) -> BinaryMask {
        BinaryMask::from_raw(
            self.width,
            self.height,
            self.labels.iter().map(|&l| l == label).collect(),
        )
    }
}

pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Vec<Region> {
    label_components(mask, connectivity).into_regions()
}

/// Two-pass union-find labeling.
pub fn label_components(mask: &BinaryMask, connectivity: Connectivity) -> Labeling {
    let (w, h) = mask.dims();
    let bits = mask.bits();
    let mut provisional = vec![0u32; w * h];
    // parent[0] is the background sentinel
    let mut parent: Vec<u32> = vec![0];

    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !bits[i] {
                continue;
            }
            let mut current = 0u32;
            for &(dx, dy) in connectivity.backward_offsets() {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx < 0 || ny < 0 || nx >= w as isize {
                    continue;
                }
                let n = provisional[ny as usize * w + nx as usize];
                if n == 0 {
                    continue;
                }
                if current == 0 {
                    current = find(&mut parent, n);
                } else {
                    current = union(&mut parent, current, n);
                }
            }
            if current == 0 {
                current = parent.len() as u32;
                parent.push(current);
            }
            provisional[i] = current;
        }
    }

    // Relabel roots in raster order of first appearance.
    let mut final_of_root = vec![0u32; parent.len()];
    let mut next = 0u32;
    let mut labels = vec![0u32; w * h];
    for i in 0..w * h {
        let p = provisional[i];
        if p == 0 {
            continue;
        }
        let root = find(&mut parent, p) as usize;
        if final_of_root[root] == 0 {
            next += 1;
            final_of_root[root] = next;
        }
        labels[i] = final_of_root[root];
    }

    let regions = region_stats(&labels, w, h, next as usize);
    Labeling {
        width: w,
        height: h,
        labels,
        regions,
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let grand = parent[parent[x as usize] as usize];
        parent[x as usize] = grand;
        x = grand;
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) -> u32 {
    let ra = find(parent, a);
    let rb = find(parent, b);
    let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
    parent[hi as usize] = lo;
    lo
}

struct Accum {
    area: usize,
    min_x: usize,
    min_y: usize,
    max_x: usize,
    max_y: usize,
    sum_x: f64,
    sum_y: f64,
    perimeter: usize,
    border: usize,
}

fn region_stats(labels: &[u32], w: usize, h: usize, count: usize) -> Vec<Region> {
    let mut acc: Vec<Accum> = (0..count)
        .map(|_| Accum {
            area: 0,
            min_x: usize::MAX,
            min_y: usize::MAX,
            max_x: 0,
            max_y: 0,
            sum_x: 0.0,
            sum_y: 0.0,
            perimeter: 0,
            border: 0,
        })
        .collect();

    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            if l == 0 {
                continue;
            }
            let a = &mut acc[l as usize - 1];
            a.area += 1;
            a.min_x = a.min_x.min(x);
            a.min_y = a.min_y.min(y);
            a.max_x = a.max_x.max(x);
            a.max_y = a.max_y.max(y);
            a.sum_x += x as f64;
            a.sum_y += y as f64;
            let on_border = x == 0 || y == 0 || x + 1 == w || y + 1 == h;
            if on_border {
                a.border += 1;
                a.perimeter += 1;
            } else {
                let open = labels[y * w + x - 1] != l
                    || labels[y * w + x + 1] != l
                    || labels[(y - 1) * w + x] != l
                    || labels[(y + 1) * w + x] != l;
                if open {
                    a.perimeter += 1;
                }
            }
        }
    }

    acc.into_iter()
        .enumerate()
        .map(|(i, a)| {
            let area = a.area;
            Region {
                label: i as u32 + 1,
                area,
                bbox: (a.min_x, a.min_y, a.max_x, a.max_y),
                centroid: (a.sum_x / area as f64, a.sum_y / area as f64),
                perimeter: a.perimeter,
                border_contact: a.border,
                circularity: 4.0 * std::f64::consts::PI * area as f64
                    / (a.perimeter as f64 * a.perimeter as f64),
            }
        })
        .collect()
}
