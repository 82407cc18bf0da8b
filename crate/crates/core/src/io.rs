//! PNG / PGM reading and writing.
//!
//! 8-bit sources are scaled by 1/255 and 16-bit sources by 1/65535. Masks are
//! written as 8-bit `{0, 255}` and read back as "nonzero is foreground".

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, GrayImage};

fn image_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    Ok(dynamic_to_gray(&img))
}

fn dynamic_to_gray(img: &DynamicImage) -> GrayImage {
    match img {
        DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            let px = buf.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
            GrayImage::from_raw(w as usize, h as usize, px)
        }
        other => {
            let buf = other.to_luma16();
            let (w, h) = buf.dimensions();
            let px = buf.as_raw().iter().map(|&v| v as f64 / 65535.0).collect();
            GrayImage::from_raw(w as usize, h as usize, px)
        }
    }
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma8();
    let (w, h) = img.dimensions();
    BinaryMask::new(
        w as usize,
        h as usize,
        img.as_raw().iter().map(|&v| v > 0).collect(),
    )
}

pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn to_u16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

pub fn save_gray8(image: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = image.dims();
    let data: Vec<u8> = image.pixels().iter().map(|&v| to_u8(v)).collect();
    let buf: ImageBuffer<Luma<u8>, _> =
        ImageBuffer::from_raw(w as u32, h as u32, data).expect("buffer size matches dims");
    buf.save(path).map_err(|e| image_err(path, e))
}

pub fn save_gray16(image: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = image.dims();
    let data: Vec<u16> = image.pixels().iter().map(|&v| to_u16(v)).collect();
    let buf: ImageBuffer<Luma<u16>, _> =
        ImageBuffer::from_raw(w as u32, h as u32, data).expect("buffer size matches dims");
    buf.save(path).map_err(|e| image_err(path, e))
}

pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = mask.dims();
    let data: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let buf: ImageBuffer<Luma<u8>, _> =
        ImageBuffer::from_raw(w as u32, h as u32, data).expect("buffer size matches dims");
    buf.save(path).map_err(|e| image_err(path, e))
}

/// RGB preview of `image` with the mask boundary drawn in `color`.
pub fn save_overlay(
    image: &GrayImage,
    mask: &BinaryMask,
    color: [u8; 3],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = image.dims();
    crate::image::ensure_same_dims(image.dims(), mask.dims())?;
    let buf = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let inside = mask.get(x, y);
        let edge = inside
            && (x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !mask.get(x - 1, y)
                || !mask.get(x + 1, y)
                || !mask.get(x, y - 1)
                || !mask.get(x, y + 1));
        if edge {
            Rgb(color)
        } else {
            let g = to_u8(image.get(x, y));
            Rgb([g, g, g])
        }
    });
    buf.save(path).map_err(|e| image_err(path, e))
}
