//! 8-bit PNG for RGB images and single-channel masks.

use std::path::Path;

use image::{DynamicImage, ImageFormat};

use crate::error::{Error, Result};
use crate::gauss::Image;

use super::{atomic_write, read_bytes};

const IEND: [u8; 12] = [0, 0, 0, 0, b'I', b'E', b'N', b'D', 0xAE, 0x42, 0x60, 0x82];

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let raw: Vec<u8> = img.pixels.iter().map(|&v| quantize(v)).collect();
    let (w, h) = (img.width as u32, img.height as u32);
    let dynamic = match img.channels {
        1 => image::GrayImage::from_raw(w, h, raw).map(DynamicImage::ImageLuma8),
        3 => image::RgbImage::from_raw(w, h, raw).map(DynamicImage::ImageRgb8),
        c => return Err(Error::DimensionMismatch(format!("cannot encode {c}-channel image as PNG"))),
    }
    .ok_or_else(|| Error::DimensionMismatch("pixel buffer does not match the image size".into()))?;
    let mut out = std::io::Cursor::new(Vec::new());
    dynamic
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::InvalidConfig(format!("png encoding failed: {e}")))?;
    Ok(out.into_inner())
}

/// Grey PNGs decode to one channel; everything else to RGB.
pub fn decode_png(path: &Path, bytes: &[u8]) -> Result<Image> {
    if !bytes.ends_with(&IEND) {
        return Err(Error::malformed(path, "missing IEND chunk (truncated?)"));
    }
    let decoded =
        image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| Error::malformed(path, e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, raw) = match decoded {
        DynamicImage::ImageLuma8(g) => (1, g.into_raw()),
        other => (3, other.to_rgb8().into_raw()),
    };
    Image::from_pixels(w, h, channels, raw.into_iter().map(|b| b as f64 / 255.0).collect())
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    atomic_write(path, &encode_png(img)?)
}

pub fn read_image(path: &Path) -> Result<Image> {
    decode_png(path, &read_bytes(path)?)
}
