//! 8-bit image files to and from [`Frame`]s.
//!
//! PNG and binary PGM/PPM are supported; grayscale files become one-channel
//! frames and everything else is read as RGB.

use std::path::Path;

use aba_core::Frame;
use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};

/// `v / 255`.
pub fn from_u8(v: u8) -> f64 {
    f64::from(v) / 255.0
}

/// `round(v · 255)` with halves away from zero, after clamping to `[0, 1]`.
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn read_image(path: &Path) -> Result<Frame> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|source| Error::Image { path: path.into(), source })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let frame = match img {
        DynamicImage::ImageLuma8(g) => Frame::new(1, h, w, g.as_raw().iter().copied().map(from_u8).collect()),
        other => {
            let rgb = other.to_rgb8();
            let raw = rgb.as_raw();
            let mut data = vec![0.0; 3 * w * h];
            for (i, px) in raw.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    data[c * w * h + i] = from_u8(px[c]);
                }
            }
            Frame::new(3, h, w, data)
        }
    };
    frame.map_err(|e| Error::format(path, None, e.to_string()))
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("png") => Ok(ImageFormat::Png),
        Some("pgm") | Some("ppm") | Some("pnm") => Ok(ImageFormat::Pnm),
        _ => Err(Error::Usage(format!("{}: output must end in .png, .pgm or .ppm", path.display()))),
    }
}

/// Writes one- or three-channel frames. A `.ppm` target always gets RGB and
/// a `.pgm` target gray.
pub fn write_image(path: &Path, frame: &Frame) -> Result<()> {
    let format = format_for(path)?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let (w, h) = (frame.width(), frame.height());
    let gray = match ext.as_str() {
        "pgm" => true,
        "ppm" => false,
        _ => frame.channels() == 1,
    };
    let img = if gray {
        let g = if frame.channels() == 1 { frame.clone() } else { frame.to_gray() };
        DynamicImage::ImageLuma8(GrayImage::from_raw(w as u32, h as u32, g.data().iter().map(|&v| to_u8(v)).collect()).expect("buffer size matches"))
    } else {
        let plane = w * h;
        let mut raw = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            for c in 0..3 {
                let ch = if frame.channels() == 1 { 0 } else { c };
                raw.push(to_u8(frame.data()[ch * plane + i]));
            }
        }
        DynamicImage::ImageRgb8(RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer size matches"))
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, format).map_err(|source| Error::Image { path: path.into(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rounds_half_away() {
        assert_eq!(to_u8(0.5), 128); // 127.5
        assert_eq!(to_u8(-3.0), 0);
        assert_eq!(to_u8(7.0), 255);
        for v in 0..=255u8 {
            assert_eq!(to_u8(from_u8(v)), v);
        }
    }
}
