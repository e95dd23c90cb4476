//! 8-bit PNG and binary PPM images mapped to and from [0, 1] floats.

use std::path::Path;

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::image::Image;

fn format_for(path: &Path) -> Result<ImageFormat> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => Ok(ImageFormat::Png),
        Some("ppm") | Some("pnm") => Ok(ImageFormat::Pnm),
        _ => Err(Error::UnsupportedImage(path.to_path_buf())),
    }
}

/// Maps a [0, 1] value to 8 bits, rounding half up.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn from_rgb8(rgb: &RgbImage) -> Image {
    let (w, h) = rgb.dimensions();
    let data = rgb.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
    Image::from_raw(w as usize, h as usize, data).expect("buffer size matches dimensions")
}

pub fn to_rgb8(img: &Image) -> RgbImage {
    let bytes = img.data.iter().map(|&v| quantize(v)).collect();
    RgbImage::from_raw(img.width as u32, img.height as u32, bytes).expect("buffer size matches dimensions")
}

/// Reads an 8-bit PNG or binary PPM; other pixel layouts are converted to RGB.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let format = format_for(path)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = image::load_from_memory_with_format(&bytes, format)?;
    Ok(from_rgb8(&decoded.to_rgb8()))
}

pub fn write_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = format_for(path)?;
    let mut buf = std::io::Cursor::new(Vec::new());
    to_rgb8(img).write_to(&mut buf, format)?;
    std::fs::write(path, buf.into_inner()).map_err(|e| Error::io(path, e))
}
