//! Thumbnail decoding and encoding.
//!
//! Ingestion contract: thumbnails arrive as PNG or binary PPM (P6) rasters
//! exported upstream from the slide container. Exporters should write the
//! container's auxiliary thumbnail when present, otherwise the lowest pyramid
//! level resized so that its longest side is 1920 px. WSI containers are
//! never opened here.

use std::path::Path;

use image::{ImageFormat, ImageReader, Rgb, RgbImage};

use super::raster::RasterImage;
use crate::error::{Error, Result};

/// Longest side, in pixels, an exporter should use when no auxiliary thumbnail exists.
pub const EXPORT_LONGEST_SIDE: usize = 1920;

/// Decodes a PNG or P6 PPM file into a `[0, 1]` raster. 8-bit sources are divided by 255.
pub fn load_thumbnail(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let decode_err = |message: String| Error::Decode {
        path: path.to_path_buf(),
        message,
    };
    let reader = ImageReader::open(path)?
        .with_guessed_format()
        .map_err(|e| decode_err(e.to_string()))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        other => return Err(decode_err(format!("unsupported format {other:?}"))),
    }
    let decoded = reader.decode().map_err(|e| decode_err(e.to_string()))?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let data = match decoded {
        image::DynamicImage::ImageRgb8(_) | image::DynamicImage::ImageRgba8(_) | image::DynamicImage::ImageLuma8(_) | image::DynamicImage::ImageLumaA8(_) => decoded
            .to_rgb8()
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / 255.0)
            .collect(),
        other => other.to_rgb32f().into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    };
    RasterImage::new(height, width, data).map_err(|e| decode_err(e.to_string()))
}

fn to_rgb8(img: &RasterImage) -> RgbImage {
    let mut out = RgbImage::new(img.width() as u32, img.height() as u32);
    for (r, c, px) in out.enumerate_pixels_mut().map(|(x, y, p)| (y as usize, x as usize, p)) {
        let v = img.pixel(r, c);
        *px = Rgb(v.map(|x| (x * 255.0).round() as u8));
    }
    out
}

/// Writes an 8-bit PNG.
pub fn save_png(img: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    to_rgb8(img)
        .save_with_format(path.as_ref(), ImageFormat::Png)
        .map_err(|e| Error::Decode {
            path: path.as_ref().to_path_buf(),
            message: e.to_string(),
        })
}

/// Writes a binary P6 PPM with maxval 255.
pub fn save_ppm(img: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    bytes.extend(to_rgb8(img).into_raw());
    std::fs::write(path, bytes)?;
    Ok(())
}
