//! Bilinear resampling with half-pixel-centre coordinates.
//!
//! Destination pixel `d` samples the source at `(d + 0.5) * in / out - 0.5`,
//! clamped to `[0, in - 1]`, so corner pixels of the output reproduce the
//! corner pixels of the input and constant images stay constant.

use super::raster::RasterImage;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn axis_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    let last = (input - 1) as f64;
    (0..output)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            Tap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

/// Resizes `img` to `height x width` with anisotropic bilinear interpolation.
/// Same-size requests return an exact copy.
pub fn resize_bilinear(img: &RasterImage, height: usize, width: usize) -> Result<RasterImage> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidInput(format!(
            "resize target must be non-zero, got {height}x{width}"
        )));
    }
    if img.dims() == (height, width) {
        return Ok(img.clone());
    }
    let rows = axis_taps(img.height(), height);
    let cols = axis_taps(img.width(), width);
    let src = img.data();
    let stride = img.width() * 3;
    let mut out = Vec::with_capacity(height * width * 3);
    for ry in &rows {
        let top = &src[ry.lo * stride..(ry.lo + 1) * stride];
        let bottom = &src[ry.hi * stride..(ry.hi + 1) * stride];
        let wy = ry.frac;
        for cx in &cols {
            let wx = cx.frac;
            for ch in 0..3 {
                let p00 = top[cx.lo * 3 + ch] as f64;
                let p01 = top[cx.hi * 3 + ch] as f64;
                let p10 = bottom[cx.lo * 3 + ch] as f64;
                let p11 = bottom[cx.hi * 3 + ch] as f64;
                let upper = (1.0 - wx) * p00 + wx * p01;
                let lower = (1.0 - wx) * p10 + wx * p11;
                out.push(((1.0 - wy) * upper + wy * lower) as f32);
            }
        }
    }
    Ok(RasterImage::from_parts(height, width, out))
}
