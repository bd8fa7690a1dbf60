//! Shape-preserving image enhancement operations.

use crate::raster::Raster;

use super::ToolError;

/// Factor applied by the brightness and contrast-increase tools.
pub const ENHANCE_FACTOR: f64 = 1.5;
/// Factor applied by the contrast-decrease tool.
pub const REDUCE_FACTOR: f64 = 0.5;
/// Pivot for contrast changes.
pub const CONTRAST_PIVOT: f64 = 128.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContrastDirection {
    Increase,
    Decrease,
}

#[inline]
fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn map_samples(img: &Raster, f: impl Fn(u8) -> u8) -> Raster {
    let lut: Vec<u8> = (0..=255u8).map(&f).collect();
    img.with_data(img.data().iter().map(|&v| lut[v as usize]).collect())
}

fn require_min_size(img: &Raster, min: usize) -> Result<(), ToolError> {
    if img.width() < min || img.height() < min {
        return Err(ToolError::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            min,
        });
    }
    Ok(())
}

/// `v → clamp(round(1.5 v))` on every channel.
pub fn adjust_brightness(img: &Raster) -> Raster {
    map_samples(img, |v| clamp_u8(ENHANCE_FACTOR * v as f64))
}

/// `v → clamp(round(128 + f (v − 128)))` with `f` = 1.5 or 0.5.
pub fn adjust_contrast(img: &Raster, direction: ContrastDirection) -> Raster {
    let f = match direction {
        ContrastDirection::Increase => ENHANCE_FACTOR,
        ContrastDirection::Decrease => REDUCE_FACTOR,
    };
    map_samples(img, |v| clamp_u8(CONTRAST_PIVOT + f * (v as f64 - CONTRAST_PIVOT)))
}

/// Clamp-to-edge sample.
#[inline]
fn at(img: &Raster, x: isize, y: isize, c: usize) -> f64 {
    let x = x.clamp(0, img.width() as isize - 1) as usize;
    let y = y.clamp(0, img.height() as isize - 1) as usize;
    img.get(x, y, c) as f64
}

/// 3×3 sharpening kernel `[[0,−1,0],[−1,5,−1],[0,−1,0]]` with replicated borders.
pub fn sharpen(img: &Raster) -> Result<Raster, ToolError> {
    require_min_size(img, 3)?;
    Raster::from_fn(img.width(), img.height(), img.channels(), |x, y, c| {
        let (x, y) = (x as isize, y as isize);
        let v = 5.0 * at(img, x, y, c)
            - at(img, x - 1, y, c)
            - at(img, x + 1, y, c)
            - at(img, x, y - 1, c)
            - at(img, x, y + 1, c);
        clamp_u8(v)
    })
    .map_err(ToolError::from)
}

/// Sobel gradient magnitude of the luminance, rescaled so the maximum is 255
/// and replicated across the input's channels.
pub fn edge_detect(img: &Raster) -> Result<Raster, ToolError> {
    require_min_size(img, 3)?;
    let (w, h) = (img.width(), img.height());
    let lum = img.luminance();
    let l = |x: isize, y: isize| {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        lum[y * w + x]
    };
    let mut mag = vec![0.0f64; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (l(x + 1, y - 1) + 2.0 * l(x + 1, y) + l(x + 1, y + 1))
                - (l(x - 1, y - 1) + 2.0 * l(x - 1, y) + l(x - 1, y + 1));
            let gy = (l(x - 1, y + 1) + 2.0 * l(x, y + 1) + l(x + 1, y + 1))
                - (l(x - 1, y - 1) + 2.0 * l(x, y - 1) + l(x + 1, y - 1));
            mag[y as usize * w + x as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    let max = mag.iter().cloned().fold(0.0, f64::max);
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    Raster::from_fn(w, h, img.channels(), |x, y, _| clamp_u8(mag[y * w + x] * scale)).map_err(ToolError::from)
}

/// Histogram equalization of the luminance channel via the normalized CDF.
///
/// Gray images are remapped directly. For colour images each pixel's channels
/// are scaled by the ratio of equalized to original luminance; black pixels take
/// the equalized luminance as a gray value. Images with a single luminance level
/// are returned unchanged.
pub fn histogram_equalize(img: &Raster) -> Raster {
    let lum = img.luminance();
    let levels: Vec<usize> = lum.iter().map(|&y| y.round().clamp(0.0, 255.0) as usize).collect();
    let mut hist = [0usize; 256];
    for &l in &levels {
        hist[l] += 1;
    }
    let total = levels.len() as f64;
    let mut cdf = [0.0f64; 256];
    let mut acc = 0usize;
    for (i, &count) in hist.iter().enumerate() {
        acc += count;
        cdf[i] = acc as f64 / total;
    }
    let cdf_min = hist
        .iter()
        .position(|&c| c > 0)
        .map(|i| cdf[i])
        .unwrap_or(1.0);
    if 1.0 - cdf_min <= 0.0 {
        return img.clone();
    }
    let map: Vec<f64> = cdf
        .iter()
        .map(|&c| (255.0 * (c - cdf_min) / (1.0 - cdf_min)).round().clamp(0.0, 255.0))
        .collect();

    if img.channels() == 1 {
        return img.with_data(levels.iter().map(|&l| map[l] as u8).collect());
    }
    let mut out = Vec::with_capacity(img.data().len());
    for (px, (&y, &l)) in img.data().chunks_exact(3).zip(lum.iter().zip(&levels)) {
        let target = map[l];
        if y <= 0.0 {
            out.extend_from_slice(&[target as u8; 3]);
        } else {
            let ratio = target / y;
            out.extend(px.iter().map(|&v| clamp_u8(v as f64 * ratio)));
        }
    }
    img.with_data(out)
}
