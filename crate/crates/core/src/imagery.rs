//! Grayscale image type, pixel-level composition, augmentation, and PGM I/O.
//!
//! [`GrayImage`] is the base representation for tactile images, contact depth
//! maps, and saliency maps: a row-major grid of intensities in `[0, 1]`.
//! Composite inputs are built with [`overlay`] (clamped pixel sum) and labels
//! with [`minmax_normalize`]. Storage is binary 8-bit PGM so fixtures can be
//! compared byte for byte.

use crate::error::{Error, Result};

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

/// A raw sensor image (marker pattern).
pub type TactileImage = GrayImage;
/// Per-pixel indentation depth of the sensor skin, in `[0, 1]`.
pub type DepthMap = GrayImage;
/// Per-pixel probability of belonging to the target feature.
pub type SaliencyMap = GrayImage;

/// Smallest legal image side.
pub const MIN_SIDE: usize = 8;

impl GrayImage {
    /// All-zeros image.
    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(
            width >= MIN_SIDE && height >= MIN_SIDE,
            "image sides must be at least {MIN_SIDE}"
        );
        GrayImage {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    /// Builds an image from row-major data, validating range and length.
    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width < MIN_SIDE || height < MIN_SIDE {
            return Err(Error::InvalidImage(format!(
                "sides must be >= {MIN_SIDE}, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "data length {} != {width}x{height}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v) || v.is_nan()) {
            return Err(Error::InvalidImage(format!("value {v} outside [0,1]")));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel, clamping to `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut img = GrayImage::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                img.data[y * width + x] = f(x, y).clamp(0.0, 1.0);
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Sets a pixel, clamping the value into `[0, 1]`.
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    pub fn pixels(&self) -> &[f32] {
        &self.data
    }

    pub fn same_shape(&self, other: &GrayImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn min_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64
    }

    /// Mean absolute difference against another image of the same shape.
    pub fn mean_abs_diff(&self, other: &GrayImage) -> f64 {
        assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f64::from(a - b).abs())
            .sum::<f64>()
            / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &GrayImage) -> f64 {
        assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f64::from(a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Right-angle rotation for augmentation. Counterclockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Rotation {
    None,
    Quarter,
    Half,
    ThreeQuarter,
}

/// Deterministic geometric transform parameters.
///
/// Applied in a fixed order: horizontal flip, vertical flip, rotation, then
/// translation. Pixels exposed by translation take the `fill` value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub hflip: bool,
    pub vflip: bool,
    pub rotation: Rotation,
    pub translation: (i32, i32),
    pub fill: f32,
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            hflip: false,
            vflip: false,
            rotation: Rotation::None,
            translation: (0, 0),
            fill: 0.0,
        }
    }

    /// Checks the translation bound (|dx|,|dy| <= width/4) and fill range.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let (dx, dy) = self.translation;
        let bx = (width / 4) as i32;
        let by = (height / 4) as i32;
        if dx.abs() > bx || dy.abs() > by {
            return Err(Error::InvalidParameter(format!(
                "translation ({dx},{dy}) exceeds bounds ({bx},{by})"
            )));
        }
        if !(0.0..=1.0).contains(&self.fill) {
            return Err(Error::InvalidParameter(format!(
                "fill {} outside [0,1]",
                self.fill
            )));
        }
        Ok(())
    }
}

/// Clamped pixel-by-pixel sum of two depth maps.
///
/// The sum saturates at 1.0 so the result stays a valid depth map.
pub fn overlay(target: &DepthMap, noise: &DepthMap) -> Result<DepthMap> {
    if !target.same_shape(noise) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", target.width, target.height),
            got: format!("{}x{}", noise.width, noise.height),
        });
    }
    let data = target
        .data
        .iter()
        .zip(&noise.data)
        .map(|(&a, &b)| (a + b).min(1.0))
        .collect();
    Ok(GrayImage {
        width: target.width,
        height: target.height,
        data,
    })
}

/// Linearly rescales a depth map so its values span exactly `[0, 1]`.
///
/// A constant input (no contrast, hence no salient contact) maps to all-zeros.
pub fn minmax_normalize(map: &DepthMap) -> SaliencyMap {
    let lo = map.min_value();
    let hi = map.max_value();
    let data = if hi > lo {
        let span = hi - lo;
        map.data.iter().map(|&v| (v - lo) / span).collect()
    } else {
        vec![0.0; map.data.len()]
    };
    GrayImage {
        width: map.width,
        height: map.height,
        data,
    }
}

/// Applies a validated geometric transform: flips, right-angle rotation, translation.
pub fn augment(img: &GrayImage, p: &AugmentParams) -> Result<GrayImage> {
    p.validate(img.width, img.height)?;
    let mut cur = img.clone();
    if p.hflip {
        cur = flip_horizontal(&cur);
    }
    if p.vflip {
        cur = flip_vertical(&cur);
    }
    cur = match p.rotation {
        Rotation::None => cur,
        Rotation::Quarter => rotate_quarter(&cur),
        Rotation::Half => rotate_quarter(&rotate_quarter(&cur)),
        Rotation::ThreeQuarter => rotate_quarter(&rotate_quarter(&rotate_quarter(&cur))),
    };
    Ok(translate(&cur, p.translation, p.fill))
}

pub fn flip_horizontal(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width, img.height);
    let mut out = GrayImage::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            out.data[y * w + x] = img.data[y * w + (w - 1 - x)];
        }
    }
    out
}

pub fn flip_vertical(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width, img.height);
    let mut out = GrayImage::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            out.data[y * w + x] = img.data[(h - 1 - y) * w + x];
        }
    }
    out
}

/// Counterclockwise quarter turn. A `w x h` image becomes `h x w`.
pub fn rotate_quarter(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width, img.height);
    let mut out = GrayImage {
        width: h,
        height: w,
        data: vec![0.0; w * h],
    };
    for y in 0..h {
        for x in 0..w {
            // (x, y) -> (y, w-1-x) in the rotated frame
            out.data[(w - 1 - x) * h + y] = img.data[y * w + x];
        }
    }
    out
}

fn translate(img: &GrayImage, (dx, dy): (i32, i32), fill: f32) -> GrayImage {
    let (w, h) = (img.width, img.height);
    let mut out = GrayImage {
        width: w,
        height: h,
        data: vec![fill; w * h],
    };
    for y in 0..h {
        let sy = y as i32 - dy;
        if sy < 0 || sy >= h as i32 {
            continue;
        }
        for x in 0..w {
            let sx = x as i32 - dx;
            if sx < 0 || sx >= w as i32 {
                continue;
            }
            out.data[y * w + x] = img.data[sy as usize * w + sx as usize];
        }
    }
    out
}

/// Encodes as binary 8-bit PGM (P5, maxval 255), quantizing with `round(255*v)`.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&v| (v * 255.0).round() as u8));
    out
}

/// Decodes a binary 8-bit PGM produced by [`encode_pgm`] (or any P5 with maxval 255).
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    fn skip_ws(bytes: &[u8], pos: &mut usize) {
        while *pos < bytes.len() {
            match bytes[*pos] {
                b' ' | b'\t' | b'\r' | b'\n' => *pos += 1,
                b'#' => {
                    while *pos < bytes.len() && bytes[*pos] != b'\n' {
                        *pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn read_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
        skip_ws(bytes, pos);
        let start = *pos;
        while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::MalformedPgm("expected integer".into()));
        }
        std::str::from_utf8(&bytes[start..*pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MalformedPgm("bad integer".into()))
    }

    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(Error::MalformedPgm("missing P5 magic".into()));
    }
    let mut pos = 2usize;
    let width = read_number(bytes, &mut pos)?;
    let height = read_number(bytes, &mut pos)?;
    let maxval = read_number(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(Error::MalformedPgm(format!("unsupported maxval {maxval}")));
    }
    // single whitespace byte separates header from payload
    if pos >= bytes.len() {
        return Err(Error::MalformedPgm("missing payload".into()));
    }
    pos += 1;
    let expected = width
        .checked_mul(height)
        .ok_or_else(|| Error::MalformedPgm("dimension overflow".into()))?;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(Error::MalformedPgm(format!(
            "truncated payload: {} of {expected} bytes",
            payload.len()
        )));
    }
    let data = payload[..expected]
        .iter()
        .map(|&b| f32::from(b) / 255.0)
        .collect();
    GrayImage::from_vec(width, height, data)
}
