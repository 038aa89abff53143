//! Image containers and the pure pixel operations of the preprocessing
//! pipeline.
//!
//! All grids are row-major. Pixel value zero is background everywhere: a
//! depth of 0 is "no reading", an intensity of 0 is masked out and a binary
//! 0 is outside the mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value range an [`IntensityImage`] is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntensityDomain {
    /// Whole numbers in `[0, 255]`.
    Integer,
    /// Reals in `[0, 1]`.
    Unit,
}

impl IntensityDomain {
    fn max(self) -> f64 {
        match self {
            IntensityDomain::Integer => 255.0,
            IntensityDomain::Unit => 1.0,
        }
    }
}

/// Common view over the three image kinds so that geometric operations
/// (centering, resizing) are written once.
pub trait Raster: Sized {
    type Pixel: Copy + PartialEq;

    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn pixels(&self) -> &[Self::Pixel];
    fn background(&self) -> Self::Pixel;
    fn is_foreground(&self, p: Self::Pixel) -> bool;
    fn to_value(&self, p: Self::Pixel) -> f64;
    fn from_value(&self, v: f64) -> Self::Pixel;

    /// Builds an image of the same kind (and domain) from new pixels.
    /// `data.len()` must equal `width * height`.
    fn rebuild(&self, width: usize, height: usize, data: Vec<Self::Pixel>) -> Self;

    fn len(&self) -> usize {
        self.width() * self.height()
    }

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn at(&self, x: usize, y: usize) -> Self::Pixel {
        self.pixels()[y * self.width() + x]
    }
}

fn check_len(width: usize, height: usize, len: usize) -> Result<()> {
    if width.checked_mul(height) != Some(len) {
        return Err(Error::InvalidImage(format!(
            "data length {len} does not match {width}x{height}"
        )));
    }
    Ok(())
}

/// Millimeter depth map; 0 marks pixels with no reading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    data: Vec<u16>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, data: Vec<u16>) -> Result<Self> {
        check_len(width, height, data.len())?;
        Ok(DepthImage {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        DepthImage {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u16> {
        self.data
    }
}

impl Raster for DepthImage {
    type Pixel = u16;

    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn pixels(&self) -> &[u16] {
        &self.data
    }
    fn background(&self) -> u16 {
        0
    }
    fn is_foreground(&self, p: u16) -> bool {
        p > 0
    }
    fn to_value(&self, p: u16) -> f64 {
        p as f64
    }
    fn from_value(&self, v: f64) -> u16 {
        v.round().clamp(0.0, u16::MAX as f64) as u16
    }
    fn rebuild(&self, width: usize, height: usize, data: Vec<u16>) -> Self {
        debug_assert_eq!(width * height, data.len());
        DepthImage {
            width,
            height,
            data,
        }
    }
}

/// Grayscale appearance channel.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
    domain: IntensityDomain,
}

impl IntensityImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>, domain: IntensityDomain) -> Result<Self> {
        check_len(width, height, data.len())?;
        let max = domain.max();
        if let Some(bad) = data.iter().find(|v| !(0.0..=max).contains(*v)) {
            return Err(Error::InvalidImage(format!(
                "intensity {bad} outside [0, {max}]"
            )));
        }
        if domain == IntensityDomain::Integer && data.iter().any(|v| v.fract() != 0.0) {
            return Err(Error::InvalidImage(
                "integer-domain intensity holds a fractional value".into(),
            ));
        }
        Ok(IntensityImage {
            width,
            height,
            data,
            domain,
        })
    }

    pub fn from_u8(width: usize, height: usize, data: &[u8]) -> Result<Self> {
        Self::new(
            width,
            height,
            data.iter().map(|&v| v as f64).collect(),
            IntensityDomain::Integer,
        )
    }

    pub fn zeros(width: usize, height: usize, domain: IntensityDomain) -> Self {
        IntensityImage {
            width,
            height,
            data: vec![0.0; width * height],
            domain,
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn domain(&self) -> IntensityDomain {
        self.domain
    }

    /// Integer-domain pixels as bytes. Unit-domain images are scaled by 255.
    pub fn to_u8(&self) -> Vec<u8> {
        let scale = 255.0 / self.domain.max();
        self.data
            .iter()
            .map(|&v| (v * scale).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

impl Raster for IntensityImage {
    type Pixel = f64;

    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn pixels(&self) -> &[f64] {
        &self.data
    }
    fn background(&self) -> f64 {
        0.0
    }
    fn is_foreground(&self, p: f64) -> bool {
        p > 0.0
    }
    fn to_value(&self, p: f64) -> f64 {
        p
    }
    fn from_value(&self, v: f64) -> f64 {
        let v = v.clamp(0.0, self.domain.max());
        match self.domain {
            IntensityDomain::Integer => v.round(),
            IntensityDomain::Unit => v,
        }
    }
    fn rebuild(&self, width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(width * height, data.len());
        IntensityImage {
            width,
            height,
            data,
            domain: self.domain,
        }
    }
}

/// A {0,1} image: masks and depth layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_len(width, height, data.len())?;
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidImage("binary image holds a value other than 0/1".into()));
        }
        Ok(BinaryImage {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        BinaryImage {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }
}

impl Raster for BinaryImage {
    type Pixel = u8;

    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn pixels(&self) -> &[u8] {
        &self.data
    }
    fn background(&self) -> u8 {
        0
    }
    fn is_foreground(&self, p: u8) -> bool {
        p > 0
    }
    fn to_value(&self, p: u8) -> f64 {
        p as f64
    }
    fn from_value(&self, v: f64) -> u8 {
        u8::from(v >= 0.5)
    }
    fn rebuild(&self, width: usize, height: usize, data: Vec<u8>) -> Self {
        debug_assert_eq!(width * height, data.len());
        BinaryImage {
            width,
            height,
            data,
        }
    }
}

/// Maps mask coordinates from the depth camera frame into the intensity
/// camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskAlignment {
    pub scale_x: f64,
    pub scale_y: f64,
    pub offset_x: f64,
    pub offset_y: f64,
}

impl MaskAlignment {
    pub const IDENTITY: MaskAlignment = MaskAlignment {
        scale_x: 1.0,
        scale_y: 1.0,
        offset_x: 0.0,
        offset_y: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.scale_x > 0.0 && self.scale_y > 0.0) {
            return Err(Error::Config(format!(
                "mask alignment scales must be positive, got ({}, {})",
                self.scale_x, self.scale_y
            )));
        }
        if !(self.offset_x.is_finite() && self.offset_y.is_finite() && self.scale_x.is_finite() && self.scale_y.is_finite()) {
            return Err(Error::Config("mask alignment must be finite".into()));
        }
        Ok(())
    }
}

impl Default for MaskAlignment {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Interpolation used by [`resize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMode {
    /// Pixel-center aligned bilinear interpolation with edge clamping.
    Bilinear,
    /// Pixel-center aligned nearest neighbor.
    Nearest,
    /// Output pixel is foreground if any source pixel under its footprint is.
    /// Equal to `Nearest` for integer upscaling factors; keeps thin
    /// structures alive when shrinking binary layers.
    Coverage,
}

/// Smallest nonzero depth: the distance of the hand's closest point.
pub fn min_nonzero_depth(img: &DepthImage) -> Result<u16> {
    img.data
        .iter()
        .copied()
        .filter(|&v| v > 0)
        .min()
        .ok_or(Error::AllZeroImage)
}

/// Zeroes every pixel farther than `hand_depth + closest`.
pub fn remove_background(img: &DepthImage, hand_depth: u16, closest: u16) -> DepthImage {
    let limit = hand_depth as u32 + closest as u32;
    let data = img
        .data
        .iter()
        .map(|&v| if v as u32 > limit { 0 } else { v })
        .collect();
    img.rebuild(img.width, img.height, data)
}

/// Shifts nonzero depths so the closest pixel becomes 1.
pub fn normalize_depth(img: &DepthImage, closest: u16) -> DepthImage {
    let shift = closest.saturating_sub(1);
    let data = img
        .data
        .iter()
        .map(|&v| if v == 0 { 0 } else { v.saturating_sub(shift).max(1) })
        .collect();
    img.rebuild(img.width, img.height, data)
}

pub fn make_mask(img: &DepthImage) -> BinaryImage {
    BinaryImage {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|&v| u8::from(v > 0)).collect(),
    }
}

/// Resamples the mask into a `target_w x target_h` frame. Output pixel
/// `(x, y)` reads the mask at `(x * scale_x + offset_x, y * scale_y + offset_y)`
/// rounded to the nearest pixel; samples outside the mask are 0.
pub fn align_mask(mask: &BinaryImage, a: &MaskAlignment, target_w: usize, target_h: usize) -> BinaryImage {
    let mut data = vec![0u8; target_w * target_h];
    for y in 0..target_h {
        let sy = (y as f64 * a.scale_y + a.offset_y + 0.5).floor();
        if sy < 0.0 || sy >= mask.height as f64 {
            continue;
        }
        let sy = sy as usize;
        for x in 0..target_w {
            let sx = (x as f64 * a.scale_x + a.offset_x + 0.5).floor();
            if sx < 0.0 || sx >= mask.width as f64 {
                continue;
            }
            data[y * target_w + x] = mask.data[sy * mask.width + sx as usize];
        }
    }
    BinaryImage {
        width: target_w,
        height: target_h,
        data,
    }
}

pub fn apply_mask(img: &IntensityImage, mask: &BinaryImage) -> Result<IntensityImage> {
    if img.width != mask.width || img.height != mask.height {
        return Err(Error::dims(
            format!("{}x{}", img.width, img.height),
            format!("mask {}x{}", mask.width, mask.height),
        ));
    }
    let data = img
        .data
        .iter()
        .zip(&mask.data)
        .map(|(&v, &m)| v * m as f64)
        .collect();
    Ok(img.rebuild(img.width, img.height, data))
}

/// Inclusive-exclusive pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }
}

/// Tight box around the foreground pixels, `None` for an empty image.
pub fn bounding_box<R: Raster>(img: &R) -> Option<BoundingBox> {
    let (w, h) = (img.width(), img.height());
    let px = img.pixels();
    let mut bb: Option<BoundingBox> = None;
    for y in 0..h {
        for x in 0..w {
            if !img.is_foreground(px[y * w + x]) {
                continue;
            }
            let b = bb.get_or_insert(BoundingBox {
                x0: x,
                y0: y,
                x1: x + 1,
                y1: y + 1,
            });
            b.x0 = b.x0.min(x);
            b.x1 = b.x1.max(x + 1);
            b.y1 = y + 1;
        }
    }
    bb
}

/// Copies the `bbox` crop of `img` onto a zero canvas so that the crop is
/// centered. Odd leftover margins put the extra pixel on the right/bottom,
/// i.e. the crop starts at `(target - size) / 2` (floor).
pub fn center_box<R: Raster>(img: &R, bbox: Option<BoundingBox>, target_w: usize, target_h: usize) -> Result<R> {
    let mut data = vec![img.background(); target_w * target_h];
    if let Some(b) = bbox {
        if b.width() > target_w || b.height() > target_h {
            return Err(Error::ContentLargerThanTarget {
                content_w: b.width(),
                content_h: b.height(),
                target_w,
                target_h,
            });
        }
        let left = (target_w - b.width()) / 2;
        let top = (target_h - b.height()) / 2;
        let px = img.pixels();
        for (row, sy) in (b.y0..b.y1).enumerate() {
            let src = &px[sy * img.width() + b.x0..sy * img.width() + b.x1];
            let start = (top + row) * target_w + left;
            data[start..start + b.width()].copy_from_slice(src);
        }
    }
    Ok(img.rebuild(target_w, target_h, data))
}

/// Centers the foreground content on a `target_w x target_h` canvas.
/// An empty image yields an all-zero canvas.
pub fn bounding_box_center<R: Raster>(img: &R, target_w: usize, target_h: usize) -> Result<R> {
    center_box(img, bounding_box(img), target_w, target_h)
}

fn nearest_index(dst: usize, src_len: usize, dst_len: usize) -> usize {
    // floor((dst + 0.5) * src / dst_len) in integer arithmetic
    ((2 * dst + 1) * src_len / (2 * dst_len)).min(src_len - 1)
}

fn bilinear_coord(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let s = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - i0 as f64)
}

pub fn resize<R: Raster>(img: &R, target_w: usize, target_h: usize, mode: ResizeMode) -> Result<R> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::InvalidImage(format!(
            "resize target must be positive, got {target_w}x{target_h}"
        )));
    }
    let (w, h) = (img.width(), img.height());
    if w == target_w && h == target_h {
        return Ok(img.rebuild(w, h, img.pixels().to_vec()));
    }
    if w == 0 || h == 0 {
        return Err(Error::InvalidImage("cannot resize an empty image".into()));
    }
    let px = img.pixels();
    let mut data = Vec::with_capacity(target_w * target_h);
    match mode {
        ResizeMode::Nearest => {
            let cols: Vec<usize> = (0..target_w).map(|x| nearest_index(x, w, target_w)).collect();
            for y in 0..target_h {
                let row = nearest_index(y, h, target_h) * w;
                data.extend(cols.iter().map(|&c| px[row + c]));
            }
        }
        ResizeMode::Bilinear => {
            let cols: Vec<_> = (0..target_w).map(|x| bilinear_coord(x, w, target_w)).collect();
            for y in 0..target_h {
                let (y0, y1, fy) = bilinear_coord(y, h, target_h);
                for &(x0, x1, fx) in &cols {
                    let v = |xx: usize, yy: usize| img.to_value(px[yy * w + xx]);
                    let top = v(x0, y0) * (1.0 - fx) + v(x1, y0) * fx;
                    let bottom = v(x0, y1) * (1.0 - fx) + v(x1, y1) * fx;
                    data.push(img.from_value(top * (1.0 - fy) + bottom * fy));
                }
            }
        }
        ResizeMode::Coverage => {
            let span = |d: usize, src: usize, dst: usize| {
                let start = d * src / dst;
                let end = ((d + 1) * src).div_ceil(dst).max(start + 1);
                start..end.min(src)
            };
            for y in 0..target_h {
                let ys = span(y, h, target_h);
                for x in 0..target_w {
                    let xs = span(x, w, target_w);
                    let hit = ys
                        .clone()
                        .flat_map(|yy| xs.clone().map(move |xx| yy * w + xx))
                        .find(|&i| img.is_foreground(px[i]));
                    data.push(match hit {
                        Some(i) => px[i],
                        None => img.background(),
                    });
                }
            }
        }
    }
    Ok(img.rebuild(target_w, target_h, data))
}

pub const DEINTERLACE_INPUT: usize = 128;
pub const DEINTERLACE_OUTPUT: usize = 64;

/// Keeps the even rows of a 128x128 frame (128x64), then resizes to 64x64.
pub fn deinterlace(img: &IntensityImage) -> Result<IntensityImage> {
    if img.width != DEINTERLACE_INPUT || img.height != DEINTERLACE_INPUT {
        return Err(Error::WrongInputSize {
            expected_w: DEINTERLACE_INPUT,
            expected_h: DEINTERLACE_INPUT,
            actual_w: img.width,
            actual_h: img.height,
        });
    }
    let w = img.width;
    let data: Vec<f64> = img
        .data
        .chunks_exact(w)
        .step_by(2)
        .flatten()
        .copied()
        .collect();
    let half = img.rebuild(w, img.height / 2, data);
    resize(&half, DEINTERLACE_OUTPUT, DEINTERLACE_OUTPUT, ResizeMode::Bilinear)
}

/// 256-bin histogram equalization over the nonzero (hand) pixels only.
///
/// Hand pixel `v` maps to `round(255 * (cdf(v) - cdf_min) / (n_hand - cdf_min))`,
/// floored at 1 so that no hand pixel turns into background. When every
/// hand pixel shares one value the denominator vanishes and they map to 255.
/// Unit-domain input is quantized to 256 levels first; the result is always
/// in the integer domain.
pub fn equalize_histogram(img: &IntensityImage) -> IntensityImage {
    let scale = 255.0 / img.domain.max();
    let levels: Vec<usize> = img
        .data
        .iter()
        .map(|&v| (v * scale).round().clamp(0.0, 255.0) as usize)
        .collect();
    let mut hist = [0usize; 256];
    for &l in levels.iter().filter(|&&l| l > 0) {
        hist[l] += 1;
    }
    let n_hand: usize = hist.iter().sum();
    if n_hand == 0 {
        let data = levels.iter().map(|&l| l as f64).collect();
        return IntensityImage {
            width: img.width,
            height: img.height,
            data,
            domain: IntensityDomain::Integer,
        };
    }
    let mut cdf = [0usize; 256];
    let mut acc = 0;
    for (c, h) in cdf.iter_mut().zip(hist.iter()) {
        acc += h;
        *c = acc;
    }
    let cdf_min = hist
        .iter()
        .zip(cdf.iter())
        .find(|(h, _)| **h > 0)
        .map(|(_, c)| *c)
        .unwrap_or(0);
    let denom = (n_hand - cdf_min) as f64;
    let mut lut = [0f64; 256];
    for v in 1..256 {
        lut[v] = if denom == 0.0 {
            255.0
        } else {
            (255.0 * (cdf[v] as f64 - cdf_min as f64) / denom).round().max(1.0)
        };
    }
    let data = levels.iter().map(|&l| if l == 0 { 0.0 } else { lut[l] }).collect();
    IntensityImage {
        width: img.width,
        height: img.height,
        data,
        domain: IntensityDomain::Integer,
    }
}

/// Divides by 255 and flags the result as unit domain.
pub fn normalize_unit(img: &IntensityImage) -> IntensityImage {
    match img.domain {
        IntensityDomain::Unit => img.clone(),
        IntensityDomain::Integer => IntensityImage {
            width: img.width,
            height: img.height,
            data: img.data.iter().map(|&v| v / 255.0).collect(),
            domain: IntensityDomain::Unit,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn depth(w: usize, h: usize, d: &[u16]) -> DepthImage {
        DepthImage::new(w, h, d.to_vec()).unwrap()
    }

    fn binary(w: usize, h: usize, d: &[u8]) -> BinaryImage {
        BinaryImage::new(w, h, d.to_vec()).unwrap()
    }

    #[test]
    fn min_nonzero() {
        assert_eq!(min_nonzero_depth(&depth(2, 2, &[0, 1520, 1503, 1600])).unwrap(), 1503);
        assert_eq!(min_nonzero_depth(&depth(1, 1, &[7])).unwrap(), 7);
        assert!(matches!(
            min_nonzero_depth(&depth(2, 2, &[0, 0, 0, 0])),
            Err(Error::AllZeroImage)
        ));
    }

    #[test]
    fn background_threshold() {
        let img = depth(2, 2, &[1503, 1640, 0, 1610]);
        assert_eq!(remove_background(&img, 120, 1503).data(), &[1503, 0, 0, 1610]);
        let near = depth(2, 2, &[1503, 1623, 0, 1550]);
        assert_eq!(remove_background(&near, 120, 1503), near);
    }

    #[test]
    fn depth_normalization() {
        let img = depth(2, 2, &[1503, 0, 1523, 1601]);
        assert_eq!(normalize_depth(&img, 1503).data(), &[1, 0, 21, 99]);
        assert_eq!(normalize_depth(&depth(1, 1, &[900]), 900).data(), &[1]);
    }

    #[test]
    fn mask_is_nonzero_indicator() {
        let m = make_mask(&depth(2, 2, &[1, 0, 21, 99]));
        assert_eq!(m.data(), &[1, 0, 1, 1]);
        assert_eq!(make_mask(&DepthImage::zeros(3, 3)).count_ones(), 0);
        let as_depth = DepthImage::new(2, 2, m.data().iter().map(|&v| v as u16).collect()).unwrap();
        assert_eq!(make_mask(&as_depth), m);
    }

    #[test]
    fn alignment_identity_and_out_of_bounds() {
        let m = binary(3, 2, &[1, 0, 1, 0, 1, 1]);
        assert_eq!(align_mask(&m, &MaskAlignment::IDENTITY, 3, 2), m);
        let shifted = MaskAlignment {
            offset_x: 3.0,
            ..MaskAlignment::IDENTITY
        };
        assert_eq!(align_mask(&m, &shifted, 3, 2).count_ones(), 0);
    }

    #[test]
    fn alignment_half_scale_checkerboard() {
        let board: Vec<u8> = (0..16).map(|i| ((i % 4 + i / 4) % 2) as u8).collect();
        let m = binary(4, 4, &board);
        let a = MaskAlignment {
            scale_x: 0.5,
            scale_y: 0.5,
            ..MaskAlignment::IDENTITY
        };
        // source coordinates 0, 0.5, 1, 1.5 round half up to 0, 1, 1, 2
        let src = [0usize, 1, 1, 2];
        let mut expected = [0u8; 16];
        for y in 0..4 {
            for x in 0..4 {
                expected[y * 4 + x] = board[src[y] * 4 + src[x]];
            }
        }
        assert_eq!(align_mask(&m, &a, 4, 4).data(), &expected[..]);
    }

    #[test]
    fn mask_application() {
        let img = IntensityImage::from_u8(2, 2, &[10, 20, 30, 40]).unwrap();
        let out = apply_mask(&img, &binary(2, 2, &[1, 0, 0, 1])).unwrap();
        assert_eq!(out.data(), &[10.0, 0.0, 0.0, 40.0]);
        assert_eq!(apply_mask(&img, &binary(2, 2, &[1; 4])).unwrap(), img);
        assert!(apply_mask(&img, &binary(2, 2, &[0; 4])).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(matches!(
            apply_mask(&img, &BinaryImage::zeros(3, 2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn centering_single_pixel() {
        for (px, py) in [(0usize, 0usize), (7, 2), (5, 7)] {
            let mut d = vec![0u8; 64];
            d[py * 8 + px] = 1;
            let out = bounding_box_center(&binary(8, 8, &d), 8, 8).unwrap();
            // margins (8 - 1) / 2 = 3 on the left/top
            assert_eq!(out.at(3, 3), 1);
            assert_eq!(out.count_ones(), 1);
        }
    }

    #[test]
    fn centering_empty_and_oversized() {
        let out = bounding_box_center(&BinaryImage::zeros(5, 5), 8, 6).unwrap();
        assert_eq!((out.width(), out.height(), out.count_ones()), (8, 6, 0));
        let full = binary(4, 4, &[1; 16]);
        assert!(matches!(
            bounding_box_center(&full, 3, 8),
            Err(Error::ContentLargerThanTarget { .. })
        ));
    }

    #[test]
    fn resize_identity_and_nearest_upscale() {
        let img = IntensityImage::from_u8(3, 2, &[1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(resize(&img, 3, 2, ResizeMode::Bilinear).unwrap(), img);
        let b = binary(2, 2, &[1, 0, 0, 0]);
        let up = resize(&b, 4, 4, ResizeMode::Nearest).unwrap();
        assert_eq!(up.data(), &[1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(resize(&b, 4, 4, ResizeMode::Coverage).unwrap(), up);
    }

    #[test]
    fn resize_constant_images() {
        let img = IntensityImage::from_u8(5, 7, &[77; 35]).unwrap();
        let d = DepthImage::new(5, 7, vec![42; 35]).unwrap();
        for (w, h) in [(1, 1), (3, 9), (16, 16)] {
            for mode in [ResizeMode::Bilinear, ResizeMode::Nearest] {
                assert!(resize(&img, w, h, mode).unwrap().data().iter().all(|&v| v == 77.0));
                assert!(resize(&d, w, h, mode).unwrap().data().iter().all(|&v| v == 42));
            }
        }
    }

    #[test]
    fn coverage_keeps_thin_structures() {
        let mut d = vec![0u8; 128 * 128];
        d[63 * 128 + 63] = 1;
        let small = resize(&binary(128, 128, &d), 32, 32, ResizeMode::Coverage).unwrap();
        assert_eq!(small.count_ones(), 1);
        assert_eq!(small.at(15, 15), 1);
        assert!(resize(&binary(2, 2, &[0; 4]), 0, 3, ResizeMode::Nearest).is_err());
    }

    #[test]
    fn deinterlace_rows() {
        let constant = IntensityImage::from_u8(128, 128, &[90; 128 * 128]).unwrap();
        let out = deinterlace(&constant).unwrap();
        assert_eq!((out.width(), out.height()), (64, 64));
        assert!(out.data().iter().all(|&v| v == 90.0));

        let stripes: Vec<u8> = (0..128 * 128).map(|i| u8::from((i / 128) % 2 == 0)).collect();
        let out = deinterlace(&IntensityImage::from_u8(128, 128, &stripes).unwrap()).unwrap();
        assert!(out.data().iter().all(|&v| v == 1.0));

        let wrong = IntensityImage::zeros(100, 128, IntensityDomain::Integer);
        assert!(matches!(deinterlace(&wrong), Err(Error::WrongInputSize { .. })));
    }

    #[test]
    fn equalization_single_value_and_empty() {
        let img = IntensityImage::from_u8(3, 1, &[0, 40, 40]).unwrap();
        assert_eq!(equalize_histogram(&img).data(), &[0.0, 255.0, 255.0]);
        let zero = IntensityImage::zeros(4, 4, IntensityDomain::Integer);
        assert_eq!(equalize_histogram(&zero), zero);
    }

    #[test]
    fn equalization_uniform_histogram_is_monotone() {
        let vals: Vec<u8> = (1..=255).collect();
        let img = IntensityImage::from_u8(255, 1, &vals).unwrap();
        let out = equalize_histogram(&img);
        let d = out.data();
        assert!(d.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(d[254], 255.0);
        // cdf(v) = v, cdf_min = 1: v -> round(255 (v - 1) / 254), floored at 1
        for (i, &v) in d.iter().enumerate() {
            let lvl = (i + 1) as f64;
            let expect = (255.0 * (lvl - 1.0) / 254.0).round().max(1.0);
            assert_eq!(v, expect);
        }
    }

    #[test]
    fn unit_normalization() {
        let img = IntensityImage::from_u8(3, 1, &[255, 0, 51]).unwrap();
        let out = normalize_unit(&img);
        assert_eq!(out.domain(), IntensityDomain::Unit);
        assert_eq!(out.data(), &[1.0, 0.0, 0.2]);
    }

    #[test]
    fn constructors_validate() {
        assert!(DepthImage::new(2, 2, vec![0; 3]).is_err());
        assert!(BinaryImage::new(1, 1, vec![2]).is_err());
        assert!(IntensityImage::new(1, 1, vec![256.0], IntensityDomain::Integer).is_err());
        assert!(IntensityImage::new(1, 1, vec![0.5], IntensityDomain::Integer).is_err());
        assert!(IntensityImage::new(1, 1, vec![0.5], IntensityDomain::Unit).is_ok());
    }

    fn arb_depth() -> impl Strategy<Value = DepthImage> {
        (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
            proptest::collection::vec(prop_oneof![Just(0u16), 500u16..900], w * h)
                .prop_map(move |d| DepthImage::new(w, h, d).unwrap())
        })
    }

    fn preprocess_depth(img: &DepthImage, t: u16) -> Option<DepthImage> {
        let d = min_nonzero_depth(img).ok()?;
        Some(normalize_depth(&remove_background(img, t, d), d))
    }

    proptest! {
        #[test]
        fn depth_offset_invariance(img in arb_depth(), c in 1u16..3000, t in 1u16..300) {
            let shifted = img.rebuild(img.width(), img.height(),
                img.data().iter().map(|&v| if v == 0 { 0 } else { v + c }).collect());
            prop_assert_eq!(preprocess_depth(&img, t), preprocess_depth(&shifted, t));
        }

        #[test]
        fn normalized_min_is_one(img in arb_depth(), t in 1u16..300) {
            if let Some(n) = preprocess_depth(&img, t) {
                prop_assert_eq!(min_nonzero_depth(&n).unwrap(), 1);
            }
        }

        #[test]
        fn background_pixels_do_not_matter(img in arb_depth(), t in 1u16..300, far in 0u16..4000, idx in 0usize..144) {
            let Ok(d) = min_nonzero_depth(&img) else { return Ok(()) };
            let limit = d as u32 + t as u32;
            let i = idx % img.len();
            if (img.data()[i] as u32) <= limit { return Ok(()) }
            let mut data = img.data().to_vec();
            data[i] = (limit as u16).saturating_add(1).saturating_add(far);
            let altered = DepthImage::new(img.width(), img.height(), data).unwrap();
            prop_assert_eq!(remove_background(&img, t, d), remove_background(&altered, t, d));
        }

        #[test]
        fn mask_zeroes_exactly_background(img in arb_depth()) {
            let intensity = IntensityImage::new(img.width(), img.height(), vec![200.0; img.len()], IntensityDomain::Integer).unwrap();
            let mask = align_mask(&make_mask(&img), &MaskAlignment::IDENTITY, img.width(), img.height());
            let out = apply_mask(&intensity, &mask).unwrap();
            for (o, d) in out.data().iter().zip(img.data()) {
                prop_assert_eq!(*o == 0.0, *d == 0);
            }
        }

        #[test]
        fn centering_is_idempotent(img in arb_depth(), tw in 12usize..20, th in 12usize..20) {
            let once = bounding_box_center(&img, tw, th).unwrap();
            let twice = bounding_box_center(&once, tw, th).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn nearest_resize_stays_binary(img in arb_depth(), tw in 1usize..40, th in 1usize..40) {
            let m = make_mask(&img);
            for mode in [ResizeMode::Nearest, ResizeMode::Coverage] {
                let r = resize(&m, tw, th, mode).unwrap();
                prop_assert!(r.data().iter().all(|&v| v <= 1));
            }
        }

        #[test]
        fn equalization_preserves_zero_set(vals in proptest::collection::vec(0u8..=255, 1..200)) {
            let img = IntensityImage::from_u8(vals.len(), 1, &vals).unwrap();
            let out = equalize_histogram(&img);
            for (a, b) in img.data().iter().zip(out.data()) {
                prop_assert_eq!(*a == 0.0, *b == 0.0);
            }
        }
    }
}
