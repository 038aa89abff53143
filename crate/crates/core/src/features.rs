//! Feature vectors built from a preprocessed depth/intensity pair.
//!
//! The main feature is the layered depth decomposition: the hand is sliced
//! into `n` nested binary images, layer `l` holding every hand pixel whose
//! normalized depth is at most `(l - 1) * t / n + 1`. Each layer is centered,
//! shrunk to 32x32 and concatenated with a 64x64 equalized intensity image.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{
    align_mask, apply_mask, bounding_box, bounding_box_center, center_box, deinterlace,
    equalize_histogram, make_mask, min_nonzero_depth, normalize_depth, normalize_unit,
    remove_background, resize, BinaryImage, DepthImage, IntensityImage, MaskAlignment, Raster,
    ResizeMode,
};

pub const CANVAS: usize = 128;
pub const LAYER_SIDE: usize = 32;
pub const INTENSITY_DIM: usize = 64 * 64;
pub const DEFAULT_LAYERS: usize = 6;
pub const DEFAULT_MAX_HAND_DEPTH_MM: u16 = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Intensity,
    Depth,
    Combined,
    Raw,
    Gabor,
    Bar,
}

impl FeatureKind {
    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Intensity => "intensity",
            FeatureKind::Depth => "depth",
            FeatureKind::Combined => "combined",
            FeatureKind::Raw => "raw",
            FeatureKind::Gabor => "gabor",
            FeatureKind::Bar => "bar",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "intensity" => FeatureKind::Intensity,
            "depth" => FeatureKind::Depth,
            "combined" => FeatureKind::Combined,
            "raw" => FeatureKind::Raw,
            "gabor" => FeatureKind::Gabor,
            "bar" => FeatureKind::Bar,
            other => return Err(Error::Config(format!("unknown feature kind {other:?}"))),
        })
    }
}

/// A flat feature vector with every element in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    kind: FeatureKind,
    values: Vec<f32>,
}

impl FeatureVector {
    pub fn new(kind: FeatureKind, values: Vec<f32>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(format!("{kind} feature value {v} outside [0, 1]")));
        }
        Ok(FeatureVector { kind, values })
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

/// Depth slices `D_1..D_n` of one hand, all of one size.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    layers: Vec<BinaryImage>,
}

impl LayerStack {
    pub fn layers(&self) -> &[BinaryImage] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

/// Preprocessing parameters shared by every feature kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Maximum hand depth `t` in millimeters.
    pub max_hand_depth_mm: u16,
    /// Number of depth layers `n`.
    pub layers: usize,
    pub mask_alignment: MaskAlignment,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            max_hand_depth_mm: DEFAULT_MAX_HAND_DEPTH_MM,
            layers: DEFAULT_LAYERS,
            mask_alignment: MaskAlignment::IDENTITY,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_hand_depth_mm == 0 {
            return Err(Error::Config("max_hand_depth_mm must be positive".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("layers must be at least 1".into()));
        }
        self.mask_alignment.validate()
    }
}

/// A 128x128 hand: normalized depth (closest pixel 1, background 0) and the
/// masked integer-domain intensity, each centered on its own canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub depth: DepthImage,
    pub intensity: IntensityImage,
}

/// Background removal, depth renormalization, masking of the intensity
/// image, resize to 128x128 and bounding-box centering.
///
/// Depth is resized nearest-neighbor so that silhouette pixels never pick up
/// interpolated depths between the hand and the zeroed background. The
/// intensity image is resized bilinearly, re-masked, and centered on the box
/// of its (aligned) mask.
pub fn preprocess(depth: &DepthImage, intensity: &IntensityImage, cfg: &PreprocessConfig) -> Result<Preprocessed> {
    let closest = min_nonzero_depth(depth)?;
    let filtered = remove_background(depth, cfg.max_hand_depth_mm, closest);
    let normalized = normalize_depth(&filtered, closest);

    let mask = align_mask(
        &make_mask(&normalized),
        &cfg.mask_alignment,
        intensity.width(),
        intensity.height(),
    );
    let masked = apply_mask(intensity, &mask)?;

    let depth = resize(&normalized, CANVAS, CANVAS, ResizeMode::Nearest)?;
    let mask = resize(&mask, CANVAS, CANVAS, ResizeMode::Nearest)?;
    let masked = apply_mask(&resize(&masked, CANVAS, CANVAS, ResizeMode::Bilinear)?, &mask)?;

    Ok(Preprocessed {
        depth: bounding_box_center(&depth, CANVAS, CANVAS)?,
        intensity: center_box(&masked, bounding_box(&mask), CANVAS, CANVAS)?,
    })
}

/// Threshold of layer `l` (1-based): `(l - 1) * t / n + 1`.
pub fn layer_threshold(l: usize, n: usize, max_hand_depth_mm: u16) -> f64 {
    (l - 1) as f64 * max_hand_depth_mm as f64 / n as f64 + 1.0
}

/// Splits a normalized depth image into `n` binary layers. Background pixels
/// (depth 0) belong to no layer; pixels deeper than the last threshold also
/// belong to none.
pub fn depth_layers(depth: &DepthImage, n: usize, max_hand_depth_mm: u16) -> LayerStack {
    let layers = (1..=n)
        .map(|l| {
            let threshold = layer_threshold(l, n, max_hand_depth_mm);
            let data = depth
                .data()
                .iter()
                .map(|&v| u8::from(v > 0 && v as f64 <= threshold))
                .collect();
            BinaryImage::new(depth.width(), depth.height(), data).expect("same dimensions")
        })
        .collect();
    LayerStack { layers }
}

/// Centers every layer on its own, shrinks it to 32x32 and concatenates the
/// unrolled blocks in layer order.
pub fn depth_feature_vector(stack: &LayerStack) -> Result<FeatureVector> {
    let mut values = Vec::with_capacity(stack.len() * LAYER_SIDE * LAYER_SIDE);
    for layer in &stack.layers {
        let centered = bounding_box_center(layer, layer.width(), layer.height())?;
        let small = resize(&centered, LAYER_SIDE, LAYER_SIDE, ResizeMode::Coverage)?;
        values.extend(small.data().iter().map(|&v| v as f32));
    }
    Ok(FeatureVector {
        kind: FeatureKind::Depth,
        values,
    })
}

/// De-interlace to 64x64, equalize the hand histogram, scale to `[0, 1]`.
pub fn intensity_feature_vector(img: &IntensityImage) -> Result<FeatureVector> {
    let img = normalize_unit(&equalize_histogram(&deinterlace(img)?));
    Ok(FeatureVector {
        kind: FeatureKind::Intensity,
        values: img.data().iter().map(|&v| v as f32).collect(),
    })
}

pub fn combined_features(intensity: &FeatureVector, depth: &FeatureVector) -> Result<FeatureVector> {
    if intensity.len() != INTENSITY_DIM {
        return Err(Error::dims(format!("intensity length {INTENSITY_DIM}"), intensity.len()));
    }
    let depth_dim = DEFAULT_LAYERS * LAYER_SIDE * LAYER_SIDE;
    if depth.len() != depth_dim {
        return Err(Error::dims(format!("depth length {depth_dim}"), depth.len()));
    }
    let mut values = Vec::with_capacity(intensity.len() + depth.len());
    values.extend_from_slice(&intensity.values);
    values.extend_from_slice(&depth.values);
    Ok(FeatureVector {
        kind: FeatureKind::Combined,
        values,
    })
}

fn check_canvas(depth: &DepthImage, intensity: &IntensityImage) -> Result<()> {
    for (w, h) in [(depth.width(), depth.height()), (intensity.width(), intensity.height())] {
        if (w, h) != (CANVAS, CANVAS) {
            return Err(Error::dims(format!("{CANVAS}x{CANVAS}"), format!("{w}x{h}")));
        }
    }
    Ok(())
}

/// Unrolled 128x128 intensity (/255) followed by depth (/t, clamped to 1).
pub fn raw_features(depth: &DepthImage, intensity: &IntensityImage, max_hand_depth_mm: u16) -> Result<FeatureVector> {
    check_canvas(depth, intensity)?;
    let t = max_hand_depth_mm as f64;
    let unit = normalize_unit(intensity);
    let values = unit
        .data()
        .iter()
        .map(|&v| v as f32)
        .chain(depth.data().iter().map(|&v| (v as f64 / t).min(1.0) as f32))
        .collect();
    Ok(FeatureVector {
        kind: FeatureKind::Raw,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaborConfig {
    /// Wavelengths in pixels, one per scale.
    pub wavelengths: [f64; 4],
    /// Orientations in radians.
    pub orientations: [f64; 4],
    pub kernel_size: usize,
    /// Envelope width as a multiple of the wavelength.
    pub sigma_ratio: f64,
    pub aspect_ratio: f64,
    pub output_side: usize,
}

impl Default for GaborConfig {
    fn default() -> Self {
        GaborConfig {
            wavelengths: [4.0, 8.0, 12.0, 16.0],
            orientations: [0.0, PI / 4.0, PI / 2.0, 3.0 * PI / 4.0],
            kernel_size: 31,
            sigma_ratio: 0.56,
            aspect_ratio: 0.5,
            output_side: 28,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarConfig {
    pub kernel_size: usize,
    /// Gaussian width across the bar.
    pub sigma_across: f64,
    /// Gaussian width along the bar.
    pub sigma_along: f64,
    pub output_side: usize,
}

impl Default for BarConfig {
    fn default() -> Self {
        BarConfig {
            kernel_size: 9,
            sigma_across: 1.5,
            sigma_along: 3.0,
            output_side: 64,
        }
    }
}

/// Baseline filter banks: 4 scales x 4 orientations of Gabor filters and
/// three bar detectors (horizontal, 45 degree diagonal, vertical).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterBankConfig {
    pub gabor: GaborConfig,
    pub bar: BarConfig,
}

impl FilterBankConfig {
    pub fn validate(&self) -> Result<()> {
        let g = &self.gabor;
        if g.kernel_size == 0 || g.kernel_size.is_multiple_of(2) || self.bar.kernel_size == 0 || self.bar.kernel_size.is_multiple_of(2) {
            return Err(Error::Config("filter kernel sizes must be odd and positive".into()));
        }
        if g.output_side == 0 || self.bar.output_side == 0 {
            return Err(Error::Config("filter output sides must be positive".into()));
        }
        if g.wavelengths.iter().any(|&w| !(w > 0.0)) || !(g.sigma_ratio > 0.0) || !(g.aspect_ratio > 0.0) {
            return Err(Error::Config("gabor wavelengths, sigma ratio and aspect ratio must be positive".into()));
        }
        if !(self.bar.sigma_across > 0.0 && self.bar.sigma_along > 0.0) {
            return Err(Error::Config("bar sigmas must be positive".into()));
        }
        Ok(())
    }

    pub fn gabor_dim(&self) -> usize {
        2 * 16 * self.gabor.output_side * self.gabor.output_side
    }

    pub fn bar_dim(&self) -> usize {
        2 * 3 * self.bar.output_side * self.bar.output_side
    }
}

/// Square convolution kernel stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub size: usize,
    pub weights: Vec<f64>,
}

fn zero_mean(mut weights: Vec<f64>) -> Vec<f64> {
    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    weights.iter_mut().for_each(|w| *w -= mean);
    weights
}

/// Real part of a Gabor kernel with the DC component removed. Orientation
/// 0 oscillates along x, so it responds to vertical stripes.
pub fn gabor_kernel(wavelength: f64, theta: f64, cfg: &GaborConfig) -> Kernel {
    let size = cfg.kernel_size;
    let r = (size / 2) as f64;
    let sigma = cfg.sigma_ratio * wavelength;
    let (s, c) = theta.sin_cos();
    let mut weights = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 - r, y as f64 - r);
            let xr = dx * c + dy * s;
            let yr = -dx * s + dy * c;
            let envelope = (-(xr * xr + cfg.aspect_ratio * cfg.aspect_ratio * yr * yr) / (2.0 * sigma * sigma)).exp();
            weights.push(envelope * (2.0 * PI * xr / wavelength).cos());
        }
    }
    Kernel {
        size,
        weights: zero_mean(weights),
    }
}

/// Zero-sum bar detector: negated second derivative of a Gaussian across a
/// bar running at angle `theta` (0 = horizontal), Gaussian window along it.
pub fn bar_kernel(theta: f64, cfg: &BarConfig) -> Kernel {
    let size = cfg.kernel_size;
    let r = (size / 2) as f64;
    let (s, c) = theta.sin_cos();
    let (sa, sl) = (cfg.sigma_across, cfg.sigma_along);
    let mut weights = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 - r, y as f64 - r);
            let along = dx * c + dy * s;
            let across = -dx * s + dy * c;
            let profile = (1.0 - across * across / (sa * sa)) * (-across * across / (2.0 * sa * sa)).exp();
            weights.push(profile * (-along * along / (2.0 * sl * sl)).exp());
        }
    }
    Kernel {
        size,
        weights: zero_mean(weights),
    }
}

pub fn bar_orientations() -> [f64; 3] {
    [0.0, PI / 4.0, PI / 2.0]
}

/// Correlates `data` (`width x height`) with `kernel`, replicating edge
/// pixels outside the image.
pub fn convolve(data: &[f64], width: usize, height: usize, kernel: &Kernel) -> Vec<f64> {
    let r = (kernel.size / 2) as isize;
    let (w, h) = (width as isize, height as isize);
    let mut out = vec![0.0; width * height];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in 0..kernel.size as isize {
                let sy = (y + ky - r).clamp(0, h - 1) as usize;
                let row = &data[sy * width..(sy + 1) * width];
                let krow = &kernel.weights[ky as usize * kernel.size..(ky as usize + 1) * kernel.size];
                for (kx, &k) in krow.iter().enumerate() {
                    let sx = (x + kx as isize - r).clamp(0, w - 1) as usize;
                    acc += k * row[sx];
                }
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    out
}

/// Min-max scales into `[0, 1]`; a map with zero range becomes all zeros.
fn min_max_scale(values: &[f64]) -> impl Iterator<Item = f32> + '_ {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    values.iter().map(move |&v| {
        if range > 0.0 {
            ((v - lo) / range).clamp(0.0, 1.0) as f32
        } else {
            0.0
        }
    })
}

/// Unbounded real-valued filter response, so it can go through [`resize`].
struct ResponseMap {
    side: usize,
    data: Vec<f64>,
}

impl Raster for ResponseMap {
    type Pixel = f64;

    fn width(&self) -> usize {
        self.side
    }
    fn height(&self) -> usize {
        self.side
    }
    fn pixels(&self) -> &[f64] {
        &self.data
    }
    fn background(&self) -> f64 {
        0.0
    }
    fn is_foreground(&self, p: f64) -> bool {
        p != 0.0
    }
    fn to_value(&self, p: f64) -> f64 {
        p
    }
    fn from_value(&self, v: f64) -> f64 {
        v
    }
    fn rebuild(&self, width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(width, height);
        ResponseMap { side: width, data }
    }
}

fn filter_responses(images: [&[f64]; 2], kernels: &[Kernel], side: usize) -> Result<Vec<f32>> {
    let mut values = Vec::with_capacity(2 * kernels.len() * side * side);
    for data in images {
        for kernel in kernels {
            let response = convolve(data, CANVAS, CANVAS, kernel).into_iter().map(f64::abs).collect();
            let map = ResponseMap {
                side: CANVAS,
                data: response,
            };
            let small = resize(&map, side, side, ResizeMode::Bilinear)?;
            values.extend(min_max_scale(&small.data));
        }
    }
    Ok(values)
}

fn baseline_inputs(depth: &DepthImage, intensity: &IntensityImage) -> Result<[Vec<f64>; 2]> {
    check_canvas(depth, intensity)?;
    Ok([
        depth.data().iter().map(|&v| v as f64).collect(),
        intensity.data().to_vec(),
    ])
}

/// 16 Gabor magnitude maps per image (depth first, then intensity), each
/// shrunk to `output_side` squared and min-max scaled.
pub fn gabor_features(depth: &DepthImage, intensity: &IntensityImage, cfg: &FilterBankConfig) -> Result<FeatureVector> {
    let [d, i] = baseline_inputs(depth, intensity)?;
    let kernels: Vec<Kernel> = cfg
        .gabor
        .wavelengths
        .iter()
        .flat_map(|&w| cfg.gabor.orientations.iter().map(move |&th| (w, th)))
        .map(|(w, th)| gabor_kernel(w, th, &cfg.gabor))
        .collect();
    Ok(FeatureVector {
        kind: FeatureKind::Gabor,
        values: filter_responses([&d, &i], &kernels, cfg.gabor.output_side)?,
    })
}

/// Rectified responses of the three bar detectors per image.
pub fn bar_features(depth: &DepthImage, intensity: &IntensityImage, cfg: &FilterBankConfig) -> Result<FeatureVector> {
    let [d, i] = baseline_inputs(depth, intensity)?;
    let kernels: Vec<Kernel> = bar_orientations().iter().map(|&th| bar_kernel(th, &cfg.bar)).collect();
    Ok(FeatureVector {
        kind: FeatureKind::Bar,
        values: filter_responses([&d, &i], &kernels, cfg.bar.output_side)?,
    })
}

/// Everything needed to turn a raw frame pair into a feature vector.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    pub preprocess: PreprocessConfig,
    pub filters: FilterBankConfig,
}

impl FeatureExtractor {
    pub fn dimension(&self, kind: FeatureKind) -> usize {
        let layers = self.preprocess.layers * LAYER_SIDE * LAYER_SIDE;
        match kind {
            FeatureKind::Intensity => INTENSITY_DIM,
            FeatureKind::Depth => layers,
            FeatureKind::Combined => INTENSITY_DIM + layers,
            FeatureKind::Raw => 2 * CANVAS * CANVAS,
            FeatureKind::Gabor => self.filters.gabor_dim(),
            FeatureKind::Bar => self.filters.bar_dim(),
        }
    }

    pub fn extract(&self, kind: FeatureKind, depth: &DepthImage, intensity: &IntensityImage) -> Result<FeatureVector> {
        let pre = preprocess(depth, intensity, &self.preprocess)?;
        self.extract_preprocessed(kind, &pre)
    }

    pub fn extract_preprocessed(&self, kind: FeatureKind, pre: &Preprocessed) -> Result<FeatureVector> {
        let t = self.preprocess.max_hand_depth_mm;
        let depth_part = || -> Result<FeatureVector> {
            let stack = depth_layers(&pre.depth, self.preprocess.layers, t);
            depth_feature_vector(&stack)
        };
        match kind {
            FeatureKind::Intensity => intensity_feature_vector(&pre.intensity),
            FeatureKind::Depth => depth_part(),
            FeatureKind::Combined => {
                let fi = intensity_feature_vector(&pre.intensity)?;
                let fd = depth_part()?;
                if self.preprocess.layers == DEFAULT_LAYERS {
                    combined_features(&fi, &fd)
                } else {
                    let mut values = fi.into_values();
                    values.extend(fd.into_values());
                    Ok(FeatureVector {
                        kind: FeatureKind::Combined,
                        values,
                    })
                }
            }
            FeatureKind::Raw => raw_features(&pre.depth, &pre.intensity, t),
            FeatureKind::Gabor => gabor_features(&pre.depth, &pre.intensity, &self.filters),
            FeatureKind::Bar => bar_features(&pre.depth, &pre.intensity, &self.filters),
        }
    }
}

pub const FEATURE_MAGIC: &str = "HSFEAT1";

/// Row-major feature rows of a single kind. On disk: one ASCII header line
/// `HSFEAT1 <kind> <dim> <count>` followed by little-endian f32 values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub kind: FeatureKind,
    pub dim: usize,
    pub values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(kind: FeatureKind, dim: usize, values: Vec<f32>) -> Result<Self> {
        if dim == 0 || !values.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: format!("a multiple of {dim} values"),
                actual: values.len().to_string(),
            });
        }
        Ok(FeatureMatrix { kind, dim, values })
    }

    pub fn from_rows(kind: FeatureKind, dim: usize, rows: Vec<FeatureVector>) -> Result<Self> {
        let mut values = Vec::with_capacity(dim * rows.len());
        for (i, row) in rows.into_iter().enumerate() {
            if row.kind != kind || row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: format!("{kind} row of {dim}"),
                    actual: format!("row {i}: {} of {}", row.kind, row.len()),
                });
            }
            values.extend(row.into_values());
        }
        FeatureMatrix::new(kind, dim, values)
    }

    pub fn count(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_array(&self) -> ndarray::Array2<f64> {
        ndarray::Array2::from_shape_fn((self.count(), self.dim), |(r, c)| self.values[r * self.dim + c] as f64)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("{FEATURE_MAGIC} {} {} {}\n", self.kind, self.dim, self.count()).into_bytes();
        out.reserve(4 * self.values.len());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Format(format!("feature file: {m}"));
        let nl = bytes
            .iter()
            .take(256)
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing header line".into()))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not text".into()))?;
        let fields: Vec<&str> = header.split(' ').collect();
        if fields.len() != 4 || fields[0] != FEATURE_MAGIC {
            return Err(bad(format!("bad header {header:?}")));
        }
        let kind: FeatureKind = fields[1].parse().map_err(|_| bad(format!("unknown kind {:?}", fields[1])))?;
        let dim: usize = fields[2].parse().map_err(|_| bad(format!("bad dimension {:?}", fields[2])))?;
        let count: usize = fields[3].parse().map_err(|_| bad(format!("bad count {:?}", fields[3])))?;
        if dim == 0 {
            return Err(bad("dimension is zero".into()));
        }
        let need = dim
            .checked_mul(count)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| bad("size overflows".into()))?;
        let body = &bytes[nl + 1..];
        if body.len() < need {
            return Err(bad(format!("values truncated: {} of {need} bytes", body.len())));
        }
        if body.len() > need {
            return Err(bad(format!("{} trailing bytes", body.len() - need)));
        }
        let values = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(FeatureMatrix { kind, dim, values })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        FeatureMatrix::from_bytes(&std::fs::read(path)?)
    }
}
