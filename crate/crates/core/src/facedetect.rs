//! Haar-cascade face detection over integral images, and the crop, grayscale
//! and 48x48 resize chain applied to detected faces.
//!
//! Cascade files are JSON:
//!
//! ```json
//! {"width": 24, "height": 24, "stages": [
//!   {"threshold": -1.2, "stumps": [
//!     {"rects": [{"x": 0, "y": 0, "w": 24, "h": 12, "weight": -1.0},
//!                {"x": 0, "y": 12, "w": 24, "h": 12, "weight": 1.0}],
//!      "threshold": 0.01, "left": -0.8, "right": 0.9}]}]}
//! ```
//!
//! A stump's feature is the weighted sum of its rectangle sums divided by the
//! window area. It takes `left` when the feature is below
//! `threshold * max(sigma, 1)`, where sigma is the window's pixel standard
//! deviation, and `right` otherwise. A window passes a stage when the stump
//! outputs sum to at least the stage threshold.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::IMAGE_SIDE;
use crate::error::{Error, Result};
use crate::pnm::{GrayImage, Image};
use crate::tensor::Tensor;

/// Cumulative sums with a zero first row and column:
/// `sum[y][x]` covers rows `< y` and columns `< x`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    sum: Vec<u64>,
    sq: Vec<u64>,
}

impl IntegralImage {
    pub fn new(img: &GrayImage) -> Self {
        let (w, h) = (img.width, img.height);
        let stride = w + 1;
        let mut sum = vec![0u64; (h + 1) * stride];
        let mut sq = vec![0u64; (h + 1) * stride];
        for y in 0..h {
            let mut row = 0u64;
            let mut row_sq = 0u64;
            for x in 0..w {
                let v = img.pixels[y * w + x] as u64;
                row += v;
                row_sq += v * v;
                sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + row;
                sq[(y + 1) * stride + x + 1] = sq[y * stride + x + 1] + row_sq;
            }
        }
        IntegralImage { width: w, height: h, sum, sq }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Entry `ii[y][x]`.
    pub fn at(&self, y: usize, x: usize) -> u64 {
        self.sum[y * (self.width + 1) + x]
    }

    fn table_sum(&self, table: &[u64], x: usize, y: usize, w: usize, h: usize) -> u64 {
        let s = self.width + 1;
        let (x2, y2) = (x + w, y + h);
        table[y2 * s + x2] + table[y * s + x] - table[y * s + x2] - table[y2 * s + x]
    }

    pub fn rect_sum(&self, x: usize, y: usize, w: usize, h: usize) -> u64 {
        self.table_sum(&self.sum, x, y, w, h)
    }

    pub fn rect_sq_sum(&self, x: usize, y: usize, w: usize, h: usize) -> u64 {
        self.table_sum(&self.sq, x, y, w, h)
    }
}

pub fn integral_image(img: &GrayImage) -> IntegralImage {
    IntegralImage::new(img)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HaarRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub rects: Vec<HaarRect>,
    pub threshold: f64,
    pub left: f64,
    pub right: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub threshold: f64,
    pub stumps: Vec<Stump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeModel {
    pub width: u32,
    pub height: u32,
    pub stages: Vec<Stage>,
}

impl CascadeModel {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Cascade("window size must be positive".into()));
        }
        if self.stages.is_empty() {
            return Err(Error::Cascade("cascade has no stages".into()));
        }
        for (si, stage) in self.stages.iter().enumerate() {
            if stage.threshold.is_nan() {
                return Err(Error::Cascade(format!("stage {si}: threshold is NaN")));
            }
            for (ti, stump) in stage.stumps.iter().enumerate() {
                let at = format!("stage {si} stump {ti}");
                if stump.rects.is_empty() || stump.rects.len() > 3 {
                    return Err(Error::Cascade(format!("{at}: needs 1 to 3 rectangles")));
                }
                if ![stump.threshold, stump.left, stump.right].iter().all(|v| v.is_finite()) {
                    return Err(Error::Cascade(format!("{at}: non-finite value")));
                }
                let mut balance = 0.0;
                let mut magnitude = 0.0;
                for r in &stump.rects {
                    if r.w == 0 || r.h == 0 || r.x + r.w > self.width || r.y + r.h > self.height {
                        return Err(Error::Cascade(format!("{at}: rectangle {r:?} outside the window")));
                    }
                    if !r.weight.is_finite() {
                        return Err(Error::Cascade(format!("{at}: non-finite weight")));
                    }
                    let area = (r.w * r.h) as f64;
                    balance += r.weight * area;
                    magnitude += (r.weight * area).abs();
                }
                if balance.abs() > 1e-6 * magnitude.max(1.0) {
                    return Err(Error::Cascade(format!("{at}: weighted areas sum to {balance}, not 0")));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: CascadeModel = serde_json::from_str(text).map_err(|e| Error::Cascade(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cascade serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, Copy)]
struct ScaledRect {
    x: usize,
    y: usize,
    w: usize,
    h: usize,
    weight: f64,
}

struct ScaledStump {
    rects: Vec<ScaledRect>,
    threshold: f64,
    left: f64,
    right: f64,
}

/// A cascade with rectangles resized to one scale.
pub struct ScaledCascade {
    width: usize,
    height: usize,
    inv_area: f64,
    stages: Vec<(f64, Vec<ScaledStump>)>,
}

fn scaled(v: u32, scale: f64) -> usize {
    (v as f64 * scale).round() as usize
}

impl ScaledCascade {
    pub fn new(cascade: &CascadeModel, scale: f64) -> Self {
        let width = scaled(cascade.width, scale).max(1);
        let height = scaled(cascade.height, scale).max(1);
        let stages = cascade
            .stages
            .iter()
            .map(|stage| {
                let stumps = stage
                    .stumps
                    .iter()
                    .map(|s| {
                        let mut rects: Vec<ScaledRect> = s
                            .rects
                            .iter()
                            .map(|r| {
                                let x = scaled(r.x, scale).min(width - 1);
                                let y = scaled(r.y, scale).min(height - 1);
                                let w = scaled(r.w, scale).clamp(1, width - x);
                                let h = scaled(r.h, scale).clamp(1, height - y);
                                ScaledRect { x, y, w, h, weight: r.weight }
                            })
                            .collect();
                        // Rounding breaks the exact area balance; restore it through the first weight.
                        if rects.len() > 1 {
                            let rest: f64 = rects[1..].iter().map(|r| r.weight * (r.w * r.h) as f64).sum();
                            rects[0].weight = -rest / (rects[0].w * rects[0].h) as f64;
                        }
                        ScaledStump { rects, threshold: s.threshold, left: s.left, right: s.right }
                    })
                    .collect();
                (stage.threshold, stumps)
            })
            .collect();
        ScaledCascade { width, height, inv_area: 1.0 / (width * height) as f64, stages }
    }

    pub fn window(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Returns whether the window at `(x, y)` passes, and how many stages ran.
    pub fn eval(&self, ii: &IntegralImage, x: usize, y: usize) -> (bool, usize) {
        let n = (self.width * self.height) as f64;
        let s = ii.rect_sum(x, y, self.width, self.height) as f64;
        let sq = ii.rect_sq_sum(x, y, self.width, self.height) as f64;
        let var = (sq / n - (s / n).powi(2)).max(0.0);
        let norm = var.sqrt().max(1.0);
        for (k, (stage_threshold, stumps)) in self.stages.iter().enumerate() {
            let mut total = 0.0;
            for stump in stumps {
                let feature: f64 = stump
                    .rects
                    .iter()
                    .map(|r| r.weight * ii.rect_sum(x + r.x, y + r.y, r.w, r.h) as f64)
                    .sum::<f64>()
                    * self.inv_area;
                total += if feature < stump.threshold * norm { stump.left } else { stump.right };
            }
            if total < *stage_threshold {
                return (false, k + 1);
            }
        }
        (true, self.stages.len())
    }
}

/// Whether the window at `(x, y)` with the cascade scaled by `scale` passes
/// every stage. The window must fit inside the image.
pub fn eval_window(cascade: &CascadeModel, ii: &IntegralImage, x: usize, y: usize, scale: f64) -> bool {
    eval_window_counted(cascade, ii, x, y, scale).0
}

/// [`eval_window`] that also reports the number of stages evaluated.
pub fn eval_window_counted(cascade: &CascadeModel, ii: &IntegralImage, x: usize, y: usize, scale: f64) -> (bool, usize) {
    ScaledCascade::new(cascade, scale).eval(ii, x, y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub neighbors: usize,
}

impl Detection {
    pub fn area(&self) -> usize {
        self.w * self.h
    }

    /// Intersection area over the smaller box's area.
    pub fn overlap(&self, other: &Detection) -> f64 {
        let ix = (self.x + self.w).min(other.x + other.w).saturating_sub(self.x.max(other.x));
        let iy = (self.y + self.h).min(other.y + other.h).saturating_sub(self.y.max(other.y));
        (ix * iy) as f64 / self.area().min(other.area()) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub scale_factor: f64,
    pub min_neighbors: usize,
    /// Smallest window side considered, in pixels.
    pub min_size: usize,
    pub overlap: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig { scale_factor: 1.1, min_neighbors: 3, min_size: 0, overlap: 0.5 }
    }
}

/// Every accepted window over all scales, in (scale, y, x) order. Each has
/// `neighbors == 1`.
pub fn raw_hits(cascade: &CascadeModel, img: &GrayImage, cfg: &DetectConfig) -> Result<Vec<Detection>> {
    if cfg.scale_factor.is_nan() || cfg.scale_factor <= 1.0 {
        return Err(Error::InvalidConfig("scale factor must be > 1".into()));
    }
    cascade.validate()?;
    let ii = IntegralImage::new(img);
    let mut scales = Vec::new();
    let mut scale = 1.0f64;
    loop {
        let sc = ScaledCascade::new(cascade, scale);
        let (w, h) = sc.window();
        if w > img.width || h > img.height {
            break;
        }
        if w.min(h) >= cfg.min_size {
            scales.push((scale, sc));
        }
        scale *= cfg.scale_factor;
    }
    if scales.is_empty() {
        log::warn!(
            "image {}x{} is smaller than the {}x{} detection window",
            img.width,
            img.height,
            cascade.width,
            cascade.height
        );
    }
    let hits = scales
        .par_iter()
        .map(|(scale, sc)| {
            let (w, h) = sc.window();
            let step = (scale.round() as usize).max(1);
            let mut found = Vec::new();
            for y in (0..=img.height - h).step_by(step) {
                for x in (0..=img.width - w).step_by(step) {
                    if sc.eval(&ii, x, y).0 {
                        found.push(Detection { x, y, w, h, neighbors: 1 });
                    }
                }
            }
            found
        })
        .collect::<Vec<_>>();
    Ok(hits.into_iter().flatten().collect())
}

/// Greedy clustering in input order: a box joins the first cluster whose
/// first member it overlaps by at least `overlap`, else starts a new one.
/// Clusters with fewer than `min_neighbors` members are dropped; the rest
/// become their rounded mean box.
pub fn group(hits: &[Detection], min_neighbors: usize, overlap: f64) -> Vec<Detection> {
    let mut clusters: Vec<(Detection, [usize; 4], usize)> = Vec::new();
    for d in hits {
        match clusters.iter_mut().find(|(seed, _, _)| seed.overlap(d) >= overlap) {
            Some((_, sums, n)) => {
                sums[0] += d.x;
                sums[1] += d.y;
                sums[2] += d.w;
                sums[3] += d.h;
                *n += 1;
            }
            None => clusters.push((*d, [d.x, d.y, d.w, d.h], 1)),
        }
    }
    clusters
        .into_iter()
        .filter(|(_, _, n)| *n >= min_neighbors)
        .map(|(_, s, n)| {
            let mean = |v: usize| (v + n / 2) / n;
            Detection { x: mean(s[0]), y: mean(s[1]), w: mean(s[2]), h: mean(s[3]), neighbors: n }
        })
        .collect()
}

pub fn detect(cascade: &CascadeModel, img: &GrayImage, cfg: &DetectConfig) -> Result<Vec<Detection>> {
    let hits = raw_hits(cascade, img, cfg)?;
    Ok(group(&hits, cfg.min_neighbors, cfg.overlap))
}

pub const DETECTION_CSV_HEADER: &str = "x,y,w,h,neighbors";

pub fn write_detections_csv(dets: &[Detection], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{DETECTION_CSV_HEADER}")?;
    for d in dets {
        writeln!(out, "{},{},{},{},{}", d.x, d.y, d.w, d.h, d.neighbors)?;
    }
    Ok(())
}

/// Bilinear resize with pixel centers at half-integer coordinates and edge
/// clamping. Output values are rounded.
pub fn resize_bilinear(src: &[u8], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<u8> {
    let sx = w as f64 / out_w as f64;
    let sy = h as f64 / out_h as f64;
    let coord = |o: usize, s: f64, n: usize| {
        let c = ((o as f64 + 0.5) * s - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = c.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, c - i0 as f64)
    };
    let mut out = Vec::with_capacity(out_w * out_h);
    for oy in 0..out_h {
        let (y0, y1, fy) = coord(oy, sy, h);
        for ox in 0..out_w {
            let (x0, x1, fx) = coord(ox, sx, w);
            let p = |x: usize, y: usize| src[y * w + x] as f64;
            let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
            let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
            out.push((top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

/// Crop `bx`, convert to grayscale, resize to 48x48 and scale to `[0, 1]`.
pub fn preprocess_face(image: &Image, bx: &Detection) -> Result<Tensor<f32>> {
    if bx.w == 0 || bx.h == 0 {
        return Err(Error::InvalidConfig("degenerate face box".into()));
    }
    if bx.x + bx.w > image.width() || bx.y + bx.h > image.height() {
        return Err(Error::InvalidConfig(format!(
            "box {bx:?} exceeds the {}x{} image",
            image.width(),
            image.height()
        )));
    }
    let gray = image.to_gray();
    let mut crop = Vec::with_capacity(bx.w * bx.h);
    for y in bx.y..bx.y + bx.h {
        crop.extend_from_slice(&gray.pixels[y * gray.width + bx.x..y * gray.width + bx.x + bx.w]);
    }
    let resized = resize_bilinear(&crop, bx.w, bx.h, IMAGE_SIDE, IMAGE_SIDE);
    Tensor::new(&[1, IMAGE_SIDE, IMAGE_SIDE], resized.into_iter().map(crate::data::normalize).collect())
}
