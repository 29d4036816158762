//! Space-variant acuity: pixel-space foveated rendering and feature-space
//! belief maps blended through fixation masks.

use serde::{Deserialize, Serialize};

use crate::encoding::{Cell, GridSpec};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Fraction of the fovea radius over which full and blurred layers cross-fade.
pub const CROSSFADE_BAND: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FoveationConfig {
    /// Fovea radius in pixels.
    pub fovea_px: f64,
    /// Standard deviation of the peripheral Gaussian blur, pixels.
    pub sigma: f64,
    /// Feature-grid mask radius in cells.
    pub mask_radius: f64,
    pub cumulative: bool,
}

impl Default for FoveationConfig {
    fn default() -> Self {
        FoveationConfig {
            fovea_px: 75.0,
            sigma: 2.0,
            mask_radius: 2.0,
            cumulative: false,
        }
    }
}

impl FoveationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fovea_px > 0.0) {
            return Err(Error::Config(format!("fovea radius must be positive, got {}", self.fovea_px)));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config(format!("blur sigma must be positive, got {}", self.sigma)));
        }
        if !(self.mask_radius >= 1.0) {
            return Err(Error::Config(format!("mask radius must be at least 1 cell, got {}", self.mask_radius)));
        }
        Ok(())
    }

    /// Grid mask radius matching a fovea size on a 32-pixel cell grid: 50→1, 75→2, 100→3.
    pub fn mask_radius_for_fovea(fovea_px: f64) -> f64 {
        ((fovea_px - 25.0) / 25.0).round().max(1.0)
    }
}

/// Interleaved pixel grid with float samples (0–255 for 8-bit sources).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 || data.len() != width * height * channels {
            return shape_err(format!(
                "image {width}×{height}×{channels} with {} samples",
                data.len()
            ));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, pixel: &[f64]) -> Result<Self> {
        let data = pixel.iter().copied().cycle().take(width * height * pixel.len()).collect();
        Image::new(width, height, pixel.len(), data)
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let o = (y * self.width + x) * self.channels;
        &self.data[o..o + self.channels]
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let data = img.as_raw().iter().map(|&v| v as f64).collect();
        Image {
            width: img.width() as usize,
            height: img.height() as usize,
            channels: 3,
            data,
        }
    }

    /// Rounds to 8-bit RGB. Single-channel images are replicated into grey.
    pub fn to_rgb8(&self) -> image::RgbImage {
        let q = |v: f64| v.round().clamp(0.0, 255.0) as u8;
        let mut raw = Vec::with_capacity(self.width * self.height * 3);
        for p in self.data.chunks(self.channels) {
            for c in 0..3 {
                raw.push(q(p[c.min(self.channels - 1)]));
            }
        }
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw).expect("buffer sized to image")
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let z: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= z);
    k
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("blur sigma must be positive, got {sigma}")));
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h, ch) = (img.width as isize, img.height as isize, img.channels);
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                let o = ((y * w + x) as usize) * ch;
                for (t, &kv) in k.iter().enumerate() {
                    let d = t as isize - r;
                    let (sx, sy) = if horizontal {
                        ((x + d).clamp(0, w - 1), y)
                    } else {
                        (x, (y + d).clamp(0, h - 1))
                    };
                    let s = ((sy * w + sx) as usize) * ch;
                    for c in 0..ch {
                        out[o + c] += kv * src[s + c];
                    }
                }
            }
        }
        out
    };
    let tmp = pass(&img.data, true);
    let data = pass(&tmp, false);
    Image::new(img.width, img.height, img.channels, data)
}

/// Weight of the full-acuity layer at distance `d` from the fixation.
pub fn fovea_weight(d: f64, radius: f64) -> f64 {
    let half = CROSSFADE_BAND * radius / 2.0;
    if d <= radius - half {
        1.0
    } else if d >= radius + half {
        0.0
    } else {
        (radius + half - d) / (2.0 * half)
    }
}

/// Renders `img` as seen while fixating pixel `(fx, fy)`: full acuity inside
/// the fovea, the blurred image outside, linearly cross-faded over a band of
/// `0.2·radius` centred on the fovea edge.
pub fn foveate_image(img: &Image, fx: f64, fy: f64, cfg: &FoveationConfig) -> Result<Image> {
    cfg.validate()?;
    if !(fx >= 0.0 && fy >= 0.0 && fx < img.width as f64 && fy < img.height as f64) {
        return Err(Error::Data(format!(
            "fixation ({fx}, {fy}) outside {}×{} image",
            img.width, img.height
        )));
    }
    let blurred = gaussian_blur(img, cfg.sigma)?;
    let mut out = blurred.data;
    for y in 0..img.height {
        for x in 0..img.width {
            let d = ((x as f64 - fx).powi(2) + (y as f64 - fy).powi(2)).sqrt();
            let a = fovea_weight(d, cfg.fovea_px);
            if a == 0.0 {
                continue;
            }
            let o = (y * img.width + x) * img.channels;
            for c in 0..img.channels {
                let v = &mut out[o + c];
                *v = if a == 1.0 { img.data[o + c] } else { a * img.data[o + c] + (1.0 - a) * *v };
            }
        }
    }
    Image::new(img.width, img.height, img.channels, out)
}

/// Binary `H×W` grid of cells seen at high acuity.
#[derive(Clone, Debug, PartialEq)]
pub struct FixationMask {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<bool>,
    /// Fixation that generated the mask (the latest one in cumulative mode).
    pub cell: Cell,
    /// Every fixation folded into a cumulative mask; empty in plain mode.
    pub history: Vec<Cell>,
}

impl FixationMask {
    pub fn active(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    pub fn get(&self, c: Cell) -> bool {
        self.values[c.row * self.cols + c.col]
    }

    pub fn to_tensor(&self) -> Tensor {
        let v = self.values.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Tensor::from_vec(&[self.rows, self.cols], v).expect("mask dims are positive")
    }
}

fn disk(values: &mut [bool], cols: usize, rows: usize, c: Cell, r: f64) {
    for i in 0..rows {
        for j in 0..cols {
            let d2 = (i as f64 - c.row as f64).powi(2) + (j as f64 - c.col as f64).powi(2);
            if d2.sqrt() < r {
                values[i * cols + j] = true;
            }
        }
    }
}

/// Mask for the fixations made so far: cells strictly closer than `radius`
/// to the last fixation, or to any fixation when `cumulative`.
pub fn make_mask(fixations: &[Cell], radius: f64, cumulative: bool, g: &GridSpec) -> Result<FixationMask> {
    let &last = fixations
        .last()
        .ok_or_else(|| Error::Data("fixation mask needs at least one fixation".into()))?;
    if let Some(c) = fixations.iter().find(|c| !g.contains(**c)) {
        return Err(Error::Data(format!("fixation {c:?} outside {}×{} grid", g.rows, g.cols)));
    }
    let mut values = vec![false; g.cells()];
    let used = if cumulative { fixations } else { std::slice::from_ref(&last) };
    for &c in used {
        disk(&mut values, g.cols, g.rows, c, radius);
    }
    Ok(FixationMask {
        rows: g.rows,
        cols: g.cols,
        values,
        cell: last,
        history: if cumulative { fixations.to_vec() } else { Vec::new() },
    })
}

/// Masks for every prefix of `fixations`.
pub fn mask_sequence(fixations: &[Cell], radius: f64, cumulative: bool, g: &GridSpec) -> Result<Vec<FixationMask>> {
    (1..=fixations.len())
        .map(|t| make_mask(&fixations[..t], radius, cumulative, g))
        .collect()
}

/// Belief map `M ⊙ high + (1 − M) ⊙ low`, the mask broadcast over channels.
pub fn compose_belief(high: &Tensor, low: &Tensor, mask: &FixationMask) -> Result<Tensor> {
    if high.shape() != low.shape() {
        return shape_err(format!("belief layers {:?} vs {:?}", high.shape(), low.shape()));
    }
    let s = high.shape();
    if s.len() != 3 || s[0] != mask.rows || s[1] != mask.cols {
        return shape_err(format!(
            "belief layers {:?} do not match a {}×{} mask",
            s, mask.rows, mask.cols
        ));
    }
    let c = s[2];
    let mut out = Vec::with_capacity(high.len());
    for (p, &m) in mask.values.iter().enumerate() {
        let src = if m { high } else { low };
        out.extend_from_slice(&src.data()[p * c..(p + 1) * c]);
    }
    Tensor::from_vec_dtype(s, out, high.dtype().promote(low.dtype()))
}
