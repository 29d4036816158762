//! Grid-world scenes standing in for real images. Each class has its own
//! feature channel; a scene plants its target's signature in that channel at
//! one cell, scatters distractors of other classes elsewhere, and records
//! "human" scanpaths that head for the target with probability
//! `1 − difficulty` at every fixation.

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Condition, FeatureStore, ScanpathRecord, Variant};
use crate::encoding::{Cell, GridSpec};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::{DType, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub grid: GridSpec,
    pub scenes: usize,
    pub tasks: usize,
    /// Probability that a fixation ignores the target.
    pub difficulty: f64,
    /// Fraction of target-absent scenes.
    pub absent_fraction: f64,
    pub distractors: usize,
    /// Channels beyond the per-class ones, carrying only noise.
    pub extra_channels: usize,
    /// Planted signature strength.
    pub signal: f64,
    /// Standard deviation of background noise.
    pub noise: f64,
    /// Blur of the low-acuity layer, in cells.
    pub blur_cells: f64,
    /// Attenuation of the low-acuity layer.
    pub blur_gain: f64,
    /// Scanpaths recorded per scene.
    pub subjects: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            grid: GridSpec::with_cell_size(6, 8, 32),
            scenes: 200,
            tasks: 4,
            difficulty: 0.2,
            absent_fraction: 0.25,
            distractors: 3,
            extra_channels: 2,
            signal: 1.0,
            noise: 0.05,
            blur_cells: 1.0,
            blur_gain: 0.6,
            subjects: 1,
        }
    }
}

impl SynthConfig {
    pub fn channels(&self) -> usize {
        self.tasks + self.extra_channels
    }

    pub fn class_name(k: usize) -> String {
        format!("class{k:02}")
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.tasks == 0 || self.scenes == 0 || self.subjects == 0 {
            return Err(Error::Config("synthetic corpus needs at least one task, scene and subject".into()));
        }
        if !(0.0..=1.0).contains(&self.difficulty) || !(0.0..=1.0).contains(&self.absent_fraction) {
            return Err(Error::Config("difficulty and absent fraction must lie in [0, 1]".into()));
        }
        if self.distractors + 1 > self.grid.cells() {
            return Err(Error::Config("more objects than grid cells".into()));
        }
        Ok(())
    }
}

/// Feature layers of one scene.
#[derive(Clone, Debug)]
pub struct SceneFeatures {
    pub full: Tensor,
    pub blurred: Tensor,
    /// `H×W×D` detection features per cell.
    pub crop: Tensor,
    /// Target cell, when the target is present.
    pub target: Option<Cell>,
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub records: Vec<ScanpathRecord>,
    /// Keyed by image stem.
    pub scenes: BTreeMap<String, SceneFeatures>,
}

impl SynthCorpus {
    /// An in-memory feature store holding every scene.
    pub fn feature_store(&self) -> FeatureStore {
        let store = FeatureStore::new("");
        for (stem, f) in &self.scenes {
            store.insert(stem, Variant::Full, f.full.clone());
            store.insert(stem, Variant::Blurred, f.blurred.clone());
            store.insert(stem, Variant::Crop, f.crop.clone());
        }
        store
    }

    /// Writes every scene's feature files under `store`'s directory.
    pub fn write_features(&self, store: &FeatureStore) -> Result<()> {
        for (stem, f) in &self.scenes {
            store.put(stem, Variant::Full, &f.full)?;
            store.put(stem, Variant::Blurred, &f.blurred)?;
            store.put(stem, Variant::Crop, &f.crop)?;
        }
        Ok(())
    }
}

fn blur_grid(t: &Tensor, g: &GridSpec, sigma: f64, gain: f64) -> Result<Tensor> {
    let c = t.shape()[2];
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let z: f64 = k.iter().sum();
    let (h, w) = (g.rows as isize, g.cols as isize);
    let src = t.data();
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for i in 0..h {
            for j in 0..w {
                for (ti, &kv) in k.iter().enumerate() {
                    let d = ti as isize - r;
                    let (si, sj) = if horizontal {
                        (i, (j + d).clamp(0, w - 1))
                    } else {
                        ((i + d).clamp(0, h - 1), j)
                    };
                    let o = ((i * w + j) as usize) * c;
                    let s = ((si * w + sj) as usize) * c;
                    for ch in 0..c {
                        out[o + ch] += kv / z * src[s + ch];
                    }
                }
            }
        }
        out
    };
    let tmp = pass(src, true);
    let data: Vec<f64> = pass(&tmp, false).into_iter().map(|v| v * gain).collect();
    Tensor::from_vec_dtype(t.shape(), data, t.dtype())
}

fn random_cell(g: &GridSpec, rng: &mut Rng) -> Cell {
    g.cell_at(rng.random_range(0..g.cells()))
}

fn pixel_in(c: Cell, g: &GridSpec, rng: &mut Rng) -> (f64, f64) {
    let (ch, cw) = g.cell_size();
    let (cx, cy) = g.cell_center(c);
    (
        cx + rng.random_range(-0.3..0.3) * cw,
        cy + rng.random_range(-0.3..0.3) * ch,
    )
}

/// Fixations after the imposed centre start (at most six).
fn walk(target: Option<Cell>, objects: &[Cell], cfg: &SynthConfig, rng: &mut Rng) -> Vec<Cell> {
    let g = &cfg.grid;
    let mut out = Vec::new();
    while out.len() < 6 {
        let next = match target {
            Some(t) if rng.random::<f64>() >= cfg.difficulty => t,
            _ => {
                if !objects.is_empty() && rng.random::<f64>() < 0.5 {
                    objects[rng.random_range(0..objects.len())]
                } else {
                    random_cell(g, rng)
                }
            }
        };
        out.push(next);
        if Some(next) == target {
            if out.len() < 6 && rng.random::<f64>() < 0.5 {
                out.push(next);
            }
            break;
        }
    }
    out
}

/// Generates a corpus; the same config always yields bit-identical output.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let g = cfg.grid;
    let mut scene_rng = rng::stream(cfg.seed, "synth/scenes");
    let mut walk_rng = rng::stream(cfg.seed, "synth/walks");
    let noise = Normal::new(0.0, cfg.noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let c = cfg.channels();
    let mut records = Vec::new();
    let mut scenes = BTreeMap::new();
    for s in 0..cfg.scenes {
        let class = s % cfg.tasks;
        // Spread absent scenes evenly within each class.
        let (j, in_class) = (s / cfg.tasks, (cfg.scenes - class).div_ceil(cfg.tasks));
        let n_absent = (in_class as f64 * cfg.absent_fraction).round() as usize;
        let present = (j * n_absent) / in_class == ((j + 1) * n_absent) / in_class;
        let mut data: Vec<f64> = (0..g.cells() * c).map(|_| noise.sample(&mut scene_rng).abs()).collect();
        let mut used = Vec::new();
        let target = present.then(|| random_cell(&g, &mut scene_rng));
        if let Some(t) = target {
            data[g.index(t) * c + class] += cfg.signal;
            used.push(t);
        }
        let mut objects = Vec::new();
        while objects.len() < cfg.distractors && cfg.tasks > 1 {
            let cell = random_cell(&g, &mut scene_rng);
            if used.contains(&cell) {
                continue;
            }
            let mut other = scene_rng.random_range(0..cfg.tasks - 1);
            if other >= class {
                other += 1;
            }
            data[g.index(cell) * c + other] += cfg.signal;
            used.push(cell);
            objects.push(cell);
        }
        let full = Tensor::from_vec_dtype(&[g.rows, g.cols, c], data, DType::F32)?;
        let blurred = blur_grid(&full, &g, cfg.blur_cells, cfg.blur_gain)?;
        let stem = format!("scene{s:04}");
        for subject in 0..cfg.subjects {
            let cells = walk(target, &objects, cfg, &mut walk_rng);
            let (x, y): (Vec<f64>, Vec<f64>) = cells.iter().map(|&cell| pixel_in(cell, &g, &mut walk_rng)).unzip();
            let bbox = target.map(|t| {
                let (ch, cw) = g.cell_size();
                [t.col as f64 * cw + cw / 8.0, t.row as f64 * ch + ch / 8.0, cw * 0.75, ch * 0.75]
            });
            records.push(ScanpathRecord {
                name: format!("{stem}.png"),
                task: SynthConfig::class_name(class),
                condition: if present { Condition::Present } else { Condition::Absent },
                bbox,
                x,
                y,
                subject: Some(subject as u32),
                split: None,
                processed: false,
            });
        }
        scenes.insert(
            stem,
            SceneFeatures {
                crop: full.clone(),
                full,
                blurred,
                target,
            },
        );
    }
    Ok(SynthCorpus {
        config: *cfg,
        records,
        scenes,
    })
}
