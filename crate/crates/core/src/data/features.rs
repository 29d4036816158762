//! Per-image feature maps on disk and the per-fixation inputs derived from them.
//!
//! Files live in one directory as `<image stem>.<variant>.ftns`:
//!
//! | variant   | shape           | meaning                                           |
//! |-----------|-----------------|---------------------------------------------------|
//! | `full`    | `H×W×C`         | features of the full-acuity image                 |
//! | `blurred` | `H×W×C`         | features of the blurred image                     |
//! | `cells`   | `H×W×H×W×C`     | features of the image foveated at each grid cell  |
//! | `crop`    | `H×W×D`         | detection features of the crop around each cell   |

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::tensor_file::{read_tensor, write_tensor};
use crate::encoding::{Cell, GridSpec};
use crate::error::{shape_err, Error, Result};
use crate::foveation::{compose_belief, make_mask};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Full,
    Blurred,
    Cells,
    Crop,
}

impl Variant {
    pub fn tag(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Blurred => "blurred",
            Variant::Cells => "cells",
            Variant::Crop => "crop",
        }
    }
}

/// How per-step model inputs are derived from an image's feature files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InputMode {
    /// Belief map: full features inside the fixation mask, blurred outside.
    Blend { radius: f64, cumulative: bool },
    /// Precomputed features of the image foveated at the current fixation cell.
    PerCell,
}

/// Directory of feature files with a read-through cache.
#[derive(Debug)]
pub struct FeatureStore {
    dir: PathBuf,
    cache: Mutex<HashMap<(String, Variant), Arc<Tensor>>>,
}

impl FeatureStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FeatureStore {
            dir: dir.into(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, stem: &str, v: Variant) -> PathBuf {
        self.dir.join(format!("{stem}.{}.ftns", v.tag()))
    }

    pub fn exists(&self, stem: &str, v: Variant) -> bool {
        self.cache.lock().expect("cache lock").contains_key(&(stem.to_string(), v)) || self.path(stem, v).is_file()
    }

    pub fn get(&self, stem: &str, v: Variant) -> Result<Arc<Tensor>> {
        let key = (stem.to_string(), v);
        if let Some(t) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(t));
        }
        let path = self.path(stem, v);
        if !path.is_file() {
            return Err(Error::Data(format!("missing feature file {}", path.display())));
        }
        let t = Arc::new(read_tensor(&path)?);
        self.cache.lock().expect("cache lock").insert(key, Arc::clone(&t));
        Ok(t)
    }

    pub fn put(&self, stem: &str, v: Variant, t: &Tensor) -> Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        write_tensor(&self.path(stem, v), t)?;
        self.cache
            .lock()
            .expect("cache lock")
            .insert((stem.to_string(), v), Arc::new(t.clone()));
        Ok(())
    }

    /// Caches `t` without writing it to disk.
    pub fn insert(&self, stem: &str, v: Variant, t: Tensor) {
        self.cache.lock().expect("cache lock").insert((stem.to_string(), v), Arc::new(t));
    }

    /// The per-fixation input source for one image.
    pub fn source(&self, stem: &str, mode: InputMode, g: &GridSpec) -> Result<Source> {
        match mode {
            InputMode::Blend { radius, cumulative } => Source::blend(
                self.get(stem, Variant::Full)?,
                self.get(stem, Variant::Blurred)?,
                radius,
                cumulative,
                *g,
            ),
            InputMode::PerCell => Source::per_cell(self.get(stem, Variant::Cells)?, *g),
        }
    }
}

/// Produces the `H×W×C` model input for a fixation history.
#[derive(Clone, Debug)]
pub enum Source {
    Blend {
        full: Arc<Tensor>,
        blurred: Arc<Tensor>,
        radius: f64,
        cumulative: bool,
        grid: GridSpec,
    },
    PerCell {
        cells: Arc<Tensor>,
        grid: GridSpec,
    },
}

impl Source {
    pub fn blend(full: Arc<Tensor>, blurred: Arc<Tensor>, radius: f64, cumulative: bool, grid: GridSpec) -> Result<Self> {
        let s = full.shape();
        if s.len() != 3 || s[0] != grid.rows || s[1] != grid.cols || blurred.shape() != s {
            return shape_err(format!(
                "belief layers {:?} / {:?} for a {}×{} grid",
                s,
                blurred.shape(),
                grid.rows,
                grid.cols
            ));
        }
        Ok(Source::Blend {
            full,
            blurred,
            radius,
            cumulative,
            grid,
        })
    }

    pub fn per_cell(cells: Arc<Tensor>, grid: GridSpec) -> Result<Self> {
        let s = cells.shape();
        if s.len() != 5 || s[..4] != [grid.rows, grid.cols, grid.rows, grid.cols] {
            return shape_err(format!("per-cell features {:?} for a {}×{} grid", s, grid.rows, grid.cols));
        }
        Ok(Source::PerCell { cells, grid })
    }

    pub fn channels(&self) -> usize {
        match self {
            Source::Blend { full, .. } => full.shape()[2],
            Source::PerCell { cells, .. } => cells.shape()[4],
        }
    }

    /// Input for the last fixation in `history`.
    pub fn features(&self, history: &[Cell]) -> Result<Tensor> {
        match self {
            Source::Blend {
                full,
                blurred,
                radius,
                cumulative,
                grid,
            } => {
                let mask = make_mask(history, *radius, *cumulative, grid)?;
                compose_belief(full, blurred, &mask)
            }
            Source::PerCell { cells, grid } => {
                let c = *history
                    .last()
                    .ok_or_else(|| Error::Data("features for an empty fixation history".into()))?;
                let view = cells.index0(c.row)?;
                view.index0(c.col)?.reshape(&[grid.rows, grid.cols, cells.shape()[4]])
            }
        }
    }

    /// Inputs for every prefix of `cells`.
    pub fn sequence(&self, cells: &[Cell]) -> Result<Vec<Tensor>> {
        (1..=cells.len()).map(|t| self.features(&cells[..t])).collect()
    }
}

/// Detection features of the crop at `cell` from an `H×W×D` crop map.
pub fn crop_at(crops: &Tensor, cell: Cell) -> Result<Tensor> {
    if crops.rank() != 3 {
        return shape_err(format!("crop map must be H×W×D, got {:?}", crops.shape()));
    }
    crops.index0(cell.row)?.index0(cell.col)
}
