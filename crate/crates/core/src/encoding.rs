//! Grid discretization, ground-truth label grids and task encodings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of search-target categories in COCO-Search18.
pub const NUM_CLASSES: usize = 18;

/// Output grid laid over a resized image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub img_h: usize,
    pub img_w: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            rows: 10,
            cols: 16,
            img_h: 320,
            img_w: 512,
        }
    }
}

/// A grid cell, row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Cell { row, col }
    }
}

/// Axis-aligned box in pixels, COCO order (x, y, w, h).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) || !x.is_finite() || !y.is_finite() {
            return Err(Error::Data(format!("malformed bbox [{x}, {y}, {w}, {h}]")));
        }
        Ok(BBox { x, y, w, h })
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn scaled(&self, sx: f64, sy: f64) -> BBox {
        BBox {
            x: self.x * sx,
            y: self.y * sy,
            w: self.w * sx,
            h: self.h * sy,
        }
    }
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, img_h: usize, img_w: usize) -> Result<Self> {
        let g = GridSpec { rows, cols, img_h, img_w };
        g.validate()?;
        Ok(g)
    }

    /// A grid whose cells are `cell_px` pixels square.
    pub fn with_cell_size(rows: usize, cols: usize, cell_px: usize) -> Self {
        GridSpec {
            rows,
            cols,
            img_h: rows * cell_px,
            img_w: cols * cell_px,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.img_h == 0 || self.img_w == 0 {
            return Err(Error::Config(format!("grid dimensions must be positive: {self:?}")));
        }
        if self.img_h % self.rows != 0 || self.img_w % self.cols != 0 {
            return Err(Error::Config(format!(
                "image {}×{} is not divisible into a {}×{} grid",
                self.img_h, self.img_w, self.rows, self.cols
            )));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Cell size in pixels as (height, width).
    pub fn cell_size(&self) -> (f64, f64) {
        ((self.img_h / self.rows) as f64, (self.img_w / self.cols) as f64)
    }

    /// Starting fixation: the cell at (⌊H/2⌋, ⌊W/2⌋).
    pub fn center_cell(&self) -> Cell {
        Cell::new(self.rows / 2, self.cols / 2)
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.row < self.rows && c.col < self.cols
    }

    pub fn index(&self, c: Cell) -> usize {
        c.row * self.cols + c.col
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new(index / self.cols, index % self.cols)
    }

    /// Cell containing pixel `(x, y)`; out-of-range coordinates clamp to the nearest cell.
    pub fn pixel_to_cell(&self, x: f64, y: f64) -> Cell {
        let (ch, cw) = self.cell_size();
        let clamp = |v: f64, n: usize| {
            if v.is_nan() || v < 0.0 {
                0
            } else {
                (v.floor() as usize).min(n - 1)
            }
        };
        Cell::new(clamp(y / ch, self.rows), clamp(x / cw, self.cols))
    }

    /// Pixel coordinates `(x, y)` of a cell's center.
    pub fn cell_center(&self, c: Cell) -> (f64, f64) {
        let (ch, cw) = self.cell_size();
        ((c.col as f64 + 0.5) * cw, (c.row as f64 + 0.5) * ch)
    }

    /// True when the cell rectangle and `bbox` share a region of positive area.
    pub fn overlaps(&self, c: Cell, bbox: &BBox) -> bool {
        let (ch, cw) = self.cell_size();
        let (x0, y0) = (c.col as f64 * cw, c.row as f64 * ch);
        let ox = (x0 + cw).min(bbox.x + bbox.w) - x0.max(bbox.x);
        let oy = (y0 + ch).min(bbox.y + bbox.h) - y0.max(bbox.y);
        ox > 0.0 && oy > 0.0
    }

    fn check(&self, c: Cell) -> Result<()> {
        if !self.contains(c) {
            return Err(Error::Data(format!("cell {c:?} outside {}×{} grid", self.rows, self.cols)));
        }
        Ok(())
    }
}

/// Ground-truth label shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    OneHot,
    Gaussian,
}

/// `H×W` label grid for a fixation at `cell`.
pub fn label_grid(cell: Cell, kind: LabelKind, g: &GridSpec) -> Result<Tensor> {
    match kind {
        LabelKind::OneHot => onehot_label(cell, g),
        LabelKind::Gaussian => gaussian_label(cell, g),
    }
}

pub fn onehot_label(cell: Cell, g: &GridSpec) -> Result<Tensor> {
    g.check(cell)?;
    let mut v = vec![0.0; g.cells()];
    v[g.index(cell)] = 1.0;
    Tensor::from_vec(&[g.rows, g.cols], v)
}

/// Unit-variance Gaussian centred on `cell`, truncated to the grid and normalized to sum 1.
pub fn gaussian_label(cell: Cell, g: &GridSpec) -> Result<Tensor> {
    g.check(cell)?;
    let mut v = Vec::with_capacity(g.cells());
    for i in 0..g.rows {
        for j in 0..g.cols {
            let di = i as f64 - cell.row as f64;
            let dj = j as f64 - cell.col as f64;
            v.push((-(di * di + dj * dj) / 2.0).exp());
        }
    }
    let z: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= z);
    Tensor::from_vec(&[g.rows, g.cols], v)
}

/// How the search target is presented to a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskEncodingKind {
    /// Length-`classes` one-hot vector.
    OneHot,
    /// `H×W` fixation heatmap used as a spatial multiplier.
    Heatmap2d,
    /// The heatmap flattened to length `H·W`.
    HeatmapFlat,
    /// `H×W×classes` with the target plane set to one.
    OnehotSpatial,
}

impl TaskEncodingKind {
    pub fn is_flat(self) -> bool {
        matches!(self, TaskEncodingKind::OneHot | TaskEncodingKind::HeatmapFlat)
    }

    /// Shape of one encoded task (without batch axis).
    pub fn shape(self, classes: usize, g: &GridSpec) -> Vec<usize> {
        match self {
            TaskEncodingKind::OneHot => vec![classes],
            TaskEncodingKind::Heatmap2d => vec![g.rows, g.cols],
            TaskEncodingKind::HeatmapFlat => vec![g.cells()],
            TaskEncodingKind::OnehotSpatial => vec![g.rows, g.cols, classes],
        }
    }
}

pub fn task_onehot(task: usize, classes: usize) -> Result<Tensor> {
    if task >= classes {
        return Err(Error::Data(format!("task index {task} out of {classes} classes")));
    }
    let mut v = vec![0.0; classes];
    v[task] = 1.0;
    Tensor::from_vec(&[classes], v)
}

pub fn task_onehot_spatial(task: usize, classes: usize, g: &GridSpec) -> Result<Tensor> {
    if task >= classes {
        return Err(Error::Data(format!("task index {task} out of {classes} classes")));
    }
    let mut v = vec![0.0; g.cells() * classes];
    for p in 0..g.cells() {
        v[p * classes + task] = 1.0;
    }
    Tensor::from_vec(&[g.rows, g.cols, classes], v)
}

/// Sum-normalized `H×W` count of every fixation in `cells`.
pub fn task_heatmap(cells: impl IntoIterator<Item = Cell>, g: &GridSpec) -> Result<Tensor> {
    let mut v = vec![0.0; g.cells()];
    let mut n = 0usize;
    for c in cells {
        g.check(c)?;
        v[g.index(c)] += 1.0;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Data("task heatmap needs at least one training fixation".into()));
    }
    v.iter_mut().for_each(|x| *x /= n as f64);
    Tensor::from_vec(&[g.rows, g.cols], v)
}

/// Per-step target-found labels: 1 when the target is present and the fixation's cell overlaps the bbox.
pub fn detection_labels(cells: &[Cell], bbox: Option<&BBox>, present: bool, g: &GridSpec) -> Result<Vec<f64>> {
    if !present {
        return Ok(vec![0.0; cells.len()]);
    }
    let b = bbox.ok_or_else(|| Error::Data("target-present record without bbox".into()))?;
    if !(b.w > 0.0 && b.h > 0.0) {
        return Err(Error::Data(format!("malformed bbox {b:?}")));
    }
    Ok(cells.iter().map(|&c| if g.overlaps(c, b) { 1.0 } else { 0.0 }).collect())
}
