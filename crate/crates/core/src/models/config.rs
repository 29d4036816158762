use serde::{Deserialize, Serialize};

use crate::encoding::{GridSpec, LabelKind, TaskEncodingKind, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::foveation::FoveationConfig;
use crate::nn::ConvLstmCell;

/// Model family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    HighLevel,
    Panoptic,
    Dual,
    Detection,
}

/// How the detection branch of a dual model is wired to the fixation branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DualArch {
    /// Fixation ConvLSTM state becomes the detection ConvLSTM's previous state.
    A,
    /// Detection ConvLSTM runs first; its state becomes the fixation ConvLSTM's previous state.
    B,
    /// No detection ConvLSTM; the detection head reads the input and the fixation state.
    C,
}

impl std::str::FromStr for DualArch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(DualArch::A),
            "B" => Ok(DualArch::B),
            "C" => Ok(DualArch::C),
            _ => Err(Error::Config(format!("unknown dual architecture `{s}` (expected A, B or C)"))),
        }
    }
}

/// Output activation of the panoptic fixation head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// Conv → sigmoid → flatten.
    Sigmoid,
    /// Conv → ReLU → flatten → dense → softmax.
    Softmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl LstmSpec {
    pub fn cell(&self, prefix: &str, in_channels: usize) -> ConvLstmCell {
        ConvLstmCell::new(prefix, in_channels, self.filters, self.kernel, self.stride, self.pad)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the fixation term in the dual loss.
    pub w_fix: f64,
    /// Weight of positive detection labels.
    pub w1: f64,
    /// Weight of negative detection labels.
    pub w0: f64,
    /// Whether detection BCE uses `w1`/`w0`.
    pub weighted: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            w_fix: 0.75,
            w1: 1.6,
            w0: 0.7,
            weighted: true,
        }
    }
}

/// Architecture manifest. Serialized into every checkpoint; two models are
/// interchangeable only when their manifests are equal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: Family,
    pub grid: GridSpec,
    /// Channels of the per-step feature maps.
    pub feature_channels: usize,
    pub classes: usize,
    pub task_encoding: TaskEncodingKind,
    pub label: LabelKind,
    pub lstm: LstmSpec,
    /// Number of stacked ConvLSTM layers (panoptic only).
    pub depth: usize,
    pub head: Head,
    pub architecture: Option<DualArch>,
    /// Batch norm after the fixation ConvLSTM(s).
    pub batch_norm: bool,
    /// Dropout after the task FC layer.
    pub task_dropout: f64,
    /// Hidden widths of the detection head; the output unit is implicit.
    pub det_units: Vec<usize>,
    pub det_dropout: f64,
    /// Input length of a standalone detection head.
    pub det_input: usize,
    pub loss: LossConfig,
    pub foveation: FoveationConfig,
}

impl ModelConfig {
    /// Fixation predictor on high-level features: `F=5, K=4, S=2, P=1`.
    pub fn high_level(grid: GridSpec, feature_channels: usize, classes: usize) -> Self {
        ModelConfig {
            family: Family::HighLevel,
            grid,
            feature_channels,
            classes,
            task_encoding: TaskEncodingKind::OneHot,
            label: LabelKind::Gaussian,
            lstm: LstmSpec {
                filters: 5,
                kernel: 4,
                stride: 2,
                pad: 1,
            },
            depth: 1,
            head: Head::Softmax,
            architecture: None,
            batch_norm: true,
            task_dropout: 0.5,
            det_units: Vec::new(),
            det_dropout: 0.0,
            det_input: 0,
            loss: LossConfig::default(),
            foveation: FoveationConfig::default(),
        }
    }

    /// Fixation predictor on panoptic belief maps: `d` ConvLSTMs with `F=10, K=3, S=1, P=1`.
    pub fn panoptic(grid: GridSpec, feature_channels: usize, classes: usize, depth: usize, head: Head) -> Self {
        ModelConfig {
            family: Family::Panoptic,
            task_encoding: TaskEncodingKind::OnehotSpatial,
            lstm: LstmSpec {
                filters: 10,
                kernel: 3,
                stride: 1,
                pad: 1,
            },
            depth,
            head,
            task_dropout: 0.0,
            ..Self::high_level(grid, feature_channels, classes)
        }
    }

    pub fn dual(grid: GridSpec, feature_channels: usize, classes: usize, arch: DualArch) -> Self {
        ModelConfig {
            family: Family::Dual,
            architecture: Some(arch),
            task_dropout: 0.0,
            det_units: vec![64, 32],
            ..Self::high_level(grid, feature_channels, classes)
        }
    }

    /// Standalone binary classifier on `input`-long crop features.
    pub fn detection(input: usize) -> Self {
        ModelConfig {
            family: Family::Detection,
            det_units: vec![512, 256],
            det_dropout: 0.5,
            det_input: input,
            ..Self::high_level(GridSpec::default(), 1, NUM_CLASSES)
        }
    }

    /// Checks the option matrix of the family.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.grid.validate()?;
        self.foveation.validate()?;
        if self.classes == 0 || self.feature_channels == 0 {
            return bad("classes and feature channels must be positive".into());
        }
        let l = &self.loss;
        if !(0.0..=1.0).contains(&l.w_fix) {
            return bad(format!("w_fix must lie in [0, 1], got {}", l.w_fix));
        }
        if !(l.w1 > 0.0 && l.w0 > 0.0) {
            return bad(format!("detection class weights must be positive, got w1={} w0={}", l.w1, l.w0));
        }
        for (name, p) in [("task_dropout", self.task_dropout), ("det_dropout", self.det_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1), got {p}"));
            }
        }
        let spec = self.lstm;
        if spec.filters == 0 || spec.kernel == 0 || spec.stride == 0 {
            return bad(format!("ConvLSTM filters, kernel and stride must be positive: {spec:?}"));
        }
        match self.family {
            Family::HighLevel | Family::Dual => {
                if self.task_encoding == TaskEncodingKind::OnehotSpatial {
                    return bad("the spatial one-hot task encoding is only valid for panoptic models".into());
                }
                if self.family == Family::Dual {
                    if self.architecture.is_none() {
                        return bad("dual model needs an architecture (A, B or C)".into());
                    }
                    if self.det_units.is_empty() {
                        return bad("dual model needs detection head widths".into());
                    }
                }
                spec.cell("", self.feature_channels)
                    .output_size(self.grid.rows, self.grid.cols)
                    .map_err(|e| Error::Config(e.to_string()))?;
            }
            Family::Panoptic => {
                if self.task_encoding != TaskEncodingKind::OnehotSpatial {
                    return bad("panoptic models take the spatial one-hot task encoding".into());
                }
                if self.depth == 0 {
                    return bad("panoptic depth must be at least 1".into());
                }
                if self.head == Head::Sigmoid && self.label != LabelKind::Gaussian {
                    return bad("the sigmoid panoptic head requires Gaussian labels".into());
                }
                let (h, w) = spec
                    .cell("", self.feature_channels)
                    .output_size(self.grid.rows, self.grid.cols)
                    .map_err(|e| Error::Config(e.to_string()))?;
                if (h, w) != (self.grid.rows, self.grid.cols) {
                    return bad(format!(
                        "panoptic ConvLSTM must preserve the {}×{} grid, got {h}×{w}",
                        self.grid.rows, self.grid.cols
                    ));
                }
            }
            Family::Detection => {
                if self.det_input == 0 || self.det_units.is_empty() {
                    return bad("detection head needs a positive input length and hidden widths".into());
                }
            }
        }
        Ok(())
    }

    /// Shape of one task encoding.
    pub fn task_shape(&self) -> Vec<usize> {
        self.task_encoding.shape(self.classes, &self.grid)
    }

    /// Grid size of the fixation ConvLSTM state.
    pub fn state_size(&self) -> Result<(usize, usize)> {
        self.lstm
            .cell("", self.feature_channels)
            .output_size(self.grid.rows, self.grid.cols)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        let g = GridSpec::default();
        ModelConfig::high_level(g, 512, 18).validate().unwrap();
        ModelConfig::panoptic(g, 134, 18, 3, Head::Softmax).validate().unwrap();
        for a in [DualArch::A, DualArch::B, DualArch::C] {
            ModelConfig::dual(g, 512, 18, a).validate().unwrap();
        }
        ModelConfig::detection(25088).validate().unwrap();
    }

    #[test]
    fn sigmoid_head_needs_gaussian_labels() {
        let mut c = ModelConfig::panoptic(GridSpec::default(), 134, 18, 1, Head::Sigmoid);
        c.validate().unwrap();
        c.label = LabelKind::OneHot;
        let err = c.validate().unwrap_err();
        assert!(err.to_string().contains("sigmoid"));
    }

    #[test]
    fn manifest_round_trips() {
        let c = ModelConfig::dual(GridSpec::default(), 512, 18, DualArch::B);
        assert_eq!(ModelConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
    }
}
