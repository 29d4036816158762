//! The three model families (high-level, panoptic, dual-task), the
//! standalone detection head and the training losses.
//!
//! Every sequence model consumes `T` per-step feature maps `B×H×W×C` plus a
//! task encoding and returns, for each step, a `B×(H·W)` distribution over
//! the next fixation cell. Dual models also return a `B` vector of
//! target-found probabilities per step.

mod config;
mod detection;
mod dual;
mod high_level;
pub mod loss;
mod panoptic;

pub use config::{DualArch, Family, Head, LossConfig, LstmSpec, ModelConfig};
pub use detection::{DetectionHead, DetectionModel};
pub use dual::DualModel;
pub use high_level::HighLevelModel;
pub use panoptic::PanopticModel;

use crate::encoding::TaskEncodingKind;
use crate::error::{shape_err, Error, Result};
use crate::nn::{BatchNorm, Dense, LstmState, ParamStore, Session};
use crate::rng::Rng;
use crate::tensor::{Tensor, Var};

/// Recurrent state of a model between calls, one slot per ConvLSTM.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelState {
    pub cells: Vec<Option<LstmState>>,
}

/// [`ModelState`] lifted off a graph so it can outlive its session.
#[derive(Clone, Debug, Default)]
pub struct TensorState {
    pub cells: Vec<Option<(Tensor, Tensor)>>,
}

impl TensorState {
    pub fn detach(state: &ModelState, s: &Session<'_>) -> Self {
        TensorState {
            cells: state
                .cells
                .iter()
                .map(|c| c.map(|st| (s.value(st.h).clone(), s.value(st.c).clone())))
                .collect(),
        }
    }

    pub fn attach(&self, s: &mut Session<'_>) -> ModelState {
        ModelState {
            cells: self
                .cells
                .iter()
                .map(|c| {
                    c.as_ref().map(|(h, cc)| LstmState {
                        h: s.constant(h.clone()),
                        c: s.constant(cc.clone()),
                    })
                })
                .collect(),
        }
    }

    /// Keeps batch rows `rows` (in that order) of every state tensor.
    pub fn gather(&self, rows: &[usize]) -> Result<Self> {
        let pick = |t: &Tensor| t.gather0(rows);
        Ok(TensorState {
            cells: self
                .cells
                .iter()
                .map(|c| c.as_ref().map(|(h, cc)| Ok((pick(h)?, pick(cc)?))).transpose())
                .collect::<Result<_>>()?,
        })
    }
}

/// Output of a sequence forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// Per step, `B×(H·W)` scores for the next fixation.
    pub fix: Vec<Var>,
    /// Per step, `B` target-found probabilities (dual models).
    pub det: Option<Vec<Var>>,
    pub state: ModelState,
    /// Dual models: per step, the state handed from one branch to the other.
    pub handoff: Vec<LstmState>,
    /// Dual C: per step, the detection head input.
    pub det_inputs: Vec<Var>,
}

/// A built fixation model of any family.
#[derive(Clone, Debug)]
pub enum Model {
    HighLevel(HighLevelModel),
    Panoptic(PanopticModel),
    Dual(DualModel),
}

impl Model {
    /// Validates `cfg` and builds the matching family.
    pub fn build(cfg: &ModelConfig) -> Result<Model> {
        cfg.validate()?;
        Ok(match cfg.family {
            Family::HighLevel => Model::HighLevel(HighLevelModel::new(cfg.clone())?),
            Family::Panoptic => Model::Panoptic(PanopticModel::new(cfg.clone())?),
            Family::Dual => Model::Dual(DualModel::new(cfg.clone())?),
            Family::Detection => {
                return Err(Error::Config(
                    "the detection family is built with DetectionModel, not as a sequence model".into(),
                ))
            }
        })
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            Model::HighLevel(m) => &m.cfg,
            Model::Panoptic(m) => &m.cfg,
            Model::Dual(m) => &m.cfg,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        match self {
            Model::HighLevel(m) => m.init(store, rng),
            Model::Panoptic(m) => m.init(store, rng),
            Model::Dual(m) => m.init(store, rng),
        }
    }

    /// Fresh parameters for this model drawn from `rng`.
    pub fn init_store(&self, rng: &mut Rng) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        self.init(&mut store, rng)?;
        Ok(store)
    }

    /// Runs `xs` (one `B×H×W×C` map per step) from `state`, or from zero state.
    pub fn forward(&self, s: &mut Session<'_>, xs: &[Var], task: Var, state: Option<&ModelState>) -> Result<Forward> {
        self.check_inputs(s, xs, task)?;
        match self {
            Model::HighLevel(m) => m.forward(s, xs, task, state),
            Model::Panoptic(m) => m.forward(s, xs, task, state),
            Model::Dual(m) => m.forward(s, xs, task, state),
        }
    }

    pub fn has_detection(&self) -> bool {
        matches!(self, Model::Dual(_))
    }

    fn check_inputs(&self, s: &Session<'_>, xs: &[Var], task: Var) -> Result<()> {
        let cfg = self.config();
        let first = xs.first().ok_or_else(|| Error::Shape("empty input sequence".into()))?;
        let b = s.graph.shape(*first).first().copied().unwrap_or(0);
        let want = [b, cfg.grid.rows, cfg.grid.cols, cfg.feature_channels];
        for &x in xs {
            if s.graph.shape(x) != want {
                return shape_err(format!("feature map {:?}, model expects {:?}", s.graph.shape(x), want));
            }
        }
        let mut want_task = vec![b];
        want_task.extend(cfg.task_shape());
        if s.graph.shape(task) != want_task.as_slice() {
            return shape_err(format!("task encoding {:?}, model expects {:?}", s.graph.shape(task), want_task));
        }
        Ok(())
    }
}

/// Combines features with the task: flat encodings pass through a tanh FC
/// layer (plus dropout) and scale channels; 2-D heatmaps scale positions.
#[derive(Clone, Debug)]
pub(crate) struct TaskGate {
    kind: TaskEncodingKind,
    fc: Option<Dense>,
    dropout: f64,
}

impl TaskGate {
    pub(crate) fn new(cfg: &ModelConfig) -> Self {
        let fc = cfg.task_encoding.is_flat().then(|| {
            let n: usize = cfg.task_shape().iter().product();
            Dense::new("task_fc", n, cfg.feature_channels)
        });
        TaskGate {
            kind: cfg.task_encoding,
            fc,
            dropout: cfg.task_dropout,
        }
    }

    pub(crate) fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        match &self.fc {
            Some(fc) => fc.init(store, rng),
            None => Ok(()),
        }
    }

    /// Applies the gate to every step; the FC output (and its dropout mask) is shared across steps.
    pub(crate) fn apply(&self, s: &mut Session<'_>, xs: &[Var], task: Var) -> Result<Vec<Var>> {
        match (&self.fc, self.kind) {
            (Some(fc), _) => {
                let z = fc.forward(s, task)?;
                let a = s.graph.tanh(z)?;
                let a = if self.dropout > 0.0 { s.dropout(a, self.dropout)? } else { a };
                xs.iter().map(|&x| s.graph.scale_channels(x, a)).collect()
            }
            (None, TaskEncodingKind::Heatmap2d) => xs.iter().map(|&x| s.graph.scale_spatial(x, task)).collect(),
            (None, kind) => Err(Error::Config(format!("task encoding {kind:?} cannot gate features"))),
        }
    }
}

/// Optional batch norm → flatten → dense(H·W) → softmax, applied to all steps at once.
#[derive(Clone, Debug)]
pub(crate) struct FixHead {
    bn: Option<BatchNorm>,
    out: Dense,
}

impl FixHead {
    pub(crate) fn new(prefix: &str, cfg: &ModelConfig, state_len: usize, channels: usize) -> Self {
        FixHead {
            bn: cfg.batch_norm.then(|| BatchNorm::new(&format!("{prefix}_bn"), channels)),
            out: Dense::new(&format!("{prefix}_out"), state_len, cfg.grid.cells()),
        }
    }

    pub(crate) fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        if let Some(bn) = &self.bn {
            bn.init(store);
        }
        self.out.init(store, rng)
    }

    pub(crate) fn apply(&self, s: &mut Session<'_>, hs: &[Var]) -> Result<Vec<Var>> {
        let stacked = stack_steps(s, hs)?;
        let x = match &self.bn {
            Some(bn) => bn.apply(s, stacked)?,
            None => stacked,
        };
        let flat = s.graph.flatten_rows(x)?;
        let logits = self.out.forward(s, flat)?;
        let p = s.graph.softmax(logits)?;
        split_steps(s, p, hs.len())
    }
}

/// Concatenates per-step `B×…` tensors into one `(T·B)×…` tensor.
pub(crate) fn stack_steps(s: &mut Session<'_>, xs: &[Var]) -> Result<Var> {
    if xs.len() == 1 {
        Ok(xs[0])
    } else {
        s.graph.concat(xs, 0)
    }
}

/// Inverse of [`stack_steps`].
pub(crate) fn split_steps(s: &mut Session<'_>, x: Var, steps: usize) -> Result<Vec<Var>> {
    if steps == 1 {
        return Ok(vec![x]);
    }
    let rows = s.graph.shape(x)[0];
    if rows % steps != 0 {
        return shape_err(format!("{rows} rows do not split into {steps} steps"));
    }
    let b = rows / steps;
    (0..steps).map(|t| s.graph.slice(x, 0, t * b, b)).collect()
}

/// Dense stack with ReLU hidden layers, optional dropout between layers and a sigmoid output unit.
#[derive(Clone, Debug)]
pub(crate) struct SigmoidMlp {
    layers: Vec<Dense>,
    dropout: f64,
}

impl SigmoidMlp {
    pub(crate) fn new(prefix: &str, input: usize, hidden: &[usize], dropout: f64) -> Self {
        let mut layers = Vec::new();
        let mut n = input;
        for (i, &u) in hidden.iter().chain(std::iter::once(&1)).enumerate() {
            layers.push(Dense::new(&format!("{prefix}{}", i + 1), n, u));
            n = u;
        }
        SigmoidMlp { layers, dropout }
    }

    pub(crate) fn input_len(&self) -> usize {
        self.layers[0].inputs
    }

    pub(crate) fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        self.layers.iter().try_for_each(|l| l.init(store, rng))
    }

    /// `x` is `N×input`; returns `N` probabilities.
    pub(crate) fn apply(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let cols = s.graph.shape(x).get(1).copied();
        if cols != Some(self.input_len()) {
            return shape_err(format!(
                "detection head expects {} inputs, got {:?}",
                self.input_len(),
                s.graph.shape(x)
            ));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(s, h)?;
            if i < last {
                h = s.graph.relu(h)?;
                if self.dropout > 0.0 {
                    h = s.dropout(h, self.dropout)?;
                }
            }
        }
        let p = s.graph.sigmoid(h)?;
        let n = s.graph.shape(p)[0];
        s.graph.reshape(p, &[n])
    }
}
