use super::{Forward, ModelConfig, ModelState, TaskGate, FixHead};
use crate::error::Result;
use crate::nn::{ConvLstmCell, ParamStore, Session};
use crate::rng::Rng;
use crate::tensor::Var;

/// Task gate → ConvLSTM → batch norm → flatten → dense(H·W) → softmax.
#[derive(Clone, Debug)]
pub struct HighLevelModel {
    pub cfg: ModelConfig,
    pub(crate) gate: TaskGate,
    pub cell: ConvLstmCell,
    pub(crate) head: FixHead,
}

impl HighLevelModel {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        let cell = cfg.lstm.cell("fix_lstm", cfg.feature_channels);
        let (h, w) = cell.output_size(cfg.grid.rows, cfg.grid.cols)?;
        let head = FixHead::new("fix", &cfg, h * w * cfg.lstm.filters, cfg.lstm.filters);
        Ok(HighLevelModel {
            gate: TaskGate::new(&cfg),
            cell,
            head,
            cfg,
        })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        self.gate.init(store, rng)?;
        self.cell.init(store, rng)?;
        self.head.init(store, rng)
    }

    pub fn forward(&self, s: &mut Session<'_>, xs: &[Var], task: Var, state: Option<&ModelState>) -> Result<Forward> {
        let gated = self.gate.apply(s, xs, task)?;
        let mut st = state.and_then(|m| m.cells.first().copied().flatten());
        let mut hs = Vec::with_capacity(xs.len());
        for x in gated {
            let next = self.cell.step(s, x, st)?;
            hs.push(next.h);
            st = Some(next);
        }
        let fix = self.head.apply(s, &hs)?;
        Ok(Forward {
            fix,
            det: None,
            state: ModelState { cells: vec![st] },
            handoff: Vec::new(),
            det_inputs: Vec::new(),
        })
    }
}
