use super::{split_steps, stack_steps, Forward, Head, ModelConfig, ModelState};
use crate::error::Result;
use crate::nn::{glorot_uniform, BatchNorm, ConvLstmCell, Dense, ParamStore, Session};
use crate::rng::Rng;
use crate::tensor::{Tensor, Var};

/// Features ⧺ spatial task planes → `d`×(ConvLSTM → batch norm) → conv head.
///
/// The head convolution (`K=2, S=1, P=1`) yields `(H+1)×(W+1)`; its trailing
/// row and column are cropped to return to the `H×W` grid.
#[derive(Clone, Debug)]
pub struct PanopticModel {
    pub cfg: ModelConfig,
    pub cells: Vec<ConvLstmCell>,
    pub norms: Vec<BatchNorm>,
    pub out_fc: Option<Dense>,
}

pub const HEAD_CONV_KERNEL: &str = "head_conv.kernel";
pub const HEAD_CONV_BIAS: &str = "head_conv.bias";

impl PanopticModel {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        let mut cells = Vec::new();
        let mut norms = Vec::new();
        let mut cin = cfg.feature_channels + cfg.classes;
        for i in 0..cfg.depth {
            cells.push(cfg.lstm.cell(&format!("lstm{}", i + 1), cin));
            norms.push(BatchNorm::new(&format!("bn{}", i + 1), cfg.lstm.filters));
            cin = cfg.lstm.filters;
        }
        let out_fc = (cfg.head == Head::Softmax).then(|| Dense::new("head_fc", cfg.grid.cells(), cfg.grid.cells()));
        Ok(PanopticModel {
            cfg,
            cells,
            norms,
            out_fc,
        })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        for (c, n) in self.cells.iter().zip(&self.norms) {
            c.init(store, rng)?;
            n.init(store);
        }
        let f = self.cfg.lstm.filters;
        store.insert_param(HEAD_CONV_KERNEL, glorot_uniform(&[2, 2, f, 1], 4 * f, 4, rng)?);
        store.insert_param(HEAD_CONV_BIAS, Tensor::zeros(&[1]));
        if let Some(fc) = &self.out_fc {
            fc.init(store, rng)?;
        }
        Ok(())
    }

    pub fn forward(&self, s: &mut Session<'_>, xs: &[Var], task: Var, state: Option<&ModelState>) -> Result<Forward> {
        let steps = xs.len();
        let mut seq: Vec<Var> = xs.iter().map(|&x| s.graph.concat(&[x, task], 3)).collect::<Result<_>>()?;
        let mut final_states = Vec::with_capacity(self.cells.len());
        for (i, (cell, bn)) in self.cells.iter().zip(&self.norms).enumerate() {
            let mut st = state.and_then(|m| m.cells.get(i).copied().flatten());
            let mut hs = Vec::with_capacity(steps);
            for &x in &seq {
                let next = cell.step(s, x, st)?;
                hs.push(next.h);
                st = Some(next);
            }
            final_states.push(st);
            let stacked = stack_steps(s, &hs)?;
            let normed = bn.apply(s, stacked)?;
            seq = split_steps(s, normed, steps)?;
        }
        let (rows, cols) = (self.cfg.grid.rows, self.cfg.grid.cols);
        let stacked = stack_steps(s, &seq)?;
        let k = s.param(HEAD_CONV_KERNEL)?;
        let b = s.param(HEAD_CONV_BIAS)?;
        let conv = s.graph.conv2d(stacked, k, b, 1, 1)?;
        let crop = s.graph.slice(conv, 1, 0, rows)?;
        let crop = s.graph.slice(crop, 2, 0, cols)?;
        let p = match &self.out_fc {
            None => {
                let a = s.graph.sigmoid(crop)?;
                s.graph.flatten_rows(a)?
            }
            Some(fc) => {
                let a = s.graph.relu(crop)?;
                let flat = s.graph.flatten_rows(a)?;
                let logits = fc.forward(s, flat)?;
                s.graph.softmax(logits)?
            }
        };
        Ok(Forward {
            fix: split_steps(s, p, steps)?,
            det: None,
            state: ModelState { cells: final_states },
            handoff: Vec::new(),
            det_inputs: Vec::new(),
        })
    }
}
