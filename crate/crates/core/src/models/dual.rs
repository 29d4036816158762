use super::{stack_steps, split_steps, DualArch, FixHead, Forward, ModelConfig, ModelState, SigmoidMlp, TaskGate};
use crate::error::Result;
use crate::nn::{ConvLstmCell, LstmState, ParamStore, Session};
use crate::rng::Rng;
use crate::tensor::Var;

/// Joint fixation prediction and target detection over a shared task-gated input.
///
/// * A: after each fixation step, the fixation state `(h, c)` is the
///   detection ConvLSTM's previous state for the same step.
/// * B: the detection ConvLSTM runs first and recurs on its own state; its
///   fresh state is the fixation ConvLSTM's previous state.
/// * C: no detection ConvLSTM; the detection head reads
///   `flatten(x_t) ⧺ flatten(h_fix)` with `h_fix` just produced at step t.
#[derive(Clone, Debug)]
pub struct DualModel {
    pub cfg: ModelConfig,
    pub arch: DualArch,
    pub(crate) gate: TaskGate,
    pub fix_cell: ConvLstmCell,
    pub det_cell: Option<ConvLstmCell>,
    pub(crate) fix_head: FixHead,
    pub(crate) det_head: SigmoidMlp,
}

impl DualModel {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        let arch = cfg.architecture.expect("validated dual config");
        let fix_cell = cfg.lstm.cell("fix_lstm", cfg.feature_channels);
        let (h, w) = fix_cell.output_size(cfg.grid.rows, cfg.grid.cols)?;
        let state_len = h * w * cfg.lstm.filters;
        let det_cell = (arch != DualArch::C).then(|| cfg.lstm.cell("det_lstm", cfg.feature_channels));
        let det_input = match arch {
            DualArch::C => cfg.grid.cells() * cfg.feature_channels + state_len,
            _ => state_len,
        };
        Ok(DualModel {
            arch,
            gate: TaskGate::new(&cfg),
            fix_head: FixHead::new("fix", &cfg, state_len, cfg.lstm.filters),
            det_head: SigmoidMlp::new("det_fc", det_input, &cfg.det_units, cfg.det_dropout),
            fix_cell,
            det_cell,
            cfg,
        })
    }

    /// Length of one detection head input row.
    pub fn det_input_len(&self) -> usize {
        self.det_head.input_len()
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        self.gate.init(store, rng)?;
        self.fix_cell.init(store, rng)?;
        if let Some(c) = &self.det_cell {
            c.init(store, rng)?;
        }
        self.fix_head.init(store, rng)?;
        self.det_head.init(store, rng)
    }

    /// State slots: `[fixation, detection]`.
    pub fn forward(&self, s: &mut Session<'_>, xs: &[Var], task: Var, state: Option<&ModelState>) -> Result<Forward> {
        let steps = xs.len();
        let gated = self.gate.apply(s, xs, task)?;
        let slot = |i: usize| state.and_then(|m| m.cells.get(i).copied().flatten());
        let (mut fix_st, mut det_st): (Option<LstmState>, Option<LstmState>) = (slot(0), slot(1));
        let mut fix_hs = Vec::with_capacity(steps);
        let mut det_rows = Vec::with_capacity(steps);
        let mut handoff = Vec::new();
        let mut det_inputs = Vec::new();
        for &x in &gated {
            match (self.arch, &self.det_cell) {
                (DualArch::A, Some(det_cell)) => {
                    let f = self.fix_cell.step(s, x, fix_st)?;
                    handoff.push(f);
                    let d = det_cell.step(s, x, Some(f))?;
                    det_rows.push(s.graph.flatten_rows(d.h)?);
                    fix_st = Some(f);
                    det_st = Some(d);
                }
                (DualArch::B, Some(det_cell)) => {
                    let d = det_cell.step(s, x, det_st)?;
                    handoff.push(d);
                    let f = self.fix_cell.step(s, x, Some(d))?;
                    det_rows.push(s.graph.flatten_rows(d.h)?);
                    fix_st = Some(f);
                    det_st = Some(d);
                }
                _ => {
                    let f = self.fix_cell.step(s, x, fix_st)?;
                    let xf = s.graph.flatten_rows(x)?;
                    let hf = s.graph.flatten_rows(f.h)?;
                    let joined = s.graph.concat(&[xf, hf], 1)?;
                    det_inputs.push(joined);
                    det_rows.push(joined);
                    fix_st = Some(f);
                }
            }
            fix_hs.push(fix_st.expect("set above").h);
        }
        let fix = self.fix_head.apply(s, &fix_hs)?;
        let stacked = stack_steps(s, &det_rows)?;
        let p = self.det_head.apply(s, stacked)?;
        let det = split_steps(s, p, steps)?;
        Ok(Forward {
            fix,
            det: Some(det),
            state: ModelState {
                cells: vec![fix_st, det_st],
            },
            handoff,
            det_inputs,
        })
    }
}
