//! Inference-time scanpath generation.

use std::cmp::Ordering;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Source;
use crate::encoding::{Cell, GridSpec};
use crate::error::{Error, Result};
use crate::models::{Model, TensorState};
use crate::nn::{ParamStore, Session};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// A decoded scanpath starting at the centre cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Beam {
    pub cells: Vec<Cell>,
    /// Sum of the natural-log probabilities of every generated fixation.
    pub log_prob: f64,
    /// Dual models: target-found probability of each generated fixation.
    pub det: Vec<f64>,
}

/// One expansion candidate: extend beam `beam` with `cell`.
struct Candidate {
    score: f64,
    cell: Cell,
    beam: usize,
}

/// Best first; ties go to the lower row, then column, then earlier beam.
fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.cell.row.cmp(&b.cell.row))
        .then(a.cell.col.cmp(&b.cell.col))
        .then(a.beam.cmp(&b.beam))
}

/// Per-beam outputs of one batched model step.
struct StepOut {
    probs: Vec<Vec<f64>>,
    det: Option<Vec<f64>>,
    state: TensorState,
}

fn step(
    model: &Model,
    store: &ParamStore,
    source: &Source,
    task: &Tensor,
    beams: &[Beam],
    state: Option<&TensorState>,
) -> Result<StepOut> {
    let xs = beams
        .iter()
        .map(|b| source.features(&b.cells))
        .collect::<Result<Vec<_>>>()?;
    let x = Tensor::stack(&xs)?;
    let t = Tensor::stack(&vec![task.clone(); beams.len()])?;
    let mut s = Session::infer(store);
    let xv = s.constant(x);
    let tv = s.constant(t);
    let st = state.map(|st| st.attach(&mut s));
    let out = model.forward(&mut s, &[xv], tv, st.as_ref())?;
    let p = s.value(out.fix[0]);
    let n = p.shape()[1];
    let probs = p.data().chunks(n).map(|r| r.to_vec()).collect();
    let det = out.det.as_ref().map(|d| s.value(d[0]).to_vec());
    Ok(StepOut {
        probs,
        det,
        state: TensorState::detach(&out.state, &s),
    })
}

/// Global top-`m` beam search for scanpaths of `length` fixations
/// (including the centre start). Returns the beams best-first.
pub fn beam_search(
    model: &Model,
    store: &ParamStore,
    source: &Source,
    task: &Tensor,
    m: usize,
    length: usize,
) -> Result<Vec<Beam>> {
    if m == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    if length < 2 {
        return Err(Error::Config(format!("scanpath length must be at least 2, got {length}")));
    }
    let g: GridSpec = model.config().grid;
    let mut beams = vec![Beam {
        cells: vec![g.center_cell()],
        log_prob: 0.0,
        det: Vec::new(),
    }];
    let mut state: Option<TensorState> = None;
    for _ in 1..length {
        let out = step(model, store, source, task, &beams, state.as_ref())?;
        let mut cands = Vec::with_capacity(beams.len() * g.cells());
        for (b, beam) in beams.iter().enumerate() {
            for (i, &p) in out.probs[b].iter().enumerate() {
                cands.push(Candidate {
                    score: beam.log_prob + p.ln(),
                    cell: g.cell_at(i),
                    beam: b,
                });
            }
        }
        cands.sort_by(rank);
        cands.truncate(m);
        let parents: Vec<usize> = cands.iter().map(|c| c.beam).collect();
        beams = cands
            .iter()
            .map(|c| {
                let parent = &beams[c.beam];
                let mut cells = parent.cells.clone();
                cells.push(c.cell);
                let mut det = parent.det.clone();
                // Detection refers to the fixation just consumed; the start is not scored.
                if let Some(d) = &out.det {
                    if parent.cells.len() > 1 {
                        det.push(d[c.beam]);
                    }
                }
                Beam {
                    cells,
                    log_prob: c.score,
                    det,
                }
            })
            .collect();
        state = Some(out.state.gather(&parents)?);
    }
    if model.has_detection() {
        let out = step(model, store, source, task, &beams, state.as_ref())?;
        let d = out.det.expect("dual model emits detection");
        for (beam, p) in beams.iter_mut().zip(d) {
            beam.det.push(p);
        }
    }
    Ok(beams)
}

/// Arg-max decoding: beam search with width one.
pub fn greedy(model: &Model, store: &ParamStore, source: &Source, task: &Tensor, length: usize) -> Result<Beam> {
    Ok(beam_search(model, store, source, task, 1, length)?.remove(0))
}

/// Uniform draw from `pool`, the baseline of replaying a random human scanpath.
pub fn random_scanpath<'a, T>(pool: &'a [T], rng: &mut Rng) -> Result<&'a T> {
    if pool.is_empty() {
        return Err(Error::Data("random scanpath from an empty pool".into()));
    }
    Ok(&pool[rng.random_range(0..pool.len())])
}
