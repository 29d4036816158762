//! Sharpened random sequence models on a 3×3 grid with teacher-forced
//! reference decoders.

use std::sync::Arc;

use foveal::data::Source;
use foveal::encoding::{Cell, GridSpec};
use foveal::models::{DualArch, Head, Model, ModelConfig};
use foveal::nn::{ParamStore, Session};
use foveal::rng::stream;
use foveal::tensor::{Tensor, Var};
use rand::Rng;

pub const CH: usize = 2;
pub const CLASSES: usize = 3;

pub fn grid() -> GridSpec {
    GridSpec::with_cell_size(3, 3, 8)
}

pub fn random(shape: &[usize], seed: u64, name: &str, scale: f64) -> Tensor {
    let mut rng = stream(seed, name);
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale)).unwrap()
}

pub fn config(seed: u64) -> ModelConfig {
    let g = grid();
    match seed % 3 {
        0 => ModelConfig::panoptic(g, CH, CLASSES, 1, Head::Softmax),
        1 => ModelConfig::panoptic(g, CH, CLASSES, 2, Head::Softmax),
        _ => ModelConfig::dual(g, CH, CLASSES, [DualArch::A, DualArch::B, DualArch::C][(seed / 3 % 3) as usize]),
    }
}

pub struct Case {
    pub model: Model,
    pub store: ParamStore,
    pub source: Source,
    pub task: Tensor,
}

pub fn case(seed: u64) -> Case {
    let cfg = config(seed);
    let model = Model::build(&cfg).unwrap();
    let mut store = model.init_store(&mut stream(seed, "init")).unwrap();
    // Sharpen the output layer so the distributions are far from uniform.
    let key = ["fix_out.weight", "head_fc.weight"]
        .into_iter()
        .find(|k| store.params().contains_key(*k))
        .unwrap();
    let out = store.param(key).unwrap().map(|v| v * 8.0).unwrap();
    store.insert_param(key, out);
    let g = grid();
    let full = random(&[g.rows, g.cols, CH], seed, "full", 1.0);
    let blurred = random(&[g.rows, g.cols, CH], seed, "blurred", 0.3);
    let source = Source::blend(Arc::new(full), Arc::new(blurred), 1.0, false, g).unwrap();
    let mut shape = cfg.task_shape();
    let per: usize = shape.iter().product();
    let task = Tensor::from_fn(&[per], |i| if i % CLASSES == (seed as usize) % CLASSES { 1.0 } else { 0.0 }).unwrap();
    shape.insert(0, 1);
    let task = task.reshape(&shape[1..]).unwrap();
    Case {
        model,
        store,
        source,
        task,
    }
}

/// Teacher-forced outputs along `cells`: per step the next-fixation
/// distribution and, for dual models, the detection probability.
pub fn teacher_forced(c: &Case, cells: &[Cell]) -> (Vec<Vec<f64>>, Option<Vec<f64>>) {
    let mut s = Session::infer(&c.store);
    let xs: Vec<Var> = (0..cells.len())
        .map(|t| {
            let x = c.source.features(&cells[..=t]).unwrap();
            let shape: Vec<usize> = std::iter::once(1).chain(x.shape().iter().copied()).collect();
            s.constant(x.reshape(&shape).unwrap())
        })
        .collect();
    let shape: Vec<usize> = std::iter::once(1).chain(c.task.shape().iter().copied()).collect();
    let task = s.constant(c.task.reshape(&shape).unwrap());
    let out = c.model.forward(&mut s, &xs, task, None).unwrap();
    let fix = out.fix.iter().map(|&v| s.value(v).to_vec()).collect();
    let det = out.det.map(|d| d.iter().map(|&v| s.value(v).data()[0]).collect());
    (fix, det)
}

/// Step-by-step arg-max, lowest index on ties.
pub fn argmax_path(c: &Case, length: usize) -> Vec<Cell> {
    let g = grid();
    let mut cells = vec![g.center_cell()];
    while cells.len() < length {
        let (fix, _) = teacher_forced(c, &cells);
        let p = fix.last().unwrap();
        let best = (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b });
        cells.push(g.cell_at(best));
    }
    cells
}

pub fn path_log_prob(c: &Case, cells: &[Cell]) -> f64 {
    let (fix, _) = teacher_forced(c, &cells[..cells.len() - 1]);
    (1..cells.len()).map(|t| fix[t - 1][grid().index(cells[t])].ln()).sum()
}
