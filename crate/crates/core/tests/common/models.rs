//! Small randomised models on a 4×4 grid and helpers to run them.

use foveal::encoding::{GridSpec, TaskEncodingKind};
use foveal::models::{DualArch, Forward, Head, Model, ModelConfig};
use foveal::nn::{ParamStore, Session};
use foveal::rng::stream;
use foveal::tensor::{Tensor, Var};
use rand::Rng;

pub const B: usize = 3;
pub const CH: usize = 3;
pub const CLASSES: usize = 4;

pub fn grid() -> GridSpec {
    GridSpec::with_cell_size(4, 4, 8)
}

pub fn random(shape: &[usize], seed: u64, name: &str) -> Tensor {
    let mut rng = stream(seed, name);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
}

pub fn inputs(steps: usize, seed: u64) -> Vec<Tensor> {
    (0..steps).map(|t| random(&[B, 4, 4, CH], seed, &format!("x/{t}"))).collect()
}

pub fn task_for(cfg: &ModelConfig) -> Tensor {
    let mut shape = vec![B];
    shape.extend(cfg.task_shape());
    let per: usize = cfg.task_shape().iter().product();
    let mut data = vec![0.0; B * per];
    match cfg.task_encoding {
        TaskEncodingKind::OneHot => (0..B).for_each(|b| data[b * per + b % CLASSES] = 1.0),
        _ => data.iter_mut().for_each(|v| *v = 0.5),
    }
    Tensor::from_vec(&shape, data).unwrap()
}

pub fn build(cfg: &ModelConfig, seed: u64) -> (Model, ParamStore) {
    let model = Model::build(cfg).unwrap();
    let mut store = model.init_store(&mut stream(seed, "init")).unwrap();
    // Non-trivial biases and batch-norm statistics so the composition is exercised.
    let names: Vec<String> = store.params().keys().cloned().collect();
    for (i, n) in names.iter().enumerate() {
        if n.ends_with("bias") || n.ends_with("beta") || n.ends_with("gamma") {
            let shape = store.param(n).unwrap().shape().to_vec();
            let t = random(&shape, seed, &format!("p/{i}")).map(|v| v * 0.5 + 0.2).unwrap();
            store.insert_param(n.clone(), t);
        }
    }
    let bufs: Vec<(String, Vec<usize>)> = store.buffers().iter().map(|(k, t)| (k.clone(), t.shape().to_vec())).collect();
    for (k, shape) in bufs {
        if k.ends_with("moving_mean") {
            store.insert_buffer(k, random(&shape, seed, "mm").map(|v| 0.1 * v).unwrap());
        } else if k.ends_with("moving_var") {
            store.insert_buffer(k, random(&shape, seed, "mv").map(|v| 1.0 + 0.5 * v.abs()).unwrap());
        } else if k.ends_with("updates") {
            store.insert_buffer(k, Tensor::scalar(1.0).unwrap());
        }
    }
    (model, store)
}

pub fn run(model: &Model, store: &ParamStore, xs: &[Tensor], task: &Tensor) -> (Vec<Tensor>, Option<Vec<Tensor>>) {
    let mut s = Session::infer(store);
    let xv: Vec<Var> = xs.iter().map(|x| s.constant(x.clone())).collect();
    let tv = s.constant(task.clone());
    let out = model.forward(&mut s, &xv, tv, None).unwrap();
    let fix = out.fix.iter().map(|&v| s.value(v).clone()).collect();
    let det = out.det.map(|d| d.iter().map(|&v| s.value(v).clone()).collect());
    (fix, det)
}

pub fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn configs() -> Vec<ModelConfig> {
    let g = grid();
    let mut heat = ModelConfig::high_level(g, CH, CLASSES);
    heat.task_encoding = TaskEncodingKind::Heatmap2d;
    vec![
        ModelConfig::high_level(g, CH, CLASSES),
        heat,
        ModelConfig::panoptic(g, CH, CLASSES, 1, Head::Softmax),
        ModelConfig::panoptic(g, CH, CLASSES, 3, Head::Softmax),
        ModelConfig::panoptic(g, CH, CLASSES, 1, Head::Sigmoid),
        ModelConfig::dual(g, CH, CLASSES, DualArch::A),
        ModelConfig::dual(g, CH, CLASSES, DualArch::B),
        ModelConfig::dual(g, CH, CLASSES, DualArch::C),
    ]
}

pub fn swap_cells(store: &ParamStore) -> ParamStore {
    let mut out = ParamStore::new();
    for (k, t) in store.params() {
        let k = if let Some(r) = k.strip_prefix("fix_lstm.") {
            format!("det_lstm.{r}")
        } else if let Some(r) = k.strip_prefix("det_lstm.") {
            format!("fix_lstm.{r}")
        } else {
            k.clone()
        };
        out.insert_param(k, t.clone());
    }
    for (k, t) in store.buffers() {
        out.insert_buffer(k.clone(), t.clone());
    }
    out
}

pub fn forward_values(model: &Model, store: &ParamStore, xs: &[Tensor], task: &Tensor) -> (Forward, Session<'static>) {
    let store: &'static ParamStore = Box::leak(Box::new(store.clone()));
    let mut s = Session::infer(store);
    let xv: Vec<Var> = xs.iter().map(|x| s.constant(x.clone())).collect();
    let tv = s.constant(task.clone());
    let out = model.forward(&mut s, &xv, tv, None).unwrap();
    (out, s)
}
