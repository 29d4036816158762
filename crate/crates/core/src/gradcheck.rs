//! Finite-difference audit of the tape, op by op and for whole models.
//!
//! Everything runs in 64-bit precision. A group's error is the largest
//! absolute gap between analytic and central-difference gradients divided by
//! the largest gradient magnitude in the group.

use rand::Rng as _;
use serde::Serialize;

use crate::encoding::{GridSpec, LabelKind, TaskEncodingKind};
use crate::error::Result;
use crate::models::loss::{bce_loss, dual_loss, seq_ce_loss};
use crate::models::{DualArch, Head, Model, ModelConfig};
use crate::nn::{ParamStore, Session};
use crate::rng::{self, Rng};
use crate::tensor::{with_default_dtype, Conv2dGeometry, DType, Graph, Tensor, Var};

/// Tolerance for every group.
pub const TOLERANCE: f64 = 1e-3;
/// Tighter tolerance for the convolution groups.
pub const CONV_TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-5;
/// Elements probed per parameter tensor in model checks.
const MODEL_PROBES: usize = 24;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupResult {
    pub scope: String,
    pub group: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GroupResult {
    fn new(scope: &str, group: &str, err: f64, tolerance: f64) -> Self {
        GroupResult {
            scope: scope.to_string(),
            group: group.to_string(),
            max_rel_err: err,
            tolerance,
            passed: err < tolerance,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Ops,
    Models,
    All,
}

/// Plain-text table of results.
pub fn table(results: &[GroupResult]) -> String {
    let mut out = format!("{:<22} {:<28} {:>12} {:>9}  result\n", "scope", "group", "max rel err", "tol");
    for r in results {
        out.push_str(&format!(
            "{:<22} {:<28} {:>12.3e} {:>9.0e}  {}\n",
            r.scope,
            r.group,
            r.max_rel_err,
            r.tolerance,
            if r.passed { "pass" } else { "FAIL" }
        ));
    }
    out
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-10);
    let gap = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    gap / scale
}

/// Values in `[-1, 1]` kept at least 0.05 away from every point in `kinks`.
fn smooth_values(n: usize, kinks: &[f64], rng: &mut Rng) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let v: f64 = rng.random_range(-1.0..1.0);
            if kinks.iter().all(|k| (v - k).abs() > 0.05) {
                break v;
            }
        })
        .collect()
}

fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec_dtype(shape, smooth_values(n, &[0.0], rng), DType::F64).expect("valid shape")
}

fn positive(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    Tensor::from_vec_dtype(shape, v, DType::F64).expect("valid shape")
}

type OpFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

struct OpCase {
    name: &'static str,
    inputs: Vec<Tensor>,
    f: OpFn,
    tolerance: f64,
}

fn case(name: &'static str, inputs: Vec<Tensor>, f: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static) -> OpCase {
    OpCase {
        name,
        inputs,
        f: Box::new(f),
        tolerance: TOLERANCE,
    }
}

/// `Σ w ⊙ f(inputs)` with fixed random weights `w`.
fn projected(case: &OpCase, inputs: &[Tensor], w: Option<&Tensor>, record: bool) -> Result<(Graph, Vec<Var>, Var, Tensor)> {
    let mut g = if record { Graph::new() } else { Graph::no_grad() };
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = (case.f)(&mut g, &vars)?;
    let w = match w {
        Some(w) => w.clone(),
        None => random(g.shape(out), &mut rng::stream(99, "gradcheck/projection")),
    };
    let wv = g.constant(w.clone());
    let prod = g.mul(out, wv)?;
    let loss = g.sum(prod)?;
    Ok((g, vars, loss, w))
}

fn check_case(case: &OpCase) -> Result<GroupResult> {
    let (g, vars, loss, w) = projected(case, &case.inputs, None, true)?;
    let grads = g.backward(loss)?;
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for (i, v) in vars.iter().enumerate() {
        analytic.extend_from_slice(grads.get(*v)?.data());
        for j in 0..case.inputs[i].len() {
            let eval = |delta: f64| -> Result<f64> {
                let mut inputs = case.inputs.clone();
                let mut d = inputs[i].to_vec();
                d[j] += delta;
                inputs[i] = Tensor::from_vec_dtype(inputs[i].shape(), d, DType::F64)?;
                let (g, _, l, _) = projected(case, &inputs, Some(&w), false)?;
                g.value(l).item()
            };
            numeric.push((eval(STEP)? - eval(-STEP)?) / (2.0 * STEP));
        }
    }
    Ok(GroupResult::new("op", case.name, rel_err(&analytic, &numeric), case.tolerance))
}

fn op_cases() -> Vec<OpCase> {
    let mut r = rng::stream(7, "gradcheck/ops");
    let r = &mut r;
    let kinked = |shape: &[usize], kinks: &[f64], r: &mut Rng| {
        let n = shape.iter().product();
        Tensor::from_vec_dtype(shape, smooth_values(n, kinks, r), DType::F64).expect("valid shape")
    };
    let mut cases = vec![
        case("add", vec![random(&[3, 4], r), random(&[3, 4], r)], |g, v| g.add(v[0], v[1])),
        case("sub", vec![random(&[3, 4], r), random(&[3, 4], r)], |g, v| g.sub(v[0], v[1])),
        case("mul", vec![random(&[3, 4], r), random(&[3, 4], r)], |g, v| g.mul(v[0], v[1])),
        case("tanh", vec![random(&[5], r)], |g, v| g.tanh(v[0])),
        case("sigmoid", vec![random(&[5], r)], |g, v| g.sigmoid(v[0])),
        case("hard_sigmoid", vec![kinked(&[8], &[-2.5 / 3.0, 2.5 / 3.0], r)], |g, v| {
            let x = g.scale(v[0], 3.0)?;
            g.hard_sigmoid(x)
        }),
        case("relu", vec![kinked(&[6], &[0.0], r)], |g, v| g.relu(v[0])),
        case("exp", vec![random(&[5], r)], |g, v| g.exp(v[0])),
        case("log", vec![positive(&[5], r)], |g, v| g.log(v[0])),
        case("clip", vec![kinked(&[8], &[-0.5, 0.5], r)], |g, v| g.clip(v[0], -0.5, 0.5)),
        case("scale", vec![random(&[4], r)], |g, v| g.scale(v[0], -1.7)),
        case("offset", vec![random(&[4], r)], |g, v| g.offset(v[0], 0.3)),
        case("dense", vec![random(&[3, 4], r), random(&[4, 5], r), random(&[5], r)], |g, v| {
            g.dense(v[0], v[1], v[2])
        }),
        case("softmax", vec![random(&[3, 6], r)], |g, v| g.softmax(v[0])),
        case("sum", vec![random(&[2, 3], r)], |g, v| g.sum(v[0])),
        case("mean", vec![random(&[2, 3], r)], |g, v| g.mean(v[0])),
        case("reshape", vec![random(&[2, 6], r)], |g, v| g.reshape(v[0], &[3, 4])),
        case("flatten_rows", vec![random(&[2, 2, 3], r)], |g, v| g.flatten_rows(v[0])),
        case("concat", vec![random(&[2, 3, 2], r), random(&[2, 3, 1], r)], |g, v| g.concat(&[v[0], v[1]], 2)),
        case("slice", vec![random(&[3, 4, 2], r)], |g, v| g.slice(v[0], 1, 1, 2)),
        case("scale_channels", vec![random(&[2, 3, 3, 4], r), random(&[2, 4], r)], |g, v| {
            g.scale_channels(v[0], v[1])
        }),
        case("scale_spatial", vec![random(&[2, 3, 3, 4], r), random(&[2, 3, 3], r)], |g, v| {
            g.scale_spatial(v[0], v[1])
        }),
        case("batch_norm", vec![random(&[4, 2, 2, 3], r), positive(&[3], r), random(&[3], r)], |g, v| {
            Ok(g.batch_norm(v[0], v[1], v[2], 1e-3)?.0)
        }),
        case("channel_affine", vec![random(&[2, 2, 3], r)], |g, v| {
            g.channel_affine(v[0], &[0.5, -1.0, 2.0], &[0.1, 0.2, 0.3])
        }),
    ];
    let conv = [
        ("conv2d", 3, 1, Conv2dGeometry::same(3)),
        ("conv2d (stride 2)", 4, 2, Conv2dGeometry::symmetric(2, 1)),
        ("conv2d (even kernel)", 2, 1, Conv2dGeometry::same(2)),
    ];
    for (name, k, _, geom) in conv {
        cases.push(OpCase {
            tolerance: CONV_TOLERANCE,
            ..case(name, vec![random(&[2, 4, 4, 3], r), random(&[k, k, 3, 5], r), random(&[5], r)], move |g, v| {
                g.conv2d_geom(v[0], v[1], v[2], geom)
            })
        });
    }
    cases
}

pub fn check_ops() -> Result<Vec<GroupResult>> {
    with_default_dtype(DType::F64, || op_cases().iter().map(check_case).collect())
}

/// Inputs, task and labels of a tiny gradient-check problem.
struct Problem {
    xs: Vec<Tensor>,
    task: Tensor,
    labels: Vec<Tensor>,
    det: Vec<Tensor>,
}

fn problem(cfg: &ModelConfig, batch: usize, steps: usize, rng: &mut Rng) -> Result<Problem> {
    let g = cfg.grid;
    let xs = (0..steps)
        .map(|_| random(&[batch, g.rows, g.cols, cfg.feature_channels], rng))
        .collect();
    let mut tshape = vec![batch];
    tshape.extend(cfg.task_encoding.shape(cfg.classes, &g));
    let task = positive(&tshape, rng);
    let labels = (0..steps)
        .map(|_| {
            let v: Vec<f64> = (0..batch * g.cells()).map(|_| rng.random_range(0.0..1.0)).collect();
            let rows: Vec<f64> = v
                .chunks(g.cells())
                .flat_map(|c| {
                    let z: f64 = c.iter().sum();
                    c.iter().map(move |x| x / z)
                })
                .collect();
            Tensor::from_vec_dtype(&[batch, g.cells()], rows, DType::F64)
        })
        .collect::<Result<_>>()?;
    let det = (0..steps)
        .map(|_| {
            let v = (0..batch).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
            Tensor::from_vec_dtype(&[batch], v, DType::F64)
        })
        .collect::<Result<_>>()?;
    Ok(Problem { xs, task, labels, det })
}

fn model_loss(model: &Model, store: &ParamStore, p: &Problem) -> Result<(f64, Option<std::collections::BTreeMap<String, Tensor>>)> {
    let mut s = Session::train(store, None);
    let xs: Vec<Var> = p.xs.iter().map(|x| s.constant(x.clone())).collect();
    let task = s.constant(p.task.clone());
    let out = model.forward(&mut s, &xs, task, None)?;
    let ys: Vec<Var> = p.labels.iter().map(|y| s.constant(y.clone())).collect();
    let mut loss = seq_ce_loss(&mut s.graph, &out.fix, &ys)?;
    if let Some(det) = &out.det {
        let l = &model.config().loss;
        let mut acc: Option<Var> = None;
        for (&d, y) in det.iter().zip(&p.det) {
            let b = bce_loss(&mut s.graph, d, y, Some((l.w1, l.w0)))?;
            acc = Some(match acc {
                None => b,
                Some(a) => s.graph.add(a, b)?,
            });
        }
        loss = dual_loss(&mut s.graph, loss, acc.expect("steps"), l)?;
    }
    let value = s.value(loss).item()?;
    Ok((value, Some(s.param_grads(loss)?)))
}

/// Checks every parameter tensor of `cfg`'s model against finite differences.
pub fn check_model(scope: &str, cfg: &ModelConfig, steps: usize) -> Result<Vec<GroupResult>> {
    with_default_dtype(DType::F64, || {
        let model = Model::build(cfg)?;
        let mut r = rng::stream(11, &format!("gradcheck/{scope}"));
        let mut store = model.init_store(&mut r)?;
        // Non-zero biases so no gate sits at a symmetric point.
        for t in store.params_mut().values_mut() {
            if t.rank() == 1 {
                *t = random(t.shape(), &mut r).map(|v| v * 0.1)?;
            }
        }
        let p = problem(cfg, 2, steps, &mut r)?;
        let (_, grads) = model_loss(&model, &store, &p)?;
        let grads = grads.expect("recorded");
        let mut out = Vec::new();
        let names: Vec<String> = store.params().keys().cloned().collect();
        for name in names {
            let base = store.param(&name)?.clone();
            let analytic_all = grads
                .get(&name)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros_dtype(base.shape(), DType::F64));
            let n = base.len();
            let stride = n.div_ceil(MODEL_PROBES).max(1);
            let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
            for j in (0..n).step_by(stride) {
                let mut eval = |delta: f64| -> Result<f64> {
                    let mut d = base.to_vec();
                    d[j] += delta;
                    store.insert_param(name.clone(), Tensor::from_vec_dtype(base.shape(), d, DType::F64)?);
                    Ok(model_loss(&model, &store, &p)?.0)
                };
                let num = (eval(STEP)? - eval(-STEP)?) / (2.0 * STEP);
                analytic.push(analytic_all.data()[j]);
                numeric.push(num);
            }
            store.insert_param(name.clone(), base);
            out.push(GroupResult::new(scope, &name, rel_err(&analytic, &numeric), TOLERANCE));
        }
        Ok(out)
    })
}

/// The model configurations audited by [`run`]: every family on a 4×4 grid.
pub fn model_suite() -> Vec<(String, ModelConfig)> {
    let g = GridSpec::with_cell_size(4, 4, 8);
    let (ch, classes) = (3, 3);
    let mut suite = vec![("high-level".to_string(), ModelConfig::high_level(g, ch, classes))];
    let mut heat = ModelConfig::high_level(g, ch, classes);
    heat.task_encoding = TaskEncodingKind::Heatmap2d;
    suite.push(("high-level (heatmap)".into(), heat));
    for d in [1, 3] {
        suite.push((format!("panoptic d={d}"), ModelConfig::panoptic(g, ch, classes, d, Head::Softmax)));
    }
    let mut sig = ModelConfig::panoptic(g, ch, classes, 1, Head::Sigmoid);
    sig.label = LabelKind::Gaussian;
    suite.push(("panoptic sigmoid".into(), sig));
    for arch in [DualArch::A, DualArch::B, DualArch::C] {
        suite.push((format!("dual {arch:?}"), ModelConfig::dual(g, ch, classes, arch)));
    }
    for (_, cfg) in suite.iter_mut() {
        cfg.task_dropout = 0.0;
        cfg.det_dropout = 0.0;
    }
    suite
}

/// Runs the op and/or model audits with `T = 3`.
pub fn run(scope: Scope) -> Result<Vec<GroupResult>> {
    let mut out = Vec::new();
    if matches!(scope, Scope::Ops | Scope::All) {
        out.extend(check_ops()?);
    }
    if matches!(scope, Scope::Models | Scope::All) {
        for (name, cfg) in model_suite() {
            out.extend(check_model(&name, &cfg, 3)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ops_pass() {
        for r in check_ops().unwrap() {
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn models_pass() {
        let results = run(Scope::Models).unwrap();
        eprintln!("{}", table(&results));
        assert!(results.iter().all(|r| r.passed));
    }

    #[test]
    fn constants_get_no_gradient_entry() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(&[3]));
        let w = g.param(Tensor::ones(&[3]));
        let y = g.mul(x, w).unwrap();
        let l = g.sum(y).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.get(x).is_err());
        assert!(grads.get(w).is_ok());
    }
}
