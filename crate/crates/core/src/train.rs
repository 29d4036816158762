//! Teacher-forced training with per-epoch validation and early stopping.
//!
//! Sequence models read the human fixations `0..T−1` and are scored against
//! fixation `t+1` at every step; the last step repeats the final fixation as
//! its label. Dual models additionally score the detection output at step `t`
//! against whether fixation `t` landed on the target.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{crop_at, Checkpoint, FeatureStore, InputMode, ScanpathRecord, Variant};
use crate::encoding::{
    detection_labels, label_grid, task_heatmap, task_onehot, task_onehot_spatial, BBox, Cell, GridSpec,
    TaskEncodingKind,
};
use crate::error::{Error, Result};
use crate::models::loss::{bce_loss, dual_loss, seq_ce_loss};
use crate::models::{DetectionModel, Model, ModelConfig};
use crate::nn::{Adam, AdamConfig, ParamStore, Session};
use crate::rng;
use crate::tensor::{Tensor, Var};

/// Optimizer and schedule settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 100,
            patience: 5,
            batch_size: 256,
            optimizer: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config("epochs, patience and batch size must be positive".into()));
        }
        if !(self.optimizer.lr > 0.0 && self.optimizer.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.optimizer.lr)));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    /// Fixation and detection components of the training loss (dual models).
    pub train_fix: Option<f64>,
    pub train_det: Option<f64>,
    pub wall_secs: f64,
}

/// CSV rendering of a training log.
pub fn log_csv(rows: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_loss,valid_loss,wall_secs,train_fix,train_det\n");
    for r in rows {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{:.3},{},{}\n",
            r.epoch,
            r.train_loss,
            r.valid_loss,
            r.wall_secs,
            opt(r.train_fix),
            opt(r.train_det)
        ));
    }
    out
}

/// A batch objective: the scalar to minimise plus its logged components.
pub struct LossParts {
    pub total: Var,
    pub fix: Option<Var>,
    pub det: Option<Var>,
}

/// Anything [`fit`] can train: indexed train/valid examples and a batch loss.
pub trait Objective {
    fn train_len(&self) -> usize;
    fn valid_len(&self) -> usize;
    fn loss(&self, s: &mut Session<'_>, rows: &[usize], valid: bool) -> Result<LossParts>;
}

/// Everything needed to continue a run: weights, optimizer, log and stopper.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub store: ParamStore,
    pub adam: Adam,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub best_store: Option<ParamStore>,
    pub since_improvement: usize,
    pub stopped_early: bool,
}

#[derive(Serialize, Deserialize)]
struct Progress {
    epoch: usize,
    history: Vec<EpochLog>,
    best_epoch: usize,
    best_loss: Option<f64>,
    since_improvement: usize,
    stopped_early: bool,
}

impl TrainState {
    pub fn new(store: ParamStore, optimizer: AdamConfig) -> Self {
        TrainState {
            store,
            adam: Adam::new(optimizer),
            epoch: 0,
            history: Vec::new(),
            best_epoch: 0,
            best_loss: f64::INFINITY,
            best_store: None,
            since_improvement: 0,
            stopped_early: false,
        }
    }

    /// The weights of the best validation epoch, or the current ones before any epoch ran.
    pub fn best(&self) -> &ParamStore {
        self.best_store.as_ref().unwrap_or(&self.store)
    }

    /// Writes `last/`, `best/` and `progress.json` under `dir`.
    pub fn save(&self, dir: &Path, model: &ModelConfig, classes: &[String], extras: &BTreeMap<String, Tensor>) -> Result<()> {
        let ck = |store: &ParamStore, adam: Option<Adam>| Checkpoint {
            model: model.clone(),
            classes: classes.to_vec(),
            epoch: self.epoch,
            store: store.clone(),
            extras: extras.clone(),
            optimizer: adam,
        };
        ck(&self.store, Some(self.adam.clone())).save(&dir.join("last"))?;
        if let Some(b) = &self.best_store {
            let mut best = ck(b, None);
            best.epoch = self.best_epoch;
            best.save(&dir.join("best"))?;
        }
        let p = Progress {
            epoch: self.epoch,
            history: self.history.clone(),
            best_epoch: self.best_epoch,
            best_loss: self.best_loss.is_finite().then_some(self.best_loss),
            since_improvement: self.since_improvement,
            stopped_early: self.stopped_early,
        };
        crate::data::write_atomic(&dir.join("progress.json"), serde_json::to_string_pretty(&p)?.as_bytes())
    }

    /// Reloads a state written by [`TrainState::save`], checking it against `model`.
    pub fn load(dir: &Path, model: &ModelConfig) -> Result<(Self, Checkpoint)> {
        let last = Checkpoint::load_for(&dir.join("last"), model)?;
        let best_dir = dir.join("best");
        let best_store = if best_dir.is_dir() {
            Some(Checkpoint::load_for(&best_dir, model)?.store)
        } else {
            None
        };
        let p: Progress = serde_json::from_str(&std::fs::read_to_string(dir.join("progress.json"))?)?;
        let adam = last
            .optimizer
            .clone()
            .ok_or_else(|| Error::Checkpoint("resume checkpoint has no optimizer state".into()))?;
        let state = TrainState {
            store: last.store.clone(),
            adam,
            epoch: p.epoch,
            history: p.history,
            best_epoch: p.best_epoch,
            best_loss: p.best_loss.unwrap_or(f64::INFINITY),
            best_store,
            since_improvement: p.since_improvement,
            stopped_early: p.stopped_early,
        };
        Ok((state, last))
    }
}

fn diverged(epoch: usize, batch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(op) => Error::Diverged {
            epoch,
            batch,
            detail: format!("non-finite value in `{op}`"),
        },
        other => other,
    }
}

fn check_finite(epoch: usize, batch: usize, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Diverged {
            epoch,
            batch,
            detail: format!("loss is {v}"),
        })
    }
}

fn batches(rows: Vec<usize>, size: usize) -> Vec<Vec<usize>> {
    rows.chunks(size).map(<[usize]>::to_vec).collect()
}

/// Example-weighted mean of (total, fix, det) over `rows` in inference mode.
fn validation_loss(obj: &dyn Objective, store: &ParamStore, size: usize) -> Result<f64> {
    let mut total = 0.0;
    for b in batches((0..obj.valid_len()).collect(), size) {
        let mut s = Session::infer(store);
        let parts = obj.loss(&mut s, &b, true)?;
        total += s.value(parts.total).item()? * b.len() as f64;
    }
    Ok(total / obj.valid_len() as f64)
}

/// Runs epochs from `state` until the epoch cap or early stop. `on_epoch` sees
/// the state after every epoch (e.g. to checkpoint it). The returned state's
/// `store` is the last epoch's weights; [`TrainState::best`] gives the restored ones.
pub fn fit(
    obj: &dyn Objective,
    cfg: &TrainConfig,
    mut state: TrainState,
    mut on_epoch: impl FnMut(&TrainState) -> Result<()>,
) -> Result<TrainState> {
    cfg.validate()?;
    if obj.train_len() == 0 {
        return Err(Error::Data("training split is empty".into()));
    }
    while state.epoch < cfg.max_epochs && !state.stopped_early {
        let epoch = state.epoch + 1;
        let start = Instant::now();
        let mut order: Vec<usize> = (0..obj.train_len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, &format!("shuffle/{epoch}")));
        let (mut sum, mut sum_fix, mut sum_det) = (0.0, 0.0, 0.0);
        let (mut has_fix, mut has_det) = (false, false);
        for (bi, rows) in batches(order, cfg.batch_size).into_iter().enumerate() {
            let dropout = rng::stream(cfg.seed, &format!("dropout/{epoch}/{bi}"));
            let mut s = Session::train(&state.store, Some(dropout));
            let parts = obj.loss(&mut s, &rows, false).map_err(|e| diverged(epoch, bi, e))?;
            let n = rows.len() as f64;
            sum += check_finite(epoch, bi, s.value(parts.total).item()?)? * n;
            if let Some(f) = parts.fix {
                sum_fix += s.value(f).item()? * n;
                has_fix = true;
            }
            if let Some(d) = parts.det {
                sum_det += s.value(d).item()? * n;
                has_det = true;
            }
            let grads = s.param_grads(parts.total).map_err(|e| diverged(epoch, bi, e))?;
            let updates = s.take_bn_updates();
            drop(s);
            state.store.apply_bn_updates(updates);
            state.adam.step(&mut state.store, &grads).map_err(|e| diverged(epoch, bi, e))?;
        }
        let n = obj.train_len() as f64;
        let train_loss = sum / n;
        let valid_loss = if obj.valid_len() > 0 {
            validation_loss(obj, &state.store, cfg.batch_size).map_err(|e| diverged(epoch, usize::MAX, e))?
        } else {
            train_loss
        };
        state.history.push(EpochLog {
            epoch,
            train_loss,
            valid_loss,
            train_fix: has_fix.then_some(sum_fix / n),
            train_det: has_det.then_some(sum_det / n),
            wall_secs: start.elapsed().as_secs_f64(),
        });
        state.epoch = epoch;
        if valid_loss < state.best_loss {
            state.best_loss = valid_loss;
            state.best_epoch = epoch;
            state.best_store = Some(state.store.clone());
            state.since_improvement = 0;
        } else {
            state.since_improvement += 1;
            state.stopped_early = state.since_improvement >= cfg.patience;
        }
        log::info!(
            "epoch {epoch}: train {train_loss:.5} valid {valid_loss:.5} ({:.2}s)",
            start.elapsed().as_secs_f64()
        );
        on_epoch(&state)?;
    }
    Ok(state)
}

/// Maps class names to the task tensors a model consumes.
#[derive(Clone, Debug)]
pub struct TaskEncoder {
    pub kind: TaskEncodingKind,
    pub classes: Vec<String>,
    pub grid: GridSpec,
    heatmaps: BTreeMap<String, Tensor>,
}

const HEATMAP_PREFIX: &str = "task_heatmap.";

impl TaskEncoder {
    /// Builds the encoder; heatmap encodings are estimated from the fixations
    /// (after the imposed start) of `train`.
    pub fn fit(kind: TaskEncodingKind, classes: &[String], train: &[ScanpathRecord], g: &GridSpec) -> Result<Self> {
        let mut heatmaps = BTreeMap::new();
        if matches!(kind, TaskEncodingKind::Heatmap2d | TaskEncodingKind::HeatmapFlat) {
            for c in classes {
                let cells = train
                    .iter()
                    .filter(|r| &r.task == c)
                    .flat_map(|r| r.cells(g).into_iter().skip(1));
                heatmaps.insert(c.clone(), task_heatmap(cells, g)?);
            }
        }
        Ok(TaskEncoder {
            kind,
            classes: classes.to_vec(),
            grid: *g,
            heatmaps,
        })
    }

    /// Restores heatmaps stored as checkpoint extras.
    pub fn from_extras(kind: TaskEncodingKind, classes: &[String], g: &GridSpec, extras: &BTreeMap<String, Tensor>) -> Result<Self> {
        let mut heatmaps = BTreeMap::new();
        if matches!(kind, TaskEncodingKind::Heatmap2d | TaskEncodingKind::HeatmapFlat) {
            for c in classes {
                let t = extras
                    .get(&format!("{HEATMAP_PREFIX}{c}"))
                    .ok_or_else(|| Error::Checkpoint(format!("missing task heatmap for `{c}`")))?;
                heatmaps.insert(c.clone(), t.clone());
            }
        }
        Ok(TaskEncoder {
            kind,
            classes: classes.to_vec(),
            grid: *g,
            heatmaps,
        })
    }

    pub fn extras(&self) -> BTreeMap<String, Tensor> {
        self.heatmaps
            .iter()
            .map(|(c, t)| (format!("{HEATMAP_PREFIX}{c}"), t.clone()))
            .collect()
    }

    pub fn class_index(&self, name: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Data(format!("unknown task `{name}`")))
    }

    /// The task tensor for class `k`, without batch axis.
    pub fn encode(&self, k: usize) -> Result<Tensor> {
        let n = self.classes.len();
        match self.kind {
            TaskEncodingKind::OneHot => task_onehot(k, n),
            TaskEncodingKind::OnehotSpatial => task_onehot_spatial(k, n, &self.grid),
            TaskEncodingKind::Heatmap2d | TaskEncodingKind::HeatmapFlat => {
                let name = self
                    .classes
                    .get(k)
                    .ok_or_else(|| Error::Data(format!("task index {k} out of {n} classes")))?;
                let h = &self.heatmaps[name];
                if self.kind == TaskEncodingKind::HeatmapFlat {
                    h.reshape(&[self.grid.cells()])
                } else {
                    Ok(h.clone())
                }
            }
        }
    }
}

/// A processed scanpath resolved against a grid and class list.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub stem: String,
    pub class: usize,
    pub cells: Vec<Cell>,
    pub present: bool,
    pub bbox: Option<BBox>,
}

impl Sample {
    pub fn from_record(rec: &ScanpathRecord, encoder: &TaskEncoder) -> Result<Self> {
        if !rec.processed {
            return Err(Error::Data(format!("record `{}` has not been preprocessed", rec.name)));
        }
        Ok(Sample {
            stem: rec.stem().to_string(),
            class: encoder.class_index(&rec.task)?,
            cells: rec.cells(&encoder.grid),
            present: rec.present(),
            bbox: rec.bbox()?,
        })
    }
}

/// Teacher-forced sequence objective over feature files.
pub struct SequenceObjective<'a> {
    pub model: &'a Model,
    pub features: &'a FeatureStore,
    pub input: InputMode,
    pub encoder: &'a TaskEncoder,
    pub train: Vec<Sample>,
    pub valid: Vec<Sample>,
}

/// Stacked inputs and labels of one batch.
pub struct SequenceBatch {
    pub xs: Vec<Tensor>,
    pub task: Tensor,
    pub labels: Vec<Tensor>,
    /// Per-step `B` detection labels.
    pub det: Vec<Tensor>,
}

impl SequenceObjective<'_> {
    pub fn batch(&self, samples: &[&Sample]) -> Result<SequenceBatch> {
        let cfg = self.model.config();
        let g = &cfg.grid;
        let t_len = samples
            .first()
            .ok_or_else(|| Error::Data("empty batch".into()))?
            .cells
            .len();
        let mut xs: Vec<Vec<Tensor>> = vec![Vec::new(); t_len];
        let mut labels: Vec<Vec<Tensor>> = vec![Vec::new(); t_len];
        let mut det = vec![Vec::with_capacity(samples.len()); t_len];
        let mut tasks = Vec::with_capacity(samples.len());
        for s in samples {
            if s.cells.len() != t_len {
                return Err(Error::Data(format!("scanpath `{}` has length {}, expected {t_len}", s.stem, s.cells.len())));
            }
            let source = self.features.source(&s.stem, self.input, g)?;
            for (t, x) in source.sequence(&s.cells)?.into_iter().enumerate() {
                xs[t].push(x);
                let next = s.cells[(t + 1).min(t_len - 1)];
                labels[t].push(label_grid(next, cfg.label, g)?.reshape(&[g.cells()])?);
            }
            for (t, y) in detection_labels(&s.cells, s.bbox.as_ref(), s.present, g)?.into_iter().enumerate() {
                det[t].push(y);
            }
            tasks.push(self.encoder.encode(s.class)?);
        }
        Ok(SequenceBatch {
            xs: xs.iter().map(|v| Tensor::stack(v)).collect::<Result<_>>()?,
            task: Tensor::stack(&tasks)?,
            labels: labels.iter().map(|v| Tensor::stack(v)).collect::<Result<_>>()?,
            det: det
                .into_iter()
                .map(|v| Tensor::from_vec(&[v.len()], v))
                .collect::<Result<_>>()?,
        })
    }

    /// Loss of an already stacked batch.
    pub fn batch_loss(&self, s: &mut Session<'_>, b: &SequenceBatch) -> Result<LossParts> {
        let cfg = self.model.config();
        let n = b.task.shape()[0] as f64;
        let xs: Vec<Var> = b.xs.iter().map(|x| s.constant(x.clone())).collect();
        let task = s.constant(b.task.clone());
        let out = self.model.forward(s, &xs, task, None)?;
        let ys: Vec<Var> = b.labels.iter().map(|y| s.constant(y.clone())).collect();
        let ce = seq_ce_loss(&mut s.graph, &out.fix, &ys)?;
        let l_fix = s.graph.scale(ce, 1.0 / n)?;
        let Some(det) = &out.det else {
            return Ok(LossParts {
                total: l_fix,
                fix: None,
                det: None,
            });
        };
        let weights = cfg.loss.weighted.then_some((cfg.loss.w1, cfg.loss.w0));
        let mut acc: Option<Var> = None;
        for (&p, y) in det.iter().zip(&b.det) {
            let l = bce_loss(&mut s.graph, p, y, weights)?;
            acc = Some(match acc {
                None => l,
                Some(a) => s.graph.add(a, l)?,
            });
        }
        let l_det = s.graph.scale(acc.expect("non-empty sequence"), 1.0 / det.len() as f64)?;
        let total = dual_loss(&mut s.graph, l_fix, l_det, &cfg.loss)?;
        Ok(LossParts {
            total,
            fix: Some(l_fix),
            det: Some(l_det),
        })
    }
}

impl Objective for SequenceObjective<'_> {
    fn train_len(&self) -> usize {
        self.train.len()
    }

    fn valid_len(&self) -> usize {
        self.valid.len()
    }

    fn loss(&self, s: &mut Session<'_>, rows: &[usize], valid: bool) -> Result<LossParts> {
        let pool = if valid { &self.valid } else { &self.train };
        let samples: Vec<&Sample> = rows.iter().map(|&i| &pool[i]).collect();
        let b = self.batch(&samples)?;
        self.batch_loss(s, &b)
    }
}

/// One crop feature vector and whether it shows the target.
#[derive(Clone, Debug)]
pub struct DetectionExample {
    pub features: Tensor,
    pub label: f64,
}

/// Crop examples of every distinct fixated cell after the start, per record.
pub fn detection_examples(samples: &[Sample], features: &FeatureStore, g: &GridSpec) -> Result<Vec<DetectionExample>> {
    let mut out = Vec::new();
    for s in samples {
        let crops = features.get(&s.stem, Variant::Crop)?;
        let labels = detection_labels(&s.cells, s.bbox.as_ref(), s.present, g)?;
        let mut seen = Vec::new();
        for (t, &c) in s.cells.iter().enumerate().skip(1) {
            if seen.contains(&c) {
                continue;
            }
            seen.push(c);
            out.push(DetectionExample {
                features: crop_at(&crops, c)?,
                label: labels[t],
            });
        }
    }
    Ok(out)
}

/// Class-weighted BCE objective of a standalone detection head.
pub struct DetectionObjective<'a> {
    pub model: &'a DetectionModel,
    pub train: Vec<DetectionExample>,
    pub valid: Vec<DetectionExample>,
}

impl Objective for DetectionObjective<'_> {
    fn train_len(&self) -> usize {
        self.train.len()
    }

    fn valid_len(&self) -> usize {
        self.valid.len()
    }

    fn loss(&self, s: &mut Session<'_>, rows: &[usize], valid: bool) -> Result<LossParts> {
        let pool = if valid { &self.valid } else { &self.train };
        let xs: Vec<Tensor> = rows.iter().map(|&i| pool[i].features.clone()).collect();
        let y = Tensor::from_vec(&[rows.len()], rows.iter().map(|&i| pool[i].label).collect())?;
        let x = s.constant(Tensor::stack(&xs)?);
        let p = self.model.forward(s, x)?;
        let l = &self.model.cfg.loss;
        let total = bce_loss(&mut s.graph, p, &y, l.weighted.then_some((l.w1, l.w0)))?;
        Ok(LossParts {
            total,
            fix: None,
            det: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, preprocess_all, PreprocessConfig, SynthConfig};

    fn tiny() -> (crate::data::SynthCorpus, Vec<ScanpathRecord>, PreprocessConfig) {
        let cfg = SynthConfig {
            scenes: 8,
            ..Default::default()
        };
        let corpus = generate(&cfg).unwrap();
        let pre = PreprocessConfig::for_grid(&cfg.grid);
        let (kept, _) = preprocess_all(&corpus.records, &cfg.grid, &pre).unwrap();
        (corpus, kept, pre)
    }

    #[test]
    fn logged_components_combine_into_the_total() {
        let (corpus, kept, _) = tiny();
        let g = corpus.config.grid;
        let classes = crate::data::class_names(&kept);
        let mut mc = ModelConfig::dual(g, corpus.config.channels(), classes.len(), crate::models::DualArch::A);
        mc.loss.w_fix = 0.9;
        let model = Model::build(&mc).unwrap();
        let enc = TaskEncoder::fit(mc.task_encoding, &classes, &kept, &g).unwrap();
        let store = corpus.feature_store();
        let obj = SequenceObjective {
            model: &model,
            features: &store,
            input: InputMode::Blend {
                radius: 1.0,
                cumulative: false,
            },
            encoder: &enc,
            train: kept.iter().map(|r| Sample::from_record(r, &enc).unwrap()).collect(),
            valid: Vec::new(),
        };
        let params = model.init_store(&mut rng::stream(1, "init")).unwrap();
        let cfg = TrainConfig {
            max_epochs: 2,
            batch_size: 4,
            ..Default::default()
        };
        let st = fit(&obj, &cfg, TrainState::new(params, cfg.optimizer), |_| Ok(())).unwrap();
        for row in &st.history {
            let combined = 0.9 * row.train_fix.unwrap() + 0.1 * row.train_det.unwrap();
            assert!((combined - row.train_loss).abs() < 1e-5 * row.train_loss.abs().max(1.0));
        }
    }

    #[test]
    fn log_has_header_and_rows() {
        let rows = vec![EpochLog {
            epoch: 1,
            train_loss: 2.0,
            valid_loss: 3.0,
            train_fix: None,
            train_det: None,
            wall_secs: 0.5,
        }];
        assert_eq!(log_csv(&rows), "epoch,train_loss,valid_loss,wall_secs,train_fix,train_det\n1,2,3,0.500,,\n");
    }
}
