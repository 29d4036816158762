//! Run configuration plus the dataset resolution and train/evaluate drivers
//! behind the command-line tool.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::data::{
    assign_splits, class_names, generate, preprocess_all, read_records, Checkpoint, FeatureStore, InputMode,
    PreprocessConfig, ScanpathRecord, Split, SynthConfig, Variant, DEFAULT_RATIOS,
};
use crate::encoding::{GridSpec, LabelKind, TaskEncodingKind};
use crate::error::{Error, Result};
use crate::eval::{predict, random_baseline, DecodeOptions};
use crate::foveation::FoveationConfig;
use crate::metrics::{evaluate, Confusion, MetricsReport};
use crate::models::{DetectionModel, DualArch, Family, Head, LossConfig, Model, ModelConfig};
use crate::rng;
use crate::train::{
    detection_examples, fit, log_csv, DetectionObjective, Sample, SequenceObjective, TaskEncoder, TrainConfig,
    TrainState,
};

/// Data locations. Relative paths resolve against the working directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub data_dir: Option<PathBuf>,
    /// Scanpath JSON; defaults to `<data_dir>/scanpaths.json`.
    pub records: Option<PathBuf>,
    /// Feature files; defaults to `<data_dir>/features`.
    pub features_dir: Option<PathBuf>,
    /// Parent of the run directories.
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data_dir: None,
            records: None,
            features_dir: None,
            out_dir: PathBuf::from("runs"),
        }
    }
}

/// Every setting of a run. Written next to the outputs so the run can be repeated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: String,
    pub family: Family,
    pub architecture: Option<DualArch>,
    pub depth: usize,
    pub head: Head,
    /// Family default when unset.
    pub task_encoding: Option<TaskEncodingKind>,
    pub label: LabelKind,
    pub batch_norm: bool,
    /// Family default when unset.
    pub task_dropout: Option<f64>,
    pub loss: LossConfig,
    pub foveation: FoveationConfig,
    /// Read precomputed per-cell foveated features instead of blending full and blurred maps.
    pub per_cell: bool,
    pub grid: GridSpec,
    pub train: TrainConfig,
    pub split_ratios: [f64; 3],
    pub decode: DecodeOptions,
    pub paths: Paths,
    /// Generate the corpus in memory instead of reading `paths`.
    pub synthetic: Option<SynthConfig>,
    pub preprocess: PreprocessConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: String::new(),
            family: Family::HighLevel,
            architecture: None,
            depth: 1,
            head: Head::Softmax,
            task_encoding: None,
            label: LabelKind::Gaussian,
            batch_norm: true,
            task_dropout: None,
            loss: LossConfig::default(),
            foveation: FoveationConfig::default(),
            per_cell: false,
            grid: GridSpec::default(),
            train: TrainConfig::default(),
            split_ratios: DEFAULT_RATIOS,
            decode: DecodeOptions::default(),
            paths: Paths::default(),
            synthetic: None,
            preprocess: PreprocessConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The grid the data lives on.
    pub fn grid(&self) -> GridSpec {
        self.synthetic.map(|s| s.grid).unwrap_or(self.grid)
    }

    pub fn input_mode(&self) -> InputMode {
        if self.per_cell {
            InputMode::PerCell
        } else {
            InputMode::Blend {
                radius: self.foveation.mask_radius,
                cumulative: self.foveation.cumulative,
            }
        }
    }

    /// The model manifest once the data's channel and class counts are known.
    pub fn model_config(&self, channels: usize, classes: usize) -> ModelConfig {
        let g = self.grid();
        let mut m = match self.family {
            Family::HighLevel => ModelConfig::high_level(g, channels, classes),
            Family::Panoptic => ModelConfig::panoptic(g, channels, classes, self.depth, self.head),
            Family::Dual => ModelConfig::dual(g, channels, classes, self.architecture.unwrap_or(DualArch::A)),
            Family::Detection => ModelConfig::detection(channels),
        };
        if self.family != Family::Detection {
            m.label = self.label;
            m.batch_norm = self.batch_norm;
            if let Some(t) = self.task_encoding {
                m.task_encoding = t;
            }
            if let Some(d) = self.task_dropout {
                m.task_dropout = d;
            }
        }
        m.loss = self.loss;
        m.foveation = self.foveation;
        m
    }

    /// Checks every option before any data is touched.
    pub fn validate(&self) -> Result<()> {
        if self.architecture.is_some() && self.family != Family::Dual {
            return Err(Error::Config("an architecture tag only applies to dual models".into()));
        }
        self.model_config(1, 2).validate()?;
        self.train.validate()?;
        let sum: f64 = self.split_ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.split_ratios.iter().any(|r| *r < 0.0) {
            return Err(Error::Config(format!("split ratios must be non-negative and sum to 1, got {:?}", self.split_ratios)));
        }
        if self.decode.beam_width == 0 || self.decode.length < 2 {
            return Err(Error::Config("beam width must be positive and scanpath length at least 2".into()));
        }
        if self.decode.length != self.preprocess.length {
            return Err(Error::Config(format!(
                "decode length {} differs from the preprocessed length {}",
                self.decode.length, self.preprocess.length
            )));
        }
        match &self.synthetic {
            Some(s) => s.validate()?,
            None => {
                self.grid.validate()?;
                if self.paths.data_dir.is_none() && self.paths.records.is_none() {
                    return Err(Error::Config("either a data directory or a synthetic corpus is required".into()));
                }
            }
        }
        Ok(())
    }
}

/// Processed, split records and their feature store.
pub struct Dataset {
    pub grid: GridSpec,
    pub records: Vec<ScanpathRecord>,
    /// Raw trials discarded for being too long.
    pub dropped: usize,
    pub classes: Vec<String>,
    pub features: FeatureStore,
    /// Channels of the per-step model input.
    pub channels: usize,
}

impl Dataset {
    pub fn load(cfg: &RunConfig) -> Result<Dataset> {
        let grid = cfg.grid();
        let (raw, features, pre) = match &cfg.synthetic {
            Some(s) => {
                let corpus = generate(s)?;
                (corpus.records.clone(), corpus.feature_store(), PreprocessConfig::for_grid(&grid))
            }
            None => {
                let dir = cfg.paths.data_dir.clone().unwrap_or_default();
                let rec_path = cfg.paths.records.clone().unwrap_or_else(|| dir.join("scanpaths.json"));
                let feat_dir = cfg.paths.features_dir.clone().unwrap_or_else(|| dir.join("features"));
                (read_records(&rec_path)?, FeatureStore::new(feat_dir), cfg.preprocess)
            }
        };
        let (mut records, dropped) = preprocess_all(&raw, &grid, &pre)?;
        if records.is_empty() {
            return Err(Error::Data("no scanpath survived preprocessing".into()));
        }
        assign_splits(&mut records, cfg.split_ratios, cfg.train.seed)?;
        let needed: &[Variant] = if cfg.per_cell {
            &[Variant::Cells]
        } else {
            &[Variant::Full, Variant::Blurred]
        };
        let mut missing = Vec::new();
        for r in &records {
            for &v in needed {
                if !features.exists(r.stem(), v) {
                    missing.push(features.path(r.stem(), v).display().to_string());
                }
            }
        }
        if !missing.is_empty() {
            missing.sort();
            missing.dedup();
            return Err(Error::Data(format!(
                "{} feature files missing, e.g. {}",
                missing.len(),
                missing[0]
            )));
        }
        let probe = features.source(records[0].stem(), cfg.input_mode(), &grid)?;
        Ok(Dataset {
            grid,
            classes: class_names(&records),
            channels: probe.channels(),
            records,
            dropped,
            features,
        })
    }

    pub fn split(&self, s: Split) -> Vec<ScanpathRecord> {
        self.records.iter().filter(|r| r.split == Some(s)).cloned().collect()
    }

    /// Length of the detection crop features.
    pub fn crop_dim(&self) -> Result<usize> {
        let t = self.features.get(self.records[0].stem(), Variant::Crop)?;
        Ok(*t.shape().last().unwrap_or(&0))
    }
}

fn samples(records: &[ScanpathRecord], enc: &TaskEncoder) -> Result<Vec<Sample>> {
    records.iter().map(|r| Sample::from_record(r, enc)).collect()
}

/// `<out_dir>/<UTC timestamp>-s<seed>`, with a `-N` suffix if that directory already exists.
pub fn run_dir(out_dir: &Path, seed: u64) -> PathBuf {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let (days, rem) = (secs / 86_400, secs % 86_400);
    // Civil date from days since 1970-01-01.
    let z = days as i64 + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    let y = yoe + era * 400 + i64::from(m <= 2);
    let base = format!("{y:04}{m:02}{d:02}-{:02}{:02}{:02}-s{seed}", rem / 3600, rem % 3600 / 60, rem % 60);
    let mut dir = out_dir.join(&base);
    let mut n = 1;
    while dir.exists() {
        n += 1;
        dir = out_dir.join(format!("{base}-{n}"));
    }
    dir
}

/// Writes the resolved config into `dir`.
pub fn write_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::data::write_atomic(&dir.join("config.json"), cfg.to_json()?.as_bytes())
}

/// Trains a sequence model into `dir`: `state/` after every epoch,
/// `train_log.csv`, and the best weights in `checkpoint/`.
pub fn train_sequence(cfg: &RunConfig, data: &Dataset, dir: &Path, resume: bool) -> Result<TrainState> {
    let mc = cfg.model_config(data.channels, data.classes.len());
    let model = Model::build(&mc)?;
    let train = data.split(Split::Train);
    let enc = TaskEncoder::fit(mc.task_encoding, &data.classes, &train, &data.grid)?;
    let obj = SequenceObjective {
        model: &model,
        features: &data.features,
        input: cfg.input_mode(),
        encoder: &enc,
        train: samples(&train, &enc)?,
        valid: samples(&data.split(Split::Valid), &enc)?,
    };
    let state = if resume {
        TrainState::load(&dir.join("state"), &mc)?.0
    } else {
        let init = model.init_store(&mut rng::stream(cfg.train.seed, "init"))?;
        TrainState::new(init, cfg.train.optimizer)
    };
    let extras = enc.extras();
    let state = fit(&obj, &cfg.train, state, |st| {
        st.save(&dir.join("state"), &mc, &data.classes, &extras)?;
        crate::data::write_atomic(&dir.join("train_log.csv"), log_csv(&st.history).as_bytes())
    })?;
    Checkpoint {
        model: mc,
        classes: data.classes.clone(),
        epoch: state.best_epoch,
        store: state.best().clone(),
        extras,
        optimizer: None,
    }
    .save(&dir.join("checkpoint"))?;
    Ok(state)
}

/// Trains one detection head per class into `dir/det/<class>/`.
pub fn train_detection(cfg: &RunConfig, data: &Dataset, dir: &Path) -> Result<BTreeMap<String, TrainState>> {
    let mut rc = cfg.clone();
    rc.family = Family::Detection;
    let mc = rc.model_config(data.crop_dim()?, data.classes.len());
    let model = DetectionModel::build(&mc)?;
    let enc = TaskEncoder::fit(TaskEncodingKind::OneHot, &data.classes, &[], &data.grid)?;
    let mut out = BTreeMap::new();
    for (k, class) in data.classes.iter().enumerate() {
        let of = |s: Split| -> Result<Vec<Sample>> {
            let recs: Vec<_> = data.split(s).into_iter().filter(|r| &r.task == class).collect();
            Ok(samples(&recs, &enc)?.into_iter().filter(|s| s.class == k).collect())
        };
        let obj = DetectionObjective {
            model: &model,
            train: detection_examples(&of(Split::Train)?, &data.features, &data.grid)?,
            valid: detection_examples(&of(Split::Valid)?, &data.features, &data.grid)?,
        };
        let init = model.init_store(&mut rng::stream(cfg.train.seed, &format!("init/det/{class}")))?;
        let sub = dir.join("det").join(class);
        let state = fit(&obj, &cfg.train, TrainState::new(init, cfg.train.optimizer), |st| {
            crate::data::write_atomic(&sub.join("train_log.csv"), log_csv(&st.history).as_bytes())
        })?;
        Checkpoint {
            model: mc.clone(),
            classes: vec![class.clone()],
            epoch: state.best_epoch,
            store: state.best().clone(),
            extras: BTreeMap::new(),
            optimizer: None,
        }
        .save(&sub.join("checkpoint"))?;
        out.insert(class.clone(), state);
    }
    Ok(out)
}

/// CSV of detection confusion matrices: one row per predicted step, then the total.
pub fn confusion_csv(per_step: &[Confusion], total: &Confusion) -> String {
    let mut out = String::from("step,tp,fp,tn,fn\n");
    for (t, c) in per_step.iter().enumerate() {
        out.push_str(&format!("{},{},{},{},{}\n", t + 1, c.tp, c.fp, c.tn, c.fn_));
    }
    out.push_str(&format!("all,{},{},{},{}\n", total.tp, total.fp, total.tn, total.fn_));
    out
}

/// Outputs of an evaluation run.
#[derive(Clone, Debug, Serialize)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub baseline: MetricsReport,
}

/// Beam-decodes the test split with the checkpoint in `checkpoint` and writes
/// `report.json`, `baseline.json`, `tfp.csv` and, for dual models, `confusion.csv` into `out`.
pub fn evaluate_checkpoint(cfg: &RunConfig, data: &Dataset, checkpoint: &Path, out: &Path) -> Result<Evaluation> {
    let ck = Checkpoint::load(checkpoint)?;
    let model = Model::build(&ck.model)?;
    if ck.model.grid != data.grid || ck.model.feature_channels != data.channels {
        return Err(Error::Checkpoint(format!(
            "checkpoint expects a {}×{} grid with {} channels, data has {}×{} with {}",
            ck.model.grid.rows, ck.model.grid.cols, ck.model.feature_channels, data.grid.rows, data.grid.cols, data.channels
        )));
    }
    let enc = TaskEncoder::from_extras(ck.model.task_encoding, &ck.classes, &data.grid, &ck.extras)?;
    let test = samples(&data.split(Split::Test), &enc)?;
    if test.is_empty() {
        return Err(Error::Data("test split is empty".into()));
    }
    let items = predict(&model, &ck.store, &data.features, cfg.input_mode(), &enc, &test, &cfg.decode)?;
    let report = evaluate(&items, &data.grid, cfg.decode.length)?;
    let pool: Vec<_> = samples(&data.split(Split::Train), &enc)?.into_iter().map(|s| s.cells).collect();
    let base = random_baseline(&test, &enc, &pool, &mut rng::stream(cfg.train.seed, "baseline"))?;
    let baseline = evaluate(&base, &data.grid, cfg.decode.length)?;
    std::fs::create_dir_all(out)?;
    crate::data::write_atomic(&out.join("report.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    crate::data::write_atomic(&out.join("baseline.json"), serde_json::to_string_pretty(&baseline)?.as_bytes())?;
    crate::data::write_atomic(&out.join("tfp.csv"), report.tfp_csv().as_bytes())?;
    if let Some(d) = &report.detection {
        crate::data::write_atomic(&out.join("confusion.csv"), confusion_csv(&d.per_step, &d.confusion).as_bytes())?;
    }
    Ok(Evaluation { report, baseline })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_combinations_fail_with_the_rule() {
        let mut c = RunConfig {
            synthetic: Some(SynthConfig::default()),
            family: Family::Panoptic,
            head: Head::Sigmoid,
            label: LabelKind::OneHot,
            ..Default::default()
        };
        let e = c.validate().unwrap_err();
        assert!(e.is_validation() && e.to_string().contains("Gaussian"), "{e}");
        c.label = LabelKind::Gaussian;
        c.validate().unwrap();
        c.architecture = Some(DualArch::B);
        assert!(c.validate().unwrap_err().is_validation());
    }

    #[test]
    fn data_source_is_required() {
        assert!(RunConfig::default().validate().unwrap_err().is_validation());
    }

    #[test]
    fn config_round_trips_and_fills_defaults() {
        let c = RunConfig::from_json(r#"{"family": "dual", "architecture": "C", "train": {"batch_size": 8}}"#).unwrap();
        assert_eq!(c.train.batch_size, 8);
        assert_eq!(c.train.max_epochs, 100);
        assert_eq!(c.architecture, Some(DualArch::C));
        assert_eq!(RunConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
    }

    #[test]
    fn run_dir_names_carry_the_seed() {
        let d = run_dir(Path::new("runs"), 42);
        let name = d.file_name().unwrap().to_string_lossy().to_string();
        assert!(name.ends_with("-s42") && name.len() == "20260101-000000-s42".len(), "{name}");
    }
}
