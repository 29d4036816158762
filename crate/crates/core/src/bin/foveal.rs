use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use foveal::data::{write_records, Checkpoint, FeatureStore, SynthConfig};
use foveal::decode::beam_search;
use foveal::encoding::{LabelKind, TaskEncodingKind};
use foveal::foveation::{foveate_image, FoveationConfig, Image};
use foveal::gradcheck::{self, Scope};
use foveal::models::{DualArch, Family, Head, Model};
use foveal::run::{self, Dataset, RunConfig};
use foveal::train::TaskEncoder;
use foveal::{Error, Result};

#[derive(Parser)]
#[command(name = "foveal", version, about = "Scanpath prediction and target detection on foveated feature maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a fixation-prediction model (high-level or panoptic).
    TrainFix(TrainArgs),
    /// Train a dual fixation + detection model.
    TrainDual(TrainArgs),
    /// Train per-class standalone detection heads on crop features.
    TrainDet(TrainArgs),
    /// Decode scanpaths for one image and task.
    Predict(PredictArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Render a foveated image around one fixation.
    Foveate(FoveateArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic corpus in the on-disk data layout.
    Synth(SynthArgs),
}

#[derive(Args, Default)]
struct DataArgs {
    /// JSON run config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    features_dir: Option<PathBuf>,
    /// Scanpath JSON (default `<data-dir>/scanpaths.json`).
    #[arg(long)]
    records: Option<PathBuf>,
    /// Parent directory of run directories.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use an in-memory synthetic corpus with this many scenes.
    #[arg(long, value_name = "SCENES", num_args = 0..=1, default_missing_value = "200")]
    synthetic: Option<usize>,
    /// Read per-cell foveated features instead of blending full and blurred maps.
    #[arg(long)]
    per_cell: bool,
    #[arg(long)]
    mask_radius: Option<f64>,
    #[arg(long)]
    cumulative: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    HighLevel,
    Panoptic,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    A,
    B,
    C,
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadArg {
    Sigmoid,
    Softmax,
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelArg {
    Gaussian,
    Onehot,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Onehot,
    Heatmap2d,
    HeatmapFlat,
    OnehotSpatial,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    family: Option<FamilyArg>,
    #[arg(long, value_enum)]
    arch: Option<ArchArg>,
    /// Stacked ConvLSTM layers (panoptic).
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long, value_enum)]
    head: Option<HeadArg>,
    #[arg(long, value_enum)]
    label: Option<LabelArg>,
    #[arg(long, value_enum)]
    task_encoding: Option<TaskArg>,
    #[arg(long)]
    no_batch_norm: bool,
    #[arg(long)]
    task_dropout: Option<f64>,
    #[arg(long)]
    w_fix: Option<f64>,
    #[arg(long)]
    w1: Option<f64>,
    #[arg(long)]
    w0: Option<f64>,
    /// Plain (unweighted) detection BCE.
    #[arg(long)]
    unweighted: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Continue the run in this directory from its last saved epoch.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    beam_width: Option<usize>,
    #[arg(long)]
    length: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    decode: DecodeArgs,
    /// Checkpoint directory (e.g. `<run>/checkpoint`).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Score the earliest-hitting beam rather than the best one.
    #[arg(long)]
    eval_all_beams: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    decode: DecodeArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Image stem (file name without extension).
    #[arg(long)]
    image: String,
    #[arg(long)]
    task: String,
    /// Beams to print.
    #[arg(long, default_value_t = 1)]
    top: usize,
}

#[derive(Args)]
struct FoveateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    x: f64,
    #[arg(long)]
    y: f64,
    #[arg(long)]
    fovea_px: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Ops,
    Models,
    All,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "all")]
    scope: ScopeArg,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    tasks: Option<usize>,
    #[arg(long)]
    difficulty: Option<f64>,
    #[arg(long)]
    absent_fraction: Option<f64>,
    #[arg(long)]
    subjects: Option<usize>,
}

/// Defaults, then the config file, then flags.
fn base_config(data: &DataArgs, command: &str) -> Result<RunConfig> {
    let mut cfg = match &data.config {
        Some(p) => RunConfig::from_json(&std::fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    cfg.command = command.to_string();
    let paths = &mut cfg.paths;
    if data.data_dir.is_some() {
        paths.data_dir = data.data_dir.clone();
    }
    if data.features_dir.is_some() {
        paths.features_dir = data.features_dir.clone();
    }
    if data.records.is_some() {
        paths.records = data.records.clone();
    }
    if let Some(o) = &data.out_dir {
        paths.out_dir = o.clone();
    }
    if let Some(s) = data.seed {
        cfg.train.seed = s;
    }
    if let Some(n) = data.synthetic {
        let mut s = cfg.synthetic.unwrap_or_default();
        s.scenes = n;
        s.seed = cfg.train.seed;
        cfg.synthetic = Some(s);
    }
    cfg.per_cell |= data.per_cell;
    cfg.foveation.cumulative |= data.cumulative;
    if let Some(r) = data.mask_radius {
        cfg.foveation.mask_radius = r;
    }
    Ok(cfg)
}

fn train_config(a: &TrainArgs, command: &str) -> Result<RunConfig> {
    let mut cfg = base_config(&a.data, command)?;
    match command {
        "train-fix" => {
            if let Some(f) = a.family {
                cfg.family = match f {
                    FamilyArg::HighLevel => Family::HighLevel,
                    FamilyArg::Panoptic => Family::Panoptic,
                };
            }
            if !matches!(cfg.family, Family::HighLevel | Family::Panoptic) {
                return Err(Error::Config(format!("train-fix trains high-level or panoptic models, not {:?}", cfg.family)));
            }
        }
        "train-dual" => {
            cfg.family = Family::Dual;
            cfg.architecture = Some(cfg.architecture.unwrap_or(DualArch::A));
        }
        _ => cfg.family = Family::Detection,
    }
    if let Some(arch) = a.arch {
        cfg.architecture = Some(match arch {
            ArchArg::A => DualArch::A,
            ArchArg::B => DualArch::B,
            ArchArg::C => DualArch::C,
        });
    }
    if let Some(d) = a.depth {
        cfg.depth = d;
    }
    if let Some(h) = a.head {
        cfg.head = match h {
            HeadArg::Sigmoid => Head::Sigmoid,
            HeadArg::Softmax => Head::Softmax,
        };
    }
    if let Some(l) = a.label {
        cfg.label = match l {
            LabelArg::Gaussian => LabelKind::Gaussian,
            LabelArg::Onehot => LabelKind::OneHot,
        };
    }
    if let Some(t) = a.task_encoding {
        cfg.task_encoding = Some(match t {
            TaskArg::Onehot => TaskEncodingKind::OneHot,
            TaskArg::Heatmap2d => TaskEncodingKind::Heatmap2d,
            TaskArg::HeatmapFlat => TaskEncodingKind::HeatmapFlat,
            TaskArg::OnehotSpatial => TaskEncodingKind::OnehotSpatial,
        });
    }
    cfg.batch_norm &= !a.no_batch_norm;
    if a.task_dropout.is_some() {
        cfg.task_dropout = a.task_dropout;
    }
    if let Some(w) = a.w_fix {
        cfg.loss.w_fix = w;
    }
    if let Some(w) = a.w1 {
        cfg.loss.w1 = w;
    }
    if let Some(w) = a.w0 {
        cfg.loss.w0 = w;
    }
    cfg.loss.weighted &= !a.unweighted;
    if let Some(e) = a.epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(p) = a.patience {
        cfg.train.patience = p;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.train.optimizer.lr = lr;
    }
    Ok(cfg)
}

fn apply_decode(cfg: &mut RunConfig, d: &DecodeArgs) {
    if let Some(m) = d.beam_width {
        cfg.decode.beam_width = m;
    }
    if let Some(l) = d.length {
        cfg.decode.length = l;
        cfg.preprocess.length = l;
    }
}

fn train(a: &TrainArgs, command: &str) -> Result<()> {
    let (cfg, dir) = match &a.resume {
        Some(dir) => {
            let mut cfg = RunConfig::from_json(&std::fs::read_to_string(dir.join("config.json"))?)?;
            if let Some(e) = a.epochs {
                cfg.train.max_epochs = e;
            }
            (cfg, dir.clone())
        }
        None => {
            let cfg = train_config(a, command)?;
            let dir = run::run_dir(&cfg.paths.out_dir, cfg.train.seed);
            (cfg, dir)
        }
    };
    cfg.validate()?;
    let data = Dataset::load(&cfg)?;
    log::info!(
        "{} records ({} discarded), {} classes, {} input channels",
        data.records.len(),
        data.dropped,
        data.classes.len(),
        data.channels
    );
    run::write_config(&cfg, &dir)?;
    if cfg.family == Family::Detection {
        let heads = run::train_detection(&cfg, &data, &dir)?;
        for (class, st) in heads {
            println!("{class}: best epoch {} valid loss {:.5}", st.best_epoch, st.best_loss);
        }
    } else {
        let st = run::train_sequence(&cfg, &data, &dir, a.resume.is_some())?;
        println!(
            "trained {} epochs, best epoch {} (valid loss {:.5}){}",
            st.epoch,
            st.best_epoch,
            st.best_loss,
            if st.stopped_early { ", stopped early" } else { "" }
        );
    }
    println!("{}", dir.display());
    Ok(())
}

fn eval_config(data: &DataArgs, decode: &DecodeArgs, checkpoint: &Path, command: &str) -> Result<RunConfig> {
    let mut cfg = base_config(data, command)?;
    apply_decode(&mut cfg, decode);
    let m = Checkpoint::read_manifest(checkpoint)?;
    cfg.family = m.model.family;
    cfg.architecture = m.model.architecture;
    cfg.depth = m.model.depth;
    cfg.head = m.model.head;
    cfg.label = m.model.label;
    cfg.task_encoding = Some(m.model.task_encoding);
    cfg.validate()?;
    Ok(cfg)
}

fn eval(a: &EvalArgs) -> Result<()> {
    let mut cfg = eval_config(&a.data, &a.decode, &a.checkpoint, "eval")?;
    cfg.decode.any_beam = a.eval_all_beams;
    let data = Dataset::load(&cfg)?;
    let dir = run::run_dir(&cfg.paths.out_dir, cfg.train.seed);
    run::write_config(&cfg, &dir)?;
    let ev = run::evaluate_checkpoint(&cfg, &data, &a.checkpoint, &dir)?;
    let m = &ev.report.macro_avg;
    println!("search accuracy   {:.4}", m.search_accuracy);
    println!("TFP-AUC           {:.4}", m.tfp_auc);
    if let Some(pm) = m.probability_mismatch {
        println!("prob. mismatch    {pm:.4}");
    }
    if let Some(sr) = m.scanpath_ratio {
        println!("scanpath ratio    {sr:.4}");
    }
    println!("random baseline   {:.4}", ev.baseline.macro_avg.search_accuracy);
    if let Some(d) = &ev.report.detection {
        println!("detection acc.    {:.4}", d.overall.accuracy);
    }
    println!("{}", dir.display());
    Ok(())
}

fn predict(a: &PredictArgs) -> Result<()> {
    let cfg = eval_config(&a.data, &a.decode, &a.checkpoint, "predict")?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model = Model::build(&ck.model)?;
    let g = ck.model.grid;
    let enc = TaskEncoder::from_extras(ck.model.task_encoding, &ck.classes, &g, &ck.extras)?;
    let features = match &cfg.synthetic {
        Some(s) => foveal::data::generate(s)?.feature_store(),
        None => {
            let dir = cfg.paths.data_dir.clone().unwrap_or_default();
            FeatureStore::new(cfg.paths.features_dir.clone().unwrap_or_else(|| dir.join("features")))
        }
    };
    let source = features.source(&a.image, cfg.input_mode(), &g)?;
    let task = enc.encode(enc.class_index(&a.task)?)?;
    let beams = beam_search(&model, &ck.store, &source, &task, cfg.decode.beam_width, cfg.decode.length)?;
    let out: Vec<serde_json::Value> = beams
        .iter()
        .take(a.top)
        .map(|b| {
            serde_json::json!({
                "cells": b.cells.iter().map(|c| [c.row, c.col]).collect::<Vec<_>>(),
                "pixels": b.cells.iter().map(|&c| { let (x, y) = g.cell_center(c); [x, y] }).collect::<Vec<_>>(),
                "log_prob": b.log_prob,
                "detection": if model.has_detection() { Some(&b.det) } else { None },
            })
        })
        .collect();
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn foveate(a: &FoveateArgs) -> Result<()> {
    let mut cfg = FoveationConfig::default();
    if let Some(f) = a.fovea_px {
        cfg.fovea_px = f;
    }
    if let Some(s) = a.sigma {
        cfg.sigma = s;
    }
    cfg.validate()?;
    let img = image::open(&a.input).map_err(|e| Error::Image(e.to_string()))?.to_rgb8();
    let out = foveate_image(&Image::from_rgb8(&img), a.x, a.y, &cfg)?;
    out.to_rgb8().save(&a.output).map_err(|e| Error::Image(e.to_string()))?;
    println!("{}", a.output.display());
    Ok(())
}

fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    let scope = match a.scope {
        ScopeArg::Ops => Scope::Ops,
        ScopeArg::Models => Scope::Models,
        ScopeArg::All => Scope::All,
    };
    let results = gradcheck::run(scope)?;
    print!("{}", gradcheck::table(&results));
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Error::Domain(format!("{failed} gradient groups exceed tolerance")));
    }
    println!("all {} groups within tolerance", results.len());
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig {
        seed: a.seed,
        ..Default::default()
    };
    if let Some(v) = a.scenes {
        cfg.scenes = v;
    }
    if let Some(v) = a.tasks {
        cfg.tasks = v;
    }
    if let Some(v) = a.difficulty {
        cfg.difficulty = v;
    }
    if let Some(v) = a.absent_fraction {
        cfg.absent_fraction = v;
    }
    if let Some(v) = a.subjects {
        cfg.subjects = v;
    }
    cfg.validate()?;
    let corpus = foveal::data::generate(&cfg)?;
    corpus.write_features(&FeatureStore::new(a.out.join("features")))?;
    write_records(&a.out.join("scanpaths.json"), &corpus.records)?;
    std::fs::write(a.out.join("synth.json"), serde_json::to_string_pretty(&cfg)?)?;
    // Settings for reading this directory back as a regular dataset.
    let mut run_cfg = RunConfig {
        grid: cfg.grid,
        preprocess: foveal::data::PreprocessConfig::for_grid(&cfg.grid),
        ..Default::default()
    };
    run_cfg.paths.data_dir = Some(a.out.clone());
    run_cfg.foveation.mask_radius = 1.0;
    run_cfg.train.seed = a.seed;
    std::fs::write(a.out.join("config.json"), run_cfg.to_json()?)?;
    println!(
        "{} scenes, {} scanpaths, grid {}×{} ({}×{} px)",
        corpus.scenes.len(),
        corpus.records.len(),
        cfg.grid.rows,
        cfg.grid.cols,
        cfg.grid.img_h,
        cfg.grid.img_w
    );
    Ok(())
}

fn set_threads() -> Result<()> {
    if let Ok(v) = std::env::var("FOVEAL_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("FOVEAL_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = set_threads().and_then(|_| match &cli.command {
        Command::TrainFix(a) => train(a, "train-fix"),
        Command::TrainDual(a) => train(a, "train-dual"),
        Command::TrainDet(a) => train(a, "train-det"),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::Foveate(a) => foveate(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Synth(a) => synth(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
