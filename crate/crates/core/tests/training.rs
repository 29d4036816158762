use foveal::data::{class_names, generate, preprocess_all, InputMode, PreprocessConfig, ScanpathRecord, SynthConfig, SynthCorpus};
use foveal::models::{DualArch, Model, ModelConfig};
use foveal::nn::{AdamConfig, ParamStore, Session};
use foveal::rng::stream;
use foveal::train::{fit, LossParts, Objective, Sample, SequenceObjective, TaskEncoder, TrainConfig, TrainState};
use foveal::tensor::Tensor;
use foveal::Error;

fn synth() -> SynthConfig {
    SynthConfig {
        scenes: 8,
        tasks: 2,
        absent_fraction: 0.25,
        ..SynthConfig::default()
    }
}

fn corpus() -> (SynthCorpus, Vec<ScanpathRecord>, Vec<String>) {
    let cfg = synth();
    let c = generate(&cfg).unwrap();
    let (records, _) = preprocess_all(&c.records, &cfg.grid, &PreprocessConfig::for_grid(&cfg.grid)).unwrap();
    let classes = class_names(&records);
    (c, records, classes)
}

fn train_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        patience: epochs,
        batch_size: 8,
        optimizer: AdamConfig::default(),
        seed: 3,
    }
}

fn run(mc: &ModelConfig, epochs: usize) -> TrainState {
    let (c, records, classes) = corpus();
    let features = c.feature_store();
    let model = Model::build(mc).unwrap();
    let enc = TaskEncoder::fit(mc.task_encoding, &classes, &records, &mc.grid).unwrap();
    let samples: Vec<Sample> = records.iter().map(|r| Sample::from_record(r, &enc).unwrap()).collect();
    assert_eq!(samples.len(), 8);
    let obj = SequenceObjective {
        model: &model,
        features: &features,
        input: InputMode::Blend {
            radius: 1.0,
            cumulative: false,
        },
        encoder: &enc,
        train: samples,
        valid: Vec::new(),
    };
    let store = model.init_store(&mut stream(3, "init")).unwrap();
    fit(&obj, &train_cfg(epochs), TrainState::new(store, AdamConfig::default()), |_| Ok(())).unwrap()
}

#[test]
fn loss_falls_over_the_first_epochs() {
    let (grid, channels) = (synth().grid, synth().channels());
    let mut hl = ModelConfig::high_level(grid, channels, 2);
    hl.task_dropout = 0.0;
    for mc in [hl, ModelConfig::dual(grid, channels, 2, DualArch::A)] {
        let state = run(&mc, 5);
        let losses: Vec<f64> = state.history.iter().map(|h| h.train_loss).collect();
        assert_eq!(losses.len(), 5);
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "{:?}: {losses:?}", mc.family);
        }
    }
}

#[test]
fn dual_log_components_recombine() {
    let mut mc = ModelConfig::dual(synth().grid, synth().channels(), 2, DualArch::B);
    mc.loss.w_fix = 0.3;
    let state = run(&mc, 3);
    for h in &state.history {
        let (f, d) = (h.train_fix.unwrap(), h.train_det.unwrap());
        // Batch values are f32, so the recombination holds to single precision.
        assert!((h.train_loss - (0.3 * f + 0.7 * d)).abs() < 1e-6 * h.train_loss.max(1.0), "{h:?}");
    }
}

/// One scalar weight `w` trained towards 3 while validation prefers 1.
struct Toy {
    scale: f64,
}

impl Objective for Toy {
    fn train_len(&self) -> usize {
        4
    }

    fn valid_len(&self) -> usize {
        if self.scale == 1.0 {
            2
        } else {
            0
        }
    }

    fn loss(&self, s: &mut Session<'_>, _rows: &[usize], valid: bool) -> foveal::Result<LossParts> {
        let w = s.param("w")?;
        let target = if valid { -1.0 } else { -3.0 };
        let d = s.graph.offset(w, target)?;
        let d = s.graph.scale(d, self.scale)?;
        let sq = s.graph.mul(d, d)?;
        let total = s.graph.sum(sq)?;
        Ok(LossParts {
            total,
            fix: None,
            det: None,
        })
    }
}

fn toy_store() -> ParamStore {
    let mut store = ParamStore::new();
    store.insert_param("w", Tensor::from_vec(&[1], vec![0.0]).unwrap());
    store
}

#[test]
fn early_stopping_restores_the_best_epoch() {
    let cfg = TrainConfig {
        max_epochs: 500,
        patience: 4,
        batch_size: 4,
        optimizer: AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        },
        seed: 0,
    };
    let mut seen = Vec::new();
    let state = fit(&Toy { scale: 1.0 }, &cfg, TrainState::new(toy_store(), cfg.optimizer), |st| {
        seen.push(st.store.param("w")?.item()?);
        Ok(())
    })
    .unwrap();
    assert!(state.stopped_early);
    assert_eq!(state.epoch, state.best_epoch + cfg.patience);
    let best = state.best().param("w").unwrap().item().unwrap();
    assert_eq!(best, seen[state.best_epoch - 1]);
    let closest = seen.iter().copied().fold(f64::INFINITY, |b, w| if (w - 1.0).abs() < (b - 1.0).abs() { w } else { b });
    assert_eq!(best, closest);
    let valid: Vec<f64> = state.history.iter().map(|h| h.valid_loss).collect();
    let min = valid.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(valid[state.best_epoch - 1], min);
}

#[test]
fn non_finite_losses_stop_training_with_a_divergence_error() {
    let cfg = TrainConfig {
        max_epochs: 3,
        patience: 3,
        batch_size: 4,
        optimizer: AdamConfig::default(),
        seed: 0,
    };
    let err = fit(&Toy { scale: 1e300 }, &cfg, TrainState::new(toy_store(), cfg.optimizer), |_| Ok(())).unwrap_err();
    assert!(matches!(err, Error::Diverged { epoch: 1, batch: 0, .. }), "{err}");
}
