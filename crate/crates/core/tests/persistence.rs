use std::collections::BTreeMap;

use foveal::data::tensor_file::{decode, encode, header_len, read_tensor, write_tensor};
use foveal::data::{Checkpoint, SynthConfig};
use foveal::encoding::GridSpec;
use foveal::models::{DualArch, Model, ModelConfig};
use foveal::nn::{Adam, AdamConfig, ParamStore, Session};
use foveal::rng::stream;
use foveal::run::{train_sequence, Dataset, RunConfig};
use foveal::tensor::{DType, Tensor};
use foveal::Error;
use rand::Rng;

fn random(shape: &[usize], dtype: DType, seed: u64) -> Tensor {
    let mut rng = stream(seed, "tensor");
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1e3..1e3)).collect();
    Tensor::from_vec_dtype(shape, data, dtype).unwrap()
}

#[test]
fn tensor_file_layout() {
    let t = random(&[2, 3], DType::F32, 1);
    let bytes = encode(&t);
    assert_eq!(header_len(2), 21);
    assert_eq!(bytes.len(), 21 + 6 * 4);
    assert_eq!(&bytes[..4], b"FTNS");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(bytes[8], 0);
    assert_eq!(u32::from_le_bytes(bytes[9..13].try_into().unwrap()), 2);
    assert_eq!(u32::from_le_bytes(bytes[13..17].try_into().unwrap()), 2);
    assert_eq!(u32::from_le_bytes(bytes[17..21].try_into().unwrap()), 3);
    let first = f32::from_le_bytes(bytes[21..25].try_into().unwrap());
    assert_eq!(first as f64, t.data()[0]);
}

#[test]
fn tensor_files_round_trip_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let shapes: [&[usize]; 5] = [&[], &[1], &[7], &[2, 3, 4], &[3, 1, 2, 2, 5]];
    for (i, shape) in shapes.iter().enumerate() {
        for dtype in [DType::F32, DType::F64] {
            let t = random(shape, dtype, i as u64);
            let back = decode(&encode(&t)).unwrap();
            assert!(back.bitwise_eq(&t));
            assert_eq!(back.dtype(), dtype);
            let path = dir.path().join(format!("t{i}.ftns"));
            write_tensor(&path, &t).unwrap();
            assert!(read_tensor(&path).unwrap().bitwise_eq(&t));
        }
    }
}

#[test]
fn damaged_tensor_files_are_reported_as_corrupt() {
    let bytes = encode(&random(&[2, 3], DType::F64, 2));
    for cut in [0, 3, 12, 20, 21, bytes.len() - 1] {
        assert!(matches!(decode(&bytes[..cut]), Err(Error::Corrupt(_))), "cut at {cut}");
    }
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(decode(&long), Err(Error::Corrupt(_))));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(decode(&magic), Err(Error::Corrupt(_))));
    let mut dtype = bytes;
    dtype[8] = 7;
    assert!(matches!(decode(&dtype), Err(Error::Corrupt(_))));
}

fn trained_store(cfg: &ModelConfig) -> (ParamStore, Adam) {
    let model = Model::build(cfg).unwrap();
    let mut store = model.init_store(&mut stream(3, "init")).unwrap();
    let mut adam = Adam::new(AdamConfig::default());
    let g = cfg.grid;
    let x = random(&[2, g.rows, g.cols, cfg.feature_channels], DType::F32, 4);
    let mut task = vec![0.0; 2 * cfg.classes];
    task[0] = 1.0;
    task[cfg.classes + 1] = 1.0;
    let task = Tensor::from_vec(&[2, cfg.classes], task).unwrap();
    // One optimizer step so moments, batch-norm statistics and the step count are non-trivial.
    let mut s = Session::train(&store, None);
    let xv = s.constant(x);
    let tv = s.constant(task);
    let out = model.forward(&mut s, &[xv, xv], tv, None).unwrap();
    let loss = s.graph.sum(out.fix[1]).unwrap();
    let p = s.graph.mul(out.fix[1], out.fix[1]).unwrap();
    let sq = s.graph.sum(p).unwrap();
    let det = s.graph.sum(out.det.unwrap()[1]).unwrap();
    let loss = s.graph.add(loss, sq).unwrap();
    let loss = s.graph.add(loss, det).unwrap();
    let grads = s.param_grads(loss).unwrap();
    let updates = s.take_bn_updates();
    drop(s);
    store.apply_bn_updates(updates);
    adam.step(&mut store, &grads).unwrap();
    (store, adam)
}

#[test]
fn checkpoints_round_trip_bitwise_with_optimizer_state() {
    let cfg = ModelConfig::dual(GridSpec::with_cell_size(4, 4, 8), 3, 3, DualArch::A);
    let (store, adam) = trained_store(&cfg);
    let mut extras = BTreeMap::new();
    extras.insert("task_heatmap.cat".to_string(), random(&[4, 4], DType::F32, 5));
    let ck = Checkpoint {
        model: cfg.clone(),
        classes: vec!["cat".into(), "cup".into(), "dog".into()],
        epoch: 7,
        store: store.clone(),
        extras: extras.clone(),
        optimizer: Some(adam.clone()),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck");
    ck.save(&path).unwrap();
    // Saving over an existing checkpoint replaces it.
    ck.save(&path).unwrap();
    let back = Checkpoint::load_for(&path, &cfg).unwrap();
    assert!(back.store.bitwise_eq(&store));
    assert_eq!(back.model, cfg);
    assert_eq!(back.classes, ck.classes);
    assert_eq!(back.epoch, 7);
    assert!(back.extras["task_heatmap.cat"].bitwise_eq(&extras["task_heatmap.cat"]));
    let opt = back.optimizer.unwrap();
    assert_eq!(opt.step_count(), adam.step_count());
    let (a, b) = (opt.state_tensors(&store).unwrap(), adam.state_tensors(&store).unwrap());
    assert_eq!(a.len(), b.len());
    assert!(a.iter().zip(&b).all(|((ka, ta), (kb, tb))| ka == kb && ta.bitwise_eq(tb)));
}

#[test]
fn loading_into_a_different_architecture_fails() {
    let g = GridSpec::with_cell_size(4, 4, 8);
    let a = ModelConfig::dual(g, 3, 3, DualArch::A);
    let c = ModelConfig::dual(g, 3, 3, DualArch::C);
    let (store, _) = trained_store(&a);
    let dir = tempfile::tempdir().unwrap();
    Checkpoint {
        model: a,
        classes: vec!["a".into(), "b".into(), "c".into()],
        epoch: 1,
        store,
        extras: BTreeMap::new(),
        optimizer: None,
    }
    .save(dir.path())
    .unwrap();
    assert!(matches!(Checkpoint::load_for(dir.path(), &c), Err(Error::Checkpoint(_))));
}

fn small_run(epochs: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.synthetic = Some(SynthConfig {
        scenes: 24,
        ..SynthConfig::default()
    });
    cfg.foveation.mask_radius = 1.0;
    cfg.train.max_epochs = epochs;
    cfg.train.patience = 100;
    cfg.train.batch_size = 8;
    cfg.train.seed = 11;
    cfg
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = Dataset::load(&small_run(5)).unwrap();

    let straight = train_sequence(&small_run(5), &data, &dir.path().join("straight"), false).unwrap();
    let split = dir.path().join("split");
    let first = train_sequence(&small_run(2), &data, &split, false).unwrap();
    assert_eq!(first.epoch, 2);
    let resumed = train_sequence(&small_run(5), &data, &split, true).unwrap();

    assert_eq!(straight.history.len(), 5);
    assert_eq!(resumed.history.len(), 5);
    for (a, b) in straight.history.iter().zip(&resumed.history) {
        assert_eq!(a.epoch, b.epoch);
        assert!((a.train_loss - b.train_loss).abs() < 1e-6, "epoch {}", a.epoch);
        assert!((a.valid_loss - b.valid_loss).abs() < 1e-6, "epoch {}", a.epoch);
    }
    assert!(resumed.store.bitwise_eq(&straight.store));
}
