mod common;

use common::models::*;
use foveal::data::Checkpoint;
use foveal::models::{DualArch, Forward, Head, Model, ModelConfig, TensorState};
use foveal::nn::{BatchNorm, Dense, Session};
use foveal::tensor::{with_default_dtype, DType};

#[test]
fn zero_weights_give_uniform_fixations_and_even_detection() {
    with_default_dtype(DType::F64, || {
        for cfg in configs() {
            if cfg.head == Head::Sigmoid {
                continue;
            }
            let (model, mut store) = build(&cfg, 1);
            store.zero_all();
            let (fix, det) = run(&model, &store, &inputs(4, 2), &task_for(&cfg));
            let cells = grid().cells() as f64;
            for p in &fix {
                assert_eq!(p.shape(), &[B, grid().cells()]);
                assert!(p.data().iter().all(|v| (v - 1.0 / cells).abs() < 1e-15), "{:?}", cfg.family);
            }
            if let Some(det) = det {
                assert!(det.iter().flat_map(|d| d.to_vec()).all(|v| (v - 0.5).abs() < 1e-15));
            }
        }
    });
}

#[test]
fn high_level_forward_matches_hand_composition() {
    with_default_dtype(DType::F64, || {
        let cfg = ModelConfig::high_level(grid(), CH, CLASSES);
        let (model, store) = build(&cfg, 3);
        let Model::HighLevel(hl) = &model else { panic!("high-level model expected") };
        let xs = inputs(3, 4);
        let task = task_for(&cfg);
        let (fix, _) = run(&model, &store, &xs, &task);

        let mut s = Session::infer(&store);
        let fc = Dense::new("task_fc", CLASSES, CH);
        let tv = s.constant(task.clone());
        let z = fc.forward(&mut s, tv).unwrap();
        let a = s.graph.tanh(z).unwrap();
        let bn = BatchNorm::new("fix_bn", cfg.lstm.filters);
        let out = Dense::new("fix_out", 2 * 2 * cfg.lstm.filters, grid().cells());
        let mut state = None;
        for (t, x) in xs.iter().enumerate() {
            let xv = s.constant(x.clone());
            let gated = s.graph.scale_channels(xv, a).unwrap();
            let st = hl.cell.step(&mut s, gated, state).unwrap();
            let normed = bn.apply(&mut s, st.h).unwrap();
            let flat = s.graph.flatten_rows(normed).unwrap();
            let logits = out.forward(&mut s, flat).unwrap();
            let p = s.graph.softmax(logits).unwrap();
            let d = max_diff(s.value(p), &fix[t]);
            assert!(d < 1e-14, "step {t}: {d:e}");
            state = Some(st);
        }
    });
}

/// Swaps the parameters of the two ConvLSTMs.
#[test]
fn a_and_b_are_mirror_images_under_swapped_cells() {
    with_default_dtype(DType::F64, || {
        let g = grid();
        let cfg_a = ModelConfig::dual(g, CH, CLASSES, DualArch::A);
        let cfg_b = ModelConfig::dual(g, CH, CLASSES, DualArch::B);
        let (a, store_a) = build(&cfg_a, 5);
        let b = Model::build(&cfg_b).unwrap();
        let store_b = swap_cells(&store_a);
        let xs = inputs(5, 6);
        let task = task_for(&cfg_a);
        let (fa, sa) = forward_values(&a, &store_a, &xs, &task);
        let (fb, sb) = forward_values(&b, &store_b, &xs, &task);
        assert_eq!(fa.handoff.len(), 5);
        for (ha, hb) in fa.handoff.iter().zip(&fb.handoff) {
            assert!(sa.value(ha.h).bitwise_eq(sb.value(hb.h)));
            assert!(sa.value(ha.c).bitwise_eq(sb.value(hb.c)));
        }
        let cell = |f: &Forward, i: usize| f.state.cells[i].expect("state slot set");
        for (i, j) in [(0, 1), (1, 0)] {
            assert!(sa.value(cell(&fa, i).h).bitwise_eq(sb.value(cell(&fb, j).h)));
            assert!(sa.value(cell(&fa, i).c).bitwise_eq(sb.value(cell(&fb, j).c)));
        }
    });
}

#[test]
fn a_detection_cell_starts_from_the_fixation_state() {
    with_default_dtype(DType::F64, || {
        let cfg = ModelConfig::dual(grid(), CH, CLASSES, DualArch::A);
        let (model, store) = build(&cfg, 7);
        let Model::Dual(dual) = &model else { panic!("dual model expected") };
        let xs = inputs(4, 8);
        let task = task_for(&cfg);
        let (full, s) = forward_values(&model, &store, &xs, &task);
        for t in 0..xs.len() {
            let (prefix, sp) = forward_values(&model, &store, &xs[..=t], &task);
            let f = prefix.state.cells[0].unwrap();
            assert!(sp.value(f.h).bitwise_eq(s.value(full.handoff[t].h)));
            assert!(sp.value(f.c).bitwise_eq(s.value(full.handoff[t].c)));
        }
        // The last detection state is one step of the detection cell from the last handoff.
        let mut s2 = Session::infer(&store);
        let fc = Dense::new("task_fc", CLASSES, CH);
        let tv = s2.constant(task.clone());
        let z = fc.forward(&mut s2, tv).unwrap();
        let a = s2.graph.tanh(z).unwrap();
        let x = s2.constant(xs[3].clone());
        let gated = s2.graph.scale_channels(x, a).unwrap();
        let last = full.handoff[3];
        let prev = foveal::nn::LstmState {
            h: s2.constant(s.value(last.h).clone()),
            c: s2.constant(s.value(last.c).clone()),
        };
        let d = dual.det_cell.as_ref().unwrap().step(&mut s2, gated, Some(prev)).unwrap();
        let got = full.state.cells[1].unwrap();
        assert!(s2.value(d.h).bitwise_eq(s.value(got.h)));
        assert!(s2.value(d.c).bitwise_eq(s.value(got.c)));
    });
}

#[test]
fn c_detection_input_joins_features_and_fixation_state() {
    with_default_dtype(DType::F64, || {
        let cfg = ModelConfig::dual(grid(), CH, CLASSES, DualArch::C);
        let (model, store) = build(&cfg, 9);
        let Model::Dual(dual) = &model else { panic!("dual model expected") };
        let state_len = 2 * 2 * cfg.lstm.filters;
        assert_eq!(dual.det_input_len(), grid().cells() * CH + state_len);
        assert!(dual.det_cell.is_none());
        let xs = inputs(3, 10);
        let (out, s) = forward_values(&model, &store, &xs, &task_for(&cfg));
        assert_eq!(out.det_inputs.len(), 3);
        for &row in &out.det_inputs {
            assert_eq!(s.value(row).shape(), &[B, dual.det_input_len()]);
        }
        let last = s.value(*out.det_inputs.last().unwrap());
        let h = s.value(out.state.cells[0].unwrap().h).data().to_vec();
        let w = dual.det_input_len();
        for b in 0..B {
            let tail = &last.data()[b * w + grid().cells() * CH..(b + 1) * w];
            assert_eq!(tail, &h[b * state_len..(b + 1) * state_len]);
        }
    });
}

#[test]
fn whole_sequence_equals_stepwise_execution() {
    with_default_dtype(DType::F64, || {
        for cfg in configs() {
            let (model, store) = build(&cfg, 11);
            let xs = inputs(5, 12);
            let task = task_for(&cfg);
            let (fix, det) = run(&model, &store, &xs, &task);
            let mut state: Option<TensorState> = None;
            for (t, x) in xs.iter().enumerate() {
                let mut s = Session::infer(&store);
                let xv = s.constant(x.clone());
                let tv = s.constant(task.clone());
                let st = state.as_ref().map(|st| st.attach(&mut s));
                let out = model.forward(&mut s, &[xv], tv, st.as_ref()).unwrap();
                assert!(max_diff(s.value(out.fix[0]), &fix[t]) < 1e-13, "{:?} step {t}", cfg.family);
                if let (Some(d), Some(want)) = (&out.det, &det) {
                    assert!(max_diff(s.value(d[0]), &want[t]) < 1e-13);
                }
                state = Some(TensorState::detach(&out.state, &s));
            }
        }
    });
}

#[test]
fn checkpointed_models_reproduce_their_outputs_bitwise() {
    with_default_dtype(DType::F64, || {
        let dir = tempfile::tempdir().unwrap();
        for (i, cfg) in configs().into_iter().enumerate() {
            let (model, store) = build(&cfg, 13);
            let path = dir.path().join(format!("m{i}"));
            Checkpoint {
                model: cfg.clone(),
                classes: (0..CLASSES).map(|k| format!("c{k}")).collect(),
                epoch: 0,
                store: store.clone(),
                extras: Default::default(),
                optimizer: None,
            }
            .save(&path)
            .unwrap();
            let back = Checkpoint::load_for(&path, &cfg).unwrap();
            assert!(back.store.bitwise_eq(&store));
            let xs = inputs(3, 14);
            let task = task_for(&cfg);
            let (f1, d1) = run(&model, &store, &xs, &task);
            let (f2, d2) = run(&Model::build(&back.model).unwrap(), &back.store, &xs, &task);
            assert!(f1.iter().zip(&f2).all(|(a, b)| a.bitwise_eq(b)));
            assert_eq!(d1.is_some(), d2.is_some());
            if let (Some(d1), Some(d2)) = (d1, d2) {
                assert!(d1.iter().zip(&d2).all(|(a, b)| a.bitwise_eq(b)));
            }
        }
    });
}
