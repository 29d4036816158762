mod common;

use common::lstm::{compare, K};
use foveal::nn::{ConvLstmCell, ParamStore, Session};
use foveal::rng::stream;
use foveal::tensor::{with_default_dtype, DType, Tensor};

#[test]
fn fifty_steps_match_the_scalar_equations() {
    with_default_dtype(DType::F64, || {
        for seed in [5, 6, 7] {
            let t = compare(seed, 50);
            assert!(t.worst < 1e-10, "max deviation {:e}", t.worst);
            assert!(t.identity_exact);
        }
    });
}

#[test]
fn first_step_without_state_uses_no_recurrent_weights() {
    with_default_dtype(DType::F64, || {
        let cell = ConvLstmCell::new("lstm", 1, 1, K, 1, 1);
        let mut store = ParamStore::new();
        cell.init(&mut store, &mut stream(1, "x")).unwrap();
        let mut poisoned = store.clone();
        poisoned.insert_param(cell.recurrent_kernel(), Tensor::full(&[K, K, 1, 4], 1e3).unwrap());
        let run = |st: &ParamStore| {
            let mut s = Session::infer(st);
            let x = s.constant(Tensor::from_vec(&[1, 1, 1, 1], vec![0.7]).unwrap());
            let out = cell.step(&mut s, x, None).unwrap();
            s.value(out.h).to_vec()
        };
        assert_eq!(run(&store), run(&poisoned));
    });
}
