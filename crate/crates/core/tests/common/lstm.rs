//! Scalar reference for the ConvLSTM on 1×1 inputs, where the centre kernel
//! taps make it a plain LSTM.

use foveal::nn::{ConvLstmCell, GateWeights, LstmState, ParamStore, Session};
use foveal::rng::stream;
use foveal::tensor::Tensor;
use rand::Rng;

pub const CIN: usize = 3;
pub const F: usize = 4;
pub const K: usize = 3;

pub fn hard_sigmoid(x: f64) -> f64 {
    (0.2 * x + 0.5).clamp(0.0, 1.0)
}

/// Centre tap of a `K×K×C×F` kernel as a `C×F` matrix.
fn centre(t: &Tensor, c: usize) -> Vec<f64> {
    let mid = K / 2;
    let off = (mid * K + mid) * c * F;
    t.data()[off..off + c * F].to_vec()
}

pub struct Scalar {
    wx: [Vec<f64>; 4],
    wh: [Vec<f64>; 4],
    b: [Vec<f64>; 4],
}

impl Scalar {
    pub fn new(g: &GateWeights) -> Self {
        Scalar {
            wx: std::array::from_fn(|k| centre(&g.input[k], CIN)),
            wh: std::array::from_fn(|k| centre(&g.recurrent[k], F)),
            b: std::array::from_fn(|k| g.bias[k].to_vec()),
        }
    }

    fn pre(&self, gate: usize, x: &[f64], h: &[f64], j: usize) -> f64 {
        let mut z = self.b[gate][j];
        for (c, &xv) in x.iter().enumerate() {
            z += xv * self.wx[gate][c * F + j];
        }
        for (c, &hv) in h.iter().enumerate() {
            z += hv * self.wh[gate][c * F + j];
        }
        z
    }

    pub fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut h2 = vec![0.0; F];
        let mut c2 = vec![0.0; F];
        for j in 0..F {
            let i = hard_sigmoid(self.pre(0, x, h, j));
            let f = hard_sigmoid(self.pre(1, x, h, j));
            let o = hard_sigmoid(self.pre(2, x, h, j));
            let cand = self.pre(3, x, h, j).tanh();
            c2[j] = f * c[j] + i * cand;
            h2[j] = o * c2[j].tanh();
        }
        (h2, c2)
    }
}

pub struct Trace {
    /// Largest |cell − scalar| over h and c across all steps.
    pub worst: f64,
    /// Whether every c_t equalled f ⊙ c_{t−1} + i ⊙ c̃ bit for bit.
    pub identity_exact: bool,
}

/// Runs the cell and the scalar equations side by side for `steps` random
/// inputs. Call inside an F64 scope.
pub fn compare(seed: u64, steps: usize) -> Trace {
    let cell = ConvLstmCell::new("lstm", CIN, F, K, 1, 1);
    let mut store = ParamStore::new();
    let mut rng = stream(seed, "oracle");
    cell.init(&mut store, &mut rng).unwrap();
    let b = Tensor::from_fn(&[4 * F], |_| rng.random_range(-0.5..0.5)).unwrap();
    store.insert_param(cell.bias(), b);
    let oracle = Scalar::new(&cell.gate_weights(&store).unwrap());

    let xs: Vec<Vec<f64>> = (0..steps).map(|_| (0..CIN).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let mut s = Session::train(&store, None);
    let (mut h, mut c) = (vec![0.0; F], vec![0.0; F]);
    let mut state: Option<LstmState> = None;
    let mut trace = Trace {
        worst: 0.0,
        identity_exact: true,
    };
    for x in &xs {
        let xv = s.constant(Tensor::from_vec(&[1, 1, 1, CIN], x.clone()).unwrap());
        let (st, gates) = cell.step_with_gates(&mut s, xv, state).unwrap();
        (h, c) = oracle.step(x, &h, &c);
        for (a, b) in s.value(st.h).data().iter().zip(&h).chain(s.value(st.c).data().iter().zip(&c)) {
            trace.worst = trace.worst.max((a - b).abs());
        }
        // c_t is assembled from the step's own gate values.
        let i = s.value(gates.input).data().to_vec();
        let cand = s.value(gates.candidate).data().to_vec();
        let ct = s.value(st.c).data().to_vec();
        for j in 0..F {
            let expect = match (gates.forget, state) {
                (Some(fg), Some(prev)) => s.value(fg).data()[j] * s.value(prev.c).data()[j] + i[j] * cand[j],
                _ => i[j] * cand[j],
            };
            trace.identity_exact &= ct[j].to_bits() == expect.to_bits();
        }
        state = Some(st);
    }
    trace
}
