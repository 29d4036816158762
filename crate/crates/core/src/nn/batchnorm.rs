use log::warn;

use super::{BnUpdate, Mode, ParamStore, Session};
use crate::error::Result;
use crate::tensor::{Tensor, Var};

pub const BN_EPSILON: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.99;

/// Per-channel batch normalization over every axis but the last.
///
/// Train mode normalizes with the batch mean μ and variance σ and updates the
/// moving statistics `M ← M·γ + μ·(1−γ)`, `V ← V·γ + σ·(1−γ)`. Infer mode
/// normalizes with `(M, V)` and changes nothing.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub prefix: String,
    pub channels: usize,
    pub epsilon: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(prefix: &str, channels: usize) -> Self {
        BatchNorm {
            prefix: prefix.to_string(),
            channels,
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
        }
    }

    fn key(&self, k: &str) -> String {
        format!("{}.{k}", self.prefix)
    }

    /// α = 1, β = 0, M = 0, V = 1.
    pub fn init(&self, store: &mut ParamStore) {
        let c = self.channels;
        store.insert_param(self.key("gamma"), Tensor::ones(&[c]));
        store.insert_param(self.key("beta"), Tensor::zeros(&[c]));
        store.insert_buffer(self.key("moving_mean"), Tensor::zeros(&[c]));
        store.insert_buffer(self.key("moving_var"), Tensor::ones(&[c]));
        store.insert_buffer(self.key("updates"), Tensor::zeros(&[]));
    }

    pub fn moving_mean<'s>(&self, store: &'s ParamStore) -> Result<&'s Tensor> {
        store.buffer(&self.key("moving_mean"))
    }

    pub fn moving_var<'s>(&self, store: &'s ParamStore) -> Result<&'s Tensor> {
        store.buffer(&self.key("moving_var"))
    }

    pub fn apply(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let gamma = s.param(&self.key("gamma"))?;
        let beta = s.param(&self.key("beta"))?;
        match s.mode() {
            Mode::Train => {
                let (y, mu, var) = s.graph.batch_norm(x, gamma, beta, self.epsilon)?;
                let store = s.store();
                let m_old = store.buffer(&self.key("moving_mean"))?;
                let v_old = store.buffer(&self.key("moving_var"))?;
                let count = store.buffer(&self.key("updates"))?.item()?;
                let g = self.momentum;
                let m_new: Vec<f64> = m_old.data().iter().zip(&mu).map(|(m, u)| m * g + u * (1.0 - g)).collect();
                let v_new: Vec<f64> = v_old.data().iter().zip(&var).map(|(v, u)| v * g + u * (1.0 - g)).collect();
                let update = BnUpdate {
                    mean_key: self.key("moving_mean"),
                    var_key: self.key("moving_var"),
                    count_key: self.key("updates"),
                    mean: Tensor::from_vec_dtype(&[self.channels], m_new, m_old.dtype())?,
                    var: Tensor::from_vec_dtype(&[self.channels], v_new, v_old.dtype())?,
                    count: Tensor::from_vec_dtype(&[], vec![count + 1.0], m_old.dtype())?,
                };
                s.push_bn_update(update);
                Ok(y)
            }
            Mode::Infer => {
                let store = s.store();
                if store.buffer(&self.key("updates"))?.item()? == 0.0 {
                    warn!("batch norm `{}` used for inference before any training update", self.prefix);
                }
                let m = store.buffer(&self.key("moving_mean"))?.to_vec();
                let v = store.buffer(&self.key("moving_var"))?.to_vec();
                let g = s.value(gamma).to_vec();
                let b = s.value(beta).to_vec();
                let scale: Vec<f64> = (0..self.channels).map(|c| g[c] / (v[c] + self.epsilon).sqrt()).collect();
                let shift: Vec<f64> = (0..self.channels).map(|c| b[c] - m[c] * scale[c]).collect();
                s.graph.channel_affine(x, &scale, &shift)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DType;

    fn batch(rows: &[[f64; 2]]) -> Tensor {
        Tensor::from_vec_dtype(&[rows.len(), 2], rows.iter().flatten().copied().collect(), DType::F64).unwrap()
    }

    fn store() -> (BatchNorm, ParamStore) {
        let bn = BatchNorm::new("bn", 2);
        let mut s = ParamStore::new();
        bn.init(&mut s);
        (bn, s)
    }

    #[test]
    fn train_output_is_standardized() {
        let (bn, store) = store();
        let x = batch(&[[1.0, 10.0], [2.0, 20.0], [3.0, 35.0], [6.0, 15.0]]);
        let mut s = Session::train(&store, None);
        let xv = s.constant(x);
        let y = bn.apply(&mut s, xv).unwrap();
        let y = s.value(y).clone();
        for c in 0..2 {
            let col: Vec<f64> = (0..4).map(|r| y.at(&[r, c])).collect();
            let mean = col.iter().sum::<f64>() / 4.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-3, "{var}");
        }
    }

    #[test]
    fn moving_mean_single_update() {
        let (bn, mut store) = store();
        let x = batch(&[[1.0, 1.0], [1.0, 1.0]]);
        let mut s = Session::train(&store, None);
        let xv = s.constant(x);
        bn.apply(&mut s, xv).unwrap();
        let u = s.take_bn_updates();
        drop(s);
        store.apply_bn_updates(u);
        let m = bn.moving_mean(&store).unwrap().data().to_vec();
        assert!(m.iter().all(|&v| (v - 0.01).abs() < 1e-8), "{m:?}");
    }

    #[test]
    fn two_batches_follow_the_recurrence() {
        let (bn, mut store) = store();
        let b1 = batch(&[[0.0, 2.0], [2.0, 6.0]]); // μ=(1,4) σ=(1,4)
        let b2 = batch(&[[3.0, -1.0], [5.0, 1.0]]); // μ=(4,0) σ=(1,1)
        for b in [b1, b2] {
            let mut s = Session::train(&store, None);
            let xv = s.constant(b);
            bn.apply(&mut s, xv).unwrap();
            let u = s.take_bn_updates();
            drop(s);
            store.apply_bn_updates(u);
        }
        let g = 0.99;
        let m = [(0.0 * g + 1.0 * (1.0 - g)) * g + 4.0 * (1.0 - g), (0.0 * g + 4.0 * (1.0 - g)) * g];
        let v = [(1.0 * g + 1.0 * (1.0 - g)) * g + 1.0 * (1.0 - g), (1.0 * g + 4.0 * (1.0 - g)) * g + 1.0 * (1.0 - g)];
        let mm = bn.moving_mean(&store).unwrap();
        let vv = bn.moving_var(&store).unwrap();
        for c in 0..2 {
            assert!((mm.data()[c] - m[c]).abs() < 1e-6);
            assert!((vv.data()[c] - v[c]).abs() < 1e-6);
        }
    }

    #[test]
    fn infer_is_batch_size_invariant() {
        let (bn, mut store) = store();
        store.insert_buffer("bn.moving_mean", Tensor::from_vec(&[2], vec![0.5, -1.0]).unwrap());
        store.insert_buffer("bn.moving_var", Tensor::from_vec(&[2], vec![2.0, 0.25]).unwrap());
        let run = |x: Tensor| {
            let mut s = Session::infer(&store);
            let xv = s.constant(x);
            let y = bn.apply(&mut s, xv).unwrap();
            s.value(y).clone()
        };
        let alone = run(batch(&[[1.0, 2.0]]));
        let with = run(batch(&[[1.0, 2.0], [100.0, -50.0], [3.0, 3.0]]));
        assert_eq!(alone.data(), &with.data()[..2]);
    }
}
