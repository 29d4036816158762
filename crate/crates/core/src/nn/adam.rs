use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{shape_err, Error, Result};
use crate::tensor::{DType, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam with per-parameter first and second moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update of every parameter that has a gradient in `grads`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, g) in grads {
            let p = params.param(name)?;
            if p.shape() != g.shape() {
                return shape_err(format!("adam: gradient {:?} for parameter `{name}` {:?}", g.shape(), p.shape()));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (name, g) in grads {
            let p = params.param(name)?.clone();
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; p.len()], vec![0.0; p.len()]));
            let mut out = p.to_vec();
            for i in 0..out.len() {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                out[i] -= lr * mhat / (vhat.sqrt() + epsilon);
            }
            let updated = Tensor::from_vec_dtype(p.shape(), out, p.dtype())
                .map_err(|_| Error::NonFinite("adam update"))?;
            params.insert_param(name.clone(), updated);
        }
        Ok(())
    }

    /// Moments as named tensors (`<param>.m`, `<param>.v`) plus the step counter.
    pub fn state_tensors(&self, params: &ParamStore) -> Result<BTreeMap<String, Tensor>> {
        let mut out = BTreeMap::new();
        for (name, (m, v)) in &self.moments {
            let shape = params.param(name)?.shape().to_vec();
            out.insert(format!("{name}.m"), Tensor::from_vec_dtype(&shape, m.clone(), DType::F64)?);
            out.insert(format!("{name}.v"), Tensor::from_vec_dtype(&shape, v.clone(), DType::F64)?);
        }
        Ok(out)
    }

    pub fn from_state(config: AdamConfig, step: u64, tensors: &BTreeMap<String, Tensor>) -> Result<Self> {
        let mut moments = BTreeMap::new();
        for (key, m) in tensors {
            let Some(name) = key.strip_suffix(".m") else { continue };
            let v = tensors
                .get(&format!("{name}.v"))
                .ok_or_else(|| Error::Checkpoint(format!("optimizer state for `{name}` lacks second moment")))?;
            moments.insert(name.to_string(), (m.to_vec(), v.to_vec()));
        }
        Ok(Adam { config, step, moments })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, v: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert_param(name, Tensor::from_vec_dtype(&[v.len()], v.to_vec(), DType::F64).unwrap());
        s
    }

    fn grads(name: &str, v: &[f64]) -> BTreeMap<String, Tensor> {
        BTreeMap::from([(name.to_string(), Tensor::from_vec_dtype(&[v.len()], v.to_vec(), DType::F64).unwrap())])
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = store_with("w", &[1.0, -2.0]);
        Adam::new(AdamConfig::default()).step(&mut p, &grads("w", &[0.0, 0.0])).unwrap();
        assert_eq!(p.param("w").unwrap().data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = store_with("w", &[0.0, 0.0, 0.0]);
        Adam::new(AdamConfig::default()).step(&mut p, &grads("w", &[3.0, -0.5, 100.0])).unwrap();
        for (&v, sign) in p.param("w").unwrap().data().iter().zip([-1.0, 1.0, -1.0]) {
            assert!((v - sign * 0.001).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = store_with("w", &[0.0, 0.0]);
        assert!(Adam::new(AdamConfig::default()).step(&mut p, &grads("w", &[1.0])).is_err());
    }

    #[test]
    fn three_steps_on_square_match_hand_recurrence() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        // independent recurrence for f(w) = w², grad 2w
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut expected = vec![];
        for t in 1..=3 {
            let g = 2.0 * w;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.1 * mh / (vh.sqrt() + 1e-8);
            expected.push(w);
        }
        let mut p = store_with("w", &[1.0]);
        let mut adam = Adam::new(cfg);
        for e in expected {
            let cur = p.param("w").unwrap().data()[0];
            adam.step(&mut p, &grads("w", &[2.0 * cur])).unwrap();
            assert!((p.param("w").unwrap().data()[0] - e).abs() < 1e-9);
        }
        assert_eq!(adam.step_count(), 3);
    }
}
