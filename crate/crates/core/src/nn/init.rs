use rand::Rng as _;

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Uniform samples in `±√(6/(fan_in+fan_out))`.
pub fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Result<Tensor> {
    let limit = glorot_limit(fan_in, fan_out);
    Tensor::from_fn(shape, |_| rng.random_range(-limit..limit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Dense, ParamStore};
    use crate::rng::stream;

    #[test]
    fn fixed_seed_is_bit_identical() {
        let layer = Dense::new("fc", 7, 3);
        let mut a = ParamStore::new();
        let mut b = ParamStore::new();
        layer.init(&mut a, &mut stream(11, "init")).unwrap();
        layer.init(&mut b, &mut stream(11, "init")).unwrap();
        assert!(a.bitwise_eq(&b));
        assert!(a.param("fc.bias").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn variance_matches_glorot() {
        let t = glorot_uniform(&[100, 100], 100, 100, &mut stream(3, "init")).unwrap();
        let n = t.len() as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let expected = 2.0 / 200.0;
        assert!((var - expected).abs() < 0.2 * expected, "var {var}");
        let lim = glorot_limit(100, 100);
        assert!(t.data().iter().all(|v| v.abs() < lim));
    }
}
