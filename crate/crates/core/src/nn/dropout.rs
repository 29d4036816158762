use rand::Rng as _;

use super::{Mode, Session};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Tensor, Var};

pub const DROPOUT_RATE: f64 = 0.5;

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    Ok(())
}

fn keep_mask(shape: &[usize], rate: f64, rng: &mut Rng) -> Result<Tensor> {
    let scale = 1.0 / (1.0 - rate);
    Tensor::from_vec_dtype(
        shape,
        (0..shape.iter().product::<usize>())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { scale })
            .collect(),
        crate::tensor::DType::F64,
    )
}

/// Inverted dropout on a plain tensor: survivors are scaled by `1/(1−rate)`.
pub fn dropout_tensor(x: &Tensor, rate: f64, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
    check_rate(rate)?;
    if mode == Mode::Infer || rate == 0.0 {
        return Ok(x.clone());
    }
    let mask = keep_mask(x.shape(), rate, rng)?;
    let data = x.data().iter().zip(mask.data()).map(|(a, m)| a * m).collect();
    Tensor::from_vec_dtype(x.shape(), data, x.dtype())
}

impl Session<'_> {
    /// Inverted dropout; identity in infer mode or when the session has no RNG.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        check_rate(rate)?;
        if self.mode() == Mode::Infer || rate == 0.0 {
            return Ok(x);
        }
        let shape = self.graph.shape(x).to_vec();
        let dtype = self.graph.value(x).dtype();
        let Some(rng) = self.rng_mut() else {
            return Ok(x);
        };
        let mask = keep_mask(&shape, rate, rng)?.to_dtype(dtype);
        let m = self.graph.constant(mask);
        self.graph.mul(x, m)
    }
}
