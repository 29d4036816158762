use super::{init, ParamStore, Session};
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{Tensor, Var};

/// Fully connected layer `x·W + b` with `W` of shape `in×out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: String,
    pub bias: String,
    pub inputs: usize,
    pub units: usize,
}

impl Dense {
    pub fn new(prefix: &str, inputs: usize, units: usize) -> Self {
        Dense {
            weight: format!("{prefix}.weight"),
            bias: format!("{prefix}.bias"),
            inputs,
            units,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        let w = init::glorot_uniform(&[self.inputs, self.units], self.inputs, self.units, rng)?;
        store.insert_param(&self.weight, w);
        store.insert_param(&self.bias, Tensor::zeros(&[self.units]));
        Ok(())
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let w = s.param(&self.weight)?;
        let b = s.param(&self.bias)?;
        s.graph.dense(x, w, b)
    }
}
