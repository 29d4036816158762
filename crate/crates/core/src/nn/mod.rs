//! Layers and training utilities built on the tape.
//!
//! Parameters live in a [`ParamStore`] keyed by dotted names
//! (`fix_lstm.input_kernel`, `head.weight`, …). A [`Session`] binds those
//! tensors onto one [`Graph`] for the duration of a forward pass.

mod adam;
mod batchnorm;
mod convlstm;
mod dense;
mod dropout;
mod early_stop;
mod init;

pub use adam::{Adam, AdamConfig};
pub use batchnorm::{BatchNorm, BN_EPSILON, BN_MOMENTUM};
pub use convlstm::{ConvLstmCell, GateWeights, Gates, LstmState};
pub use dense::Dense;
pub use dropout::{dropout_tensor, DROPOUT_RATE};
pub use early_stop::EarlyStopper;
pub use init::{glorot_uniform, glorot_limit};

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Gradients, Graph, Tensor, Var};

/// Whether layers use batch statistics and dropout (train) or stored statistics (infer).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

/// Named trainable parameters plus non-trainable buffers (batch-norm moving statistics).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    buffers: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_param(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Tensor) {
        self.buffers.insert(name.into(), value);
    }

    pub fn param(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing buffer `{name}`")))
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn buffers(&self) -> &BTreeMap<String, Tensor> {
        &self.buffers
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.params
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Replaces every tensor with a zero tensor of the same shape.
    pub fn zero_all(&mut self) {
        for t in self.params.values_mut() {
            *t = Tensor::zeros_dtype(t.shape(), t.dtype());
        }
    }

    /// True when both stores hold bitwise-identical tensors under the same names.
    pub fn bitwise_eq(&self, other: &ParamStore) -> bool {
        fn eq(a: &BTreeMap<String, Tensor>, b: &BTreeMap<String, Tensor>) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|((ka, ta), (kb, tb))| ka == kb && ta.bitwise_eq(tb))
        }
        eq(&self.params, &other.params) && eq(&self.buffers, &other.buffers)
    }

    /// Applies moving-statistics updates taken from a finished training session.
    pub fn apply_bn_updates(&mut self, updates: Vec<BnUpdate>) {
        for u in updates {
            self.buffers.insert(u.mean_key, u.mean);
            self.buffers.insert(u.var_key, u.var);
            self.buffers.insert(u.count_key, u.count);
        }
    }
}

/// Pending moving-statistics update produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    mean_key: String,
    var_key: String,
    count_key: String,
    mean: Tensor,
    var: Tensor,
    count: Tensor,
}

/// One forward pass: a graph, the parameters bound onto it, and the layer mode.
pub struct Session<'a> {
    pub graph: Graph,
    store: &'a ParamStore,
    bound: HashMap<String, Var>,
    mode: Mode,
    rng: Option<Rng>,
    bn_updates: Vec<BnUpdate>,
}

impl<'a> Session<'a> {
    /// Recording session. `rng` drives dropout; without it dropout is skipped even in train mode.
    pub fn train(store: &'a ParamStore, rng: Option<Rng>) -> Self {
        Session {
            graph: Graph::new(),
            store,
            bound: HashMap::new(),
            mode: Mode::Train,
            rng,
            bn_updates: Vec::new(),
        }
    }

    /// Tape-free inference session.
    pub fn infer(store: &'a ParamStore) -> Self {
        Session {
            graph: Graph::no_grad(),
            store,
            bound: HashMap::new(),
            mode: Mode::Infer,
            rng: None,
            bn_updates: Vec::new(),
        }
    }

    /// Session with an explicit mode on a recording graph (e.g. gradient checks in infer mode).
    pub fn with_mode(store: &'a ParamStore, mode: Mode, rng: Option<Rng>) -> Self {
        let mut s = Self::train(store, rng);
        s.mode = mode;
        s
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Binds parameter `name` onto the graph once and returns its handle.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self.store.param(name)?.clone();
        let v = self.graph.param(t);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.graph.constant(t)
    }

    pub(crate) fn rng_mut(&mut self) -> Option<&mut Rng> {
        self.rng.as_mut()
    }

    pub(crate) fn push_bn_update(&mut self, u: BnUpdate) {
        self.bn_updates.push(u);
    }

    /// Gradients of `loss` for every parameter bound in this session, by name.
    pub fn param_grads(&self, loss: Var) -> Result<BTreeMap<String, Tensor>> {
        let grads: Gradients = self.graph.backward(loss)?;
        self.bound
            .iter()
            .map(|(k, &v)| Ok((k.clone(), grads.get(v)?.clone())))
            .collect()
    }

    /// Moving-statistics updates accumulated by training-mode batch norms.
    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.graph.value(v)
    }
}
