use super::{ModelConfig, SigmoidMlp};
use crate::error::Result;
use crate::nn::{ParamStore, Session};
use crate::rng::Rng;
use crate::tensor::Var;

/// Binary target-presence classifier over frozen crop features:
/// dense(512) → ReLU → dense(256) → ReLU → dense(1) → sigmoid, with dropout between layers.
#[derive(Clone, Debug)]
pub struct DetectionHead {
    pub(crate) mlp: SigmoidMlp,
}

impl DetectionHead {
    pub fn new(prefix: &str, input: usize, hidden: &[usize], dropout: f64) -> Self {
        DetectionHead {
            mlp: SigmoidMlp::new(prefix, input, hidden, dropout),
        }
    }

    pub fn input_len(&self) -> usize {
        self.mlp.input_len()
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        self.mlp.init(store, rng)
    }

    /// `x` is `N×input`; returns `N` probabilities.
    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        self.mlp.apply(s, x)
    }
}

/// A detection head bound to its manifest.
#[derive(Clone, Debug)]
pub struct DetectionModel {
    pub cfg: ModelConfig,
    pub head: DetectionHead,
}

impl DetectionModel {
    pub fn build(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.family != super::Family::Detection {
            return Err(crate::Error::Config(format!("expected a detection manifest, got {:?}", cfg.family)));
        }
        Ok(DetectionModel {
            head: DetectionHead::new("fc", cfg.det_input, &cfg.det_units, cfg.det_dropout),
            cfg: cfg.clone(),
        })
    }

    pub fn init_store(&self, rng: &mut Rng) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        self.head.init(&mut store, rng)?;
        Ok(store)
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        self.head.forward(s, x)
    }
}
