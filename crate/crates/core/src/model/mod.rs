//! Forecasting models sharing one direct multi-step interface.
//!
//! Every model maps a normalized lookback window `[B×L]` (plus, for
//! exogenous TimeXer, a `[B×L×n_exog]` window) to a `[B×H]` forecast in one
//! forward pass.

mod layers;
mod linear;
mod nbeats;
mod timexer;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use linear::{LinearModel, Naive, WindowConfig};
pub use nbeats::{NBeats, NBeatsConfig};
pub use timexer::{n_patches, AttentionRecord, TimeXer, TimeXerConfig, TokenSet};

use crate::tensor::{ParamStore, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("config error: {0}")]
    Config(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl From<ModelError> for TensorError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Tensor(t) => t,
            other => TensorError::Invalid(other.to_string()),
        }
    }
}

/// Model inputs for one mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `[B×L]`
    pub endog: Tensor,
    /// `[B×L×n_exog]`
    pub exog: Option<Tensor>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.endog.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout active, masks drawn from a generator seeded with `seed`.
    Train {
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    TimeXer(TimeXerConfig),
    NBeats(NBeatsConfig),
    Linear(WindowConfig),
    Naive(WindowConfig),
}

impl ModelConfig {
    pub fn lookback(&self) -> usize {
        match self {
            Self::TimeXer(c) => c.lookback,
            Self::NBeats(c) => c.lookback,
            Self::Linear(c) | Self::Naive(c) => c.lookback,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            Self::TimeXer(c) => c.horizon,
            Self::NBeats(c) => c.horizon,
            Self::Linear(c) | Self::Naive(c) => c.horizon,
        }
    }

    /// Copy with a different horizon.
    pub fn with_horizon(&self, horizon: usize) -> Self {
        let mut c = self.clone();
        match &mut c {
            Self::TimeXer(x) => x.horizon = horizon,
            Self::NBeats(x) => x.horizon = horizon,
            Self::Linear(x) | Self::Naive(x) => x.horizon = horizon,
        }
        c
    }

    pub fn uses_exogenous(&self) -> bool {
        matches!(self, Self::TimeXer(c) if c.use_exogenous)
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }
}

#[derive(Debug, Clone)]
pub enum Model {
    TimeXer(TimeXer),
    NBeats(NBeats),
    Linear(LinearModel),
    Naive(Naive),
}

impl Model {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        Ok(match cfg {
            ModelConfig::TimeXer(c) => Self::TimeXer(TimeXer::new(c.clone(), seed)?),
            ModelConfig::NBeats(c) => Self::NBeats(NBeats::new(c.clone(), seed)?),
            ModelConfig::Linear(c) => Self::Linear(LinearModel::new(*c, seed)?),
            ModelConfig::Naive(c) => Self::Naive(Naive::new(*c)?),
        })
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            Self::TimeXer(m) => ModelConfig::TimeXer(m.config().clone()),
            Self::NBeats(m) => ModelConfig::NBeats(m.config().clone()),
            Self::Linear(m) => ModelConfig::Linear(*m.config()),
            Self::Naive(m) => ModelConfig::Naive(*m.config()),
        }
    }

    pub fn lookback(&self) -> usize {
        self.config().lookback()
    }

    pub fn horizon(&self) -> usize {
        self.config().horizon()
    }

    pub fn uses_exogenous(&self) -> bool {
        matches!(self, Self::TimeXer(m) if m.config().use_exogenous)
    }

    pub fn params(&self) -> &ParamStore {
        match self {
            Self::TimeXer(m) => m.params(),
            Self::NBeats(m) => m.params(),
            Self::Linear(m) => m.params(),
            Self::Naive(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            Self::TimeXer(m) => m.params_mut(),
            Self::NBeats(m) => m.params_mut(),
            Self::Linear(m) => m.params_mut(),
            Self::Naive(m) => m.params_mut(),
        }
    }

    pub fn is_trainable(&self) -> bool {
        !self.params().is_empty()
    }

    pub fn forward(&self, tape: &Tape, batch: &Batch, mode: Mode) -> Result<Var, ModelError> {
        self.forward_with(tape, self.params(), batch, mode)
    }

    /// Forward pass reading parameters from `store` (same layout as
    /// [`Model::params`]).
    pub fn forward_with(&self, tape: &Tape, store: &ParamStore, batch: &Batch, mode: Mode) -> Result<Var, ModelError> {
        match self {
            Self::TimeXer(m) => m.forward_with(tape, store, batch, mode),
            Self::NBeats(m) => m.forward_with(tape, store, batch, mode),
            Self::Linear(m) => m.forward_with(tape, store, batch),
            Self::Naive(m) => m.forward_with(tape, batch),
        }
    }

    /// Eval-mode forecast `[B×H]`.
    pub fn predict(&self, batch: &Batch) -> Result<Tensor, ModelError> {
        let tape = Tape::new();
        let out = self.forward(&tape, batch, Mode::Eval)?;
        Ok(tape.value(out))
    }

    pub fn extract_cross_attention(&self, batch: &Batch, layer: usize) -> Result<Vec<AttentionRecord>, ModelError> {
        match self {
            Self::TimeXer(m) => m.extract_cross_attention(batch, layer),
            _ => Err(ModelError::Contract(
                "cross-attention requires an exogenous TimeXer".into(),
            )),
        }
    }
}

pub const CHECKPOINT_FORMAT: &str = "liqcast-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// JSON container for a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: ModelConfig,
    pub config_hash: String,
    pub params: Vec<NamedTensor>,
    /// Anything the caller wants stored alongside, e.g. input scalers.
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl Checkpoint {
    pub fn from_model(model: &Model, extra: serde_json::Value) -> Self {
        let config = model.config();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            config_hash: config.hash(),
            config,
            params: model
                .params()
                .named_values()
                .map(|(name, t)| NamedTensor {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
            extra,
        }
    }

    /// Rebuilds the model, rejecting format, hash or layout mismatches.
    pub fn into_model(self) -> Result<(Model, serde_json::Value), ModelError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Checkpoint(format!("unknown format `{}`", self.format)));
        }
        let hash = self.config.hash();
        if hash != self.config_hash {
            return Err(ModelError::Checkpoint(format!(
                "config hash mismatch: stored {}, computed {hash}",
                self.config_hash
            )));
        }
        let mut model = Model::new(&self.config, 0)?;
        let store = model.params_mut();
        if store.len() != self.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameters, found {}",
                store.len(),
                self.params.len()
            )));
        }
        for p in self.params {
            let id = store
                .id_of(&p.name)
                .ok_or_else(|| ModelError::Checkpoint(format!("unknown parameter `{}`", p.name)))?;
            if store.value(id).shape() != p.shape.as_slice() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    p.name,
                    p.shape,
                    store.value(id).shape()
                )));
            }
            *store.value_mut(id) = Tensor::new(&p.shape, p.data)?;
        }
        Ok((model, self.extra))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        serde_json::from_str(s).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self, ModelError> {
        let s =
            std::fs::read_to_string(path).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_difference_check, GradCheck};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn desk_configs() -> Vec<ModelConfig> {
        let tx = TimeXerConfig {
            lookback: 12,
            horizon: 3,
            patch_len: 4,
            stride: 4,
            d_model: 4,
            n_layers: 2,
            n_heads: 2,
            d_ff: 6,
            dropout: 0.0,
            use_exogenous: true,
            exog_labels: vec!["a".into(), "b".into(), "c".into()],
        };
        vec![
            ModelConfig::TimeXer(tx.clone()),
            ModelConfig::TimeXer(TimeXerConfig {
                use_exogenous: false,
                exog_labels: vec![],
                ..tx
            }),
            ModelConfig::NBeats(NBeatsConfig {
                lookback: 12,
                horizon: 3,
                n_blocks: 3,
                hidden: 8,
                layers_per_block: 2,
                dropout: 0.0,
            }),
            ModelConfig::Linear(WindowConfig {
                lookback: 12,
                horizon: 3,
            }),
        ]
    }

    fn random_batch(b: usize, l: usize, n_exog: usize, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Batch {
            endog: Tensor::new(&[b, l], (0..b * l).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
            exog: (n_exog > 0).then(|| {
                Tensor::new(
                    &[b, l, n_exog],
                    (0..b * l * n_exog).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
                .unwrap()
            }),
        }
    }

    fn mse_loss(tape: &Tape, out: Var, target: &Tensor) -> Result<Var, TensorError> {
        let diff = tape.sub(out, tape.constant(target.clone()))?;
        Ok(tape.mean(tape.mul(diff, diff)?))
    }

    #[test]
    fn every_model_passes_gradient_check() {
        for (i, cfg) in desk_configs().into_iter().enumerate() {
            let mut model = Model::new(&cfg, 40 + i as u64).unwrap();
            let n_exog = if cfg.uses_exogenous() { 3 } else { 0 };
            let batch = random_batch(2, 12, n_exog, 7);
            let target = random_batch(2, 3, 0, 8).endog;
            let probe = model.clone();
            let report = finite_difference_check(
                model.params_mut(),
                |tape, store| {
                    let out = probe.forward_with(tape, store, &batch, Mode::Eval)?;
                    mse_loss(tape, out, &target)
                },
                &GradCheck {
                    probes: Some(40),
                    seed: i as u64,
                    ..GradCheck::default()
                },
            )
            .unwrap();
            assert!(report.probes.len() >= 10);
            assert!(report.passed(), "{cfg:?}: worst {}", report.worst());
        }
    }

    #[test]
    fn ablation_is_bit_identical() {
        let cfg = desk_configs().remove(1);
        let model = Model::new(&cfg, 3).unwrap();
        let mut a = random_batch(4, 12, 3, 1);
        let mut b = a.clone();
        a.exog = Some(Tensor::full(&[4, 12, 3], 1e6));
        b.exog = None;
        assert_eq!(model.predict(&a).unwrap(), model.predict(&b).unwrap());
    }

    #[test]
    fn checkpoint_round_trip_and_hash_rejection() {
        for cfg in desk_configs() {
            let model = Model::new(&cfg, 9).unwrap();
            let ck = Checkpoint::from_model(&model, serde_json::json!({"note": 1}));
            let json = ck.to_json();
            let (back, extra) = Checkpoint::from_json(&json).unwrap().into_model().unwrap();
            assert_eq!(back.params(), model.params());
            assert_eq!(extra["note"], 1);

            let mut tampered = Checkpoint::from_json(&json).unwrap();
            tampered.config = tampered.config.with_horizon(4);
            assert!(matches!(tampered.into_model(), Err(ModelError::Checkpoint(_))));
        }
        let model = Model::new(&desk_configs()[3], 1).unwrap();
        let mut ck = Checkpoint::from_model(&model, serde_json::Value::Null);
        ck.params[0].shape = vec![3, 12];
        assert!(ck.into_model().is_err());
    }

    #[test]
    fn config_json_is_tagged() {
        let cfg = ModelConfig::Naive(WindowConfig {
            lookback: 3,
            horizon: 2,
        });
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(json, r#"{"kind":"naive","lookback":3,"horizon":2}"#);
        assert_eq!(serde_json::from_str::<ModelConfig>(&json).unwrap(), cfg);
        assert_ne!(cfg.hash(), cfg.with_horizon(3).hash());
    }
}
