use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::Linear;
use super::{Batch, ModelError};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub lookback: usize,
    pub horizon: usize,
}

impl WindowConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.lookback == 0 || self.horizon == 0 {
            return Err(ModelError::Config("lookback and horizon must be positive".into()));
        }
        Ok(())
    }
}

fn check_window(batch: &Batch, lookback: usize) -> Result<usize, ModelError> {
    let s = batch.endog.shape();
    if s.len() != 2 || s[1] != lookback {
        return Err(ModelError::Contract(format!(
            "endogenous batch must be [B×{lookback}], got {s:?}"
        )));
    }
    Ok(s[0])
}

/// A single affine map from the lookback window to the horizon.
#[derive(Debug, Clone)]
pub struct LinearModel {
    cfg: WindowConfig,
    store: ParamStore,
    map: Linear,
}

impl LinearModel {
    pub fn new(cfg: WindowConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let map = Linear::new(&mut store, "linear", cfg.lookback, cfg.horizon, &mut rng);
        Ok(Self { cfg, store, map })
    }

    pub fn config(&self) -> &WindowConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// `[L×H]`
    pub fn weights(&self) -> &Tensor {
        self.store.value(self.map.w)
    }

    pub fn bias(&self) -> &Tensor {
        self.store.value(self.map.b)
    }

    pub fn set_weights(&mut self, w: Tensor, b: Tensor) -> Result<(), ModelError> {
        if w.shape() != self.weights().shape() || b.shape() != self.bias().shape() {
            return Err(ModelError::Contract(format!(
                "expected weights {:?} and bias {:?}",
                self.weights().shape(),
                self.bias().shape()
            )));
        }
        *self.store.value_mut(self.map.w) = w;
        *self.store.value_mut(self.map.b) = b;
        Ok(())
    }

    pub fn forward_with(&self, tape: &Tape, store: &ParamStore, batch: &Batch) -> Result<Var, ModelError> {
        check_window(batch, self.cfg.lookback)?;
        self.map.forward(tape, store, tape.constant(batch.endog.clone()))
    }
}

/// Repeats the last observed value over the horizon.
#[derive(Debug, Clone)]
pub struct Naive {
    cfg: WindowConfig,
    store: ParamStore,
}

impl Naive {
    pub fn new(cfg: WindowConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            store: ParamStore::new(),
        })
    }

    pub fn config(&self) -> &WindowConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn predict(&self, batch: &Batch) -> Result<Tensor, ModelError> {
        let b = check_window(batch, self.cfg.lookback)?;
        let l = self.cfg.lookback;
        let h = self.cfg.horizon;
        let x = batch.endog.data();
        let data = (0..b).flat_map(|i| std::iter::repeat_n(x[i * l + l - 1], h)).collect();
        Ok(Tensor::new(&[b, h], data)?)
    }

    pub fn forward_with(&self, tape: &Tape, batch: &Batch) -> Result<Var, ModelError> {
        Ok(tape.constant(self.predict(batch)?))
    }
}
