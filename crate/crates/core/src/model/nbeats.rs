use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{DropoutCtx, Linear};
use super::{Batch, Mode, ModelError};
use crate::tensor::{ParamStore, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBeatsConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub n_blocks: usize,
    pub hidden: usize,
    pub layers_per_block: usize,
    pub dropout: f64,
}

impl NBeatsConfig {
    /// Three generic blocks of width 512, no dropout.
    pub fn tuned(lookback: usize, horizon: usize) -> Self {
        Self {
            lookback,
            horizon,
            n_blocks: 3,
            hidden: 512,
            layers_per_block: 4,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.lookback == 0 || self.horizon == 0 || self.hidden == 0 {
            return Err(ModelError::Config(
                "lookback, horizon and hidden must be positive".into(),
            ));
        }
        if self.n_blocks == 0 || self.layers_per_block == 0 {
            return Err(ModelError::Config("need at least one block with one layer".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Block {
    stack: Vec<Linear>,
    backcast: Linear,
    forecast: Linear,
}

/// Generic N-BEATS: fully connected blocks with backcast residual chaining.
#[derive(Debug, Clone)]
pub struct NBeats {
    cfg: NBeatsConfig,
    store: ParamStore,
    blocks: Vec<Block>,
}

impl NBeats {
    pub fn new(cfg: NBeatsConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let blocks = (0..cfg.n_blocks)
            .map(|b| {
                let stack = (0..cfg.layers_per_block)
                    .map(|i| {
                        let fan_in = if i == 0 { cfg.lookback } else { cfg.hidden };
                        Linear::new(&mut store, &format!("block.{b}.fc{i}"), fan_in, cfg.hidden, &mut rng)
                    })
                    .collect();
                Block {
                    stack,
                    backcast: Linear::new(
                        &mut store,
                        &format!("block.{b}.backcast"),
                        cfg.hidden,
                        cfg.lookback,
                        &mut rng,
                    ),
                    forecast: Linear::new(
                        &mut store,
                        &format!("block.{b}.forecast"),
                        cfg.hidden,
                        cfg.horizon,
                        &mut rng,
                    ),
                }
            })
            .collect();
        Ok(Self { cfg, store, blocks })
    }

    pub fn config(&self) -> &NBeatsConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn zero_heads(&mut self) {
        for b in &self.blocks {
            b.backcast.zero(&mut self.store);
            b.forecast.zero(&mut self.store);
        }
    }

    /// Returns the summed forecast `[B×H]` and the final residual `[B×L]`.
    pub fn forward_parts(
        &self,
        tape: &Tape,
        store: &ParamStore,
        batch: &Batch,
        mode: Mode,
    ) -> Result<(Var, Var), ModelError> {
        let s = batch.endog.shape();
        if s.len() != 2 || s[1] != self.cfg.lookback {
            return Err(ModelError::Contract(format!(
                "endogenous batch must be [B×{}], got {s:?}",
                self.cfg.lookback
            )));
        }
        let mut rng = match mode {
            Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Mode::Eval => None,
        };
        let mut drop = DropoutCtx {
            p: self.cfg.dropout,
            rng: rng.as_mut().map(|r| r as &mut dyn rand::RngCore),
        };
        let mut residual = tape.constant(batch.endog.clone());
        let mut total: Option<Var> = None;
        for block in &self.blocks {
            let mut h = residual;
            for fc in &block.stack {
                h = drop.apply(tape, tape.relu(fc.forward(tape, store, h)?));
            }
            let back = block.backcast.forward(tape, store, h)?;
            let fore = block.forecast.forward(tape, store, h)?;
            residual = tape.sub(residual, back)?;
            total = Some(match total {
                Some(t) => tape.add(t, fore)?,
                None => fore,
            });
        }
        Ok((total.expect("at least one block"), residual))
    }

    pub fn forward(&self, tape: &Tape, batch: &Batch, mode: Mode) -> Result<Var, ModelError> {
        self.forward_with(tape, &self.store, batch, mode)
    }

    pub fn forward_with(&self, tape: &Tape, store: &ParamStore, batch: &Batch, mode: Mode) -> Result<Var, ModelError> {
        Ok(self.forward_parts(tape, store, batch, mode)?.0)
    }
}
