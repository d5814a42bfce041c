use rand::{Rng, RngCore};

use super::ModelError;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

pub(crate) const LN_EPS: f64 = 1e-5;

/// Affine map `x·W + b` over the last axis of a 2- or 3-axis input.
#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let w = store.add_uniform(format!("{name}.weight"), &[fan_in, fan_out], fan_in, rng);
        let b = store.add_uniform(format!("{name}.bias"), &[fan_out], fan_in, rng);
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, x: Var) -> Result<Var, ModelError> {
        let shape = tape.shape(x);
        let rows = shape[..shape.len() - 1].iter().product::<usize>();
        let flat = if shape.len() == 2 {
            x
        } else {
            tape.reshape(x, &[rows, self.fan_in])?
        };
        let w = tape.param(store, self.w);
        let b = tape.repeat(tape.param(store, self.b), rows)?;
        let y = tape.add(tape.matmul(flat, w)?, b)?;
        if shape.len() == 2 {
            Ok(y)
        } else {
            let mut out = shape.clone();
            *out.last_mut().expect("non-empty") = self.fan_out;
            Ok(tape.reshape(y, &out)?)
        }
    }

    pub fn zero(&self, store: &mut ParamStore) {
        store.value_mut(self.w).data_mut().fill(0.0);
        store.value_mut(self.b).data_mut().fill(0.0);
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[d])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[d])),
        }
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, x: Var) -> Result<Var, ModelError> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        Ok(tape.layer_norm(x, g, b, LN_EPS)?)
    }
}

/// Multi-head scaled dot-product attention.
#[derive(Debug, Clone)]
pub(crate) struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut R) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.query"), d, d, rng),
            k: Linear::new(store, &format!("{name}.key"), d, d, rng),
            v: Linear::new(store, &format!("{name}.value"), d, d, rng),
            o: Linear::new(store, &format!("{name}.out"), d, d, rng),
            heads,
        }
    }

    /// `query: [B×nq×d]`, `context: [B×nk×d]`. Returns the output and the
    /// attention weights `[(B·heads)×nq×nk]`.
    pub fn forward(&self, tape: &Tape, store: &ParamStore, query: Var, context: Var) -> Result<(Var, Var), ModelError> {
        let d = self.q.fan_in;
        let dh = d / self.heads;
        let q = tape.split_heads(self.q.forward(tape, store, query)?, self.heads)?;
        let k = tape.split_heads(self.k.forward(tape, store, context)?, self.heads)?;
        let v = tape.split_heads(self.v.forward(tape, store, context)?, self.heads)?;
        let scores = tape.scale(tape.bmm(q, tape.transpose(k)?)?, 1.0 / (dh as f64).sqrt());
        let weights = tape.softmax(scores, 2)?;
        let ctx = tape.merge_heads(tape.bmm(weights, v)?, self.heads)?;
        Ok((self.o.forward(tape, store, ctx)?, weights))
    }
}

/// Dropout that is active only when a generator is supplied.
pub(crate) struct DropoutCtx<'a> {
    pub p: f64,
    pub rng: Option<&'a mut dyn RngCore>,
}

impl DropoutCtx<'_> {
    pub fn apply(&mut self, tape: &Tape, x: Var) -> Var {
        match self.rng.as_deref_mut() {
            Some(rng) if self.p > 0.0 => {
                let p = self.p;
                tape.dropout(x, p, || rng.gen::<f64>() >= p)
            }
            _ => x,
        }
    }
}
