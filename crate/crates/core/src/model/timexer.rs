use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Attention, DropoutCtx, LayerNorm, Linear};
use super::{Batch, Mode, ModelError};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Hyperparameters for one TimeXer variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeXerConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub patch_len: usize,
    pub stride: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub use_exogenous: bool,
    /// One label per exogenous variate; its length is the variate count.
    pub exog_labels: Vec<String>,
}

impl TimeXerConfig {
    /// Tuned long-horizon configuration with exogenous variates.
    pub fn tuned_exog(horizon: usize, exog_labels: Vec<String>) -> Self {
        Self {
            lookback: 256,
            horizon,
            patch_len: 96,
            stride: 8,
            d_model: 128,
            n_layers: 16,
            n_heads: 8,
            d_ff: 512,
            dropout: 0.30,
            use_exogenous: true,
            exog_labels,
        }
    }

    /// Endogenous-only counterpart of [`TimeXerConfig::tuned_exog`].
    pub fn tuned_endog(horizon: usize) -> Self {
        Self {
            dropout: 0.25,
            use_exogenous: false,
            exog_labels: Vec::new(),
            ..Self::tuned_exog(horizon, Vec::new())
        }
    }

    pub fn n_exog(&self) -> usize {
        if self.use_exogenous {
            self.exog_labels.len()
        } else {
            0
        }
    }

    pub fn n_patches(&self) -> usize {
        n_patches(self.lookback, self.patch_len, self.stride)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.patch_len == 0 || self.stride == 0 || self.horizon == 0 {
            return fail("patch_len, stride and horizon must be positive".into());
        }
        if self.lookback < self.patch_len {
            return fail(format!(
                "lookback {} is shorter than patch_len {}",
                self.lookback, self.patch_len
            ));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.n_layers == 0 || self.d_ff == 0 {
            return fail("n_layers and d_ff must be positive".into());
        }
        if self.use_exogenous && self.exog_labels.is_empty() {
            return fail("use_exogenous requires at least one exogenous variate".into());
        }
        Ok(())
    }
}

/// `floor((L - patch_len) / stride) + 1`
pub fn n_patches(lookback: usize, patch_len: usize, stride: usize) -> usize {
    (lookback - patch_len) / stride + 1
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    self_attn: Attention,
    norm1: LayerNorm,
    cross: Option<(Attention, LayerNorm)>,
    ff1: Linear,
    ff2: Linear,
    norm3: LayerNorm,
}

/// Intermediate token state of the encoder.
#[derive(Debug, Clone, Copy)]
pub struct TokenSet {
    /// `[B×(n_patches+1)×d]`, the global token last.
    pub tokens: Var,
    /// `[B×n_exog×d]`, absent for the endogenous-only variant.
    pub variates: Option<Var>,
}

/// Cross-attention weights for one layer and one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub layer: usize,
    /// `[n_heads×n_queries×n_keys]`
    pub weights: Tensor,
    pub key_labels: Vec<String>,
}

impl AttentionRecord {
    /// Mean over heads (and the single global-token query) per key.
    pub fn head_mean(&self) -> Vec<f64> {
        let s = self.weights.shape();
        let (h, q, k) = (s[0], s[1], s[2]);
        (0..k)
            .map(|j| {
                let mut total = 0.0;
                for hi in 0..h {
                    for qi in 0..q {
                        total += self.weights.at3(hi, qi, j);
                    }
                }
                total / (h * q) as f64
            })
            .collect()
    }

    pub fn labeled_mean(&self) -> Vec<(String, f64)> {
        self.key_labels.iter().cloned().zip(self.head_mean()).collect()
    }
}

/// Patch tokens, a learned global token and variate tokens feeding a
/// Transformer encoder; the global token queries the variates.
#[derive(Debug, Clone)]
pub struct TimeXer {
    cfg: TimeXerConfig,
    store: ParamStore,
    patch_proj: Linear,
    pos: ParamId,
    global: ParamId,
    variate_proj: Option<Linear>,
    layers: Vec<EncoderLayer>,
    final_norm: LayerNorm,
    head: Linear,
}

impl TimeXer {
    pub fn new(cfg: TimeXerConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = cfg.d_model;
        let np = cfg.n_patches();
        let patch_proj = Linear::new(&mut store, "patch_embed", cfg.patch_len, d, &mut rng);
        let pos = store.add_uniform("patch_embed.position", &[np, d], d, &mut rng);
        let global = store.add_uniform("global_token", &[1, d], d, &mut rng);
        let variate_proj = cfg
            .use_exogenous
            .then(|| Linear::new(&mut store, "variate_embed", cfg.lookback, d, &mut rng));
        let layers = (0..cfg.n_layers)
            .map(|i| {
                let p = format!("encoder.{i}");
                EncoderLayer {
                    self_attn: Attention::new(&mut store, &format!("{p}.self_attn"), d, cfg.n_heads, &mut rng),
                    norm1: LayerNorm::new(&mut store, &format!("{p}.norm1"), d),
                    cross: cfg.use_exogenous.then(|| {
                        (
                            Attention::new(&mut store, &format!("{p}.cross_attn"), d, cfg.n_heads, &mut rng),
                            LayerNorm::new(&mut store, &format!("{p}.norm2"), d),
                        )
                    }),
                    ff1: Linear::new(&mut store, &format!("{p}.ff1"), d, cfg.d_ff, &mut rng),
                    ff2: Linear::new(&mut store, &format!("{p}.ff2"), cfg.d_ff, d, &mut rng),
                    norm3: LayerNorm::new(&mut store, &format!("{p}.norm3"), d),
                }
            })
            .collect();
        let final_norm = LayerNorm::new(&mut store, "encoder.norm", d);
        let head = Linear::new(&mut store, "head", (np + 1) * d, cfg.horizon, &mut rng);
        Ok(Self {
            cfg,
            store,
            patch_proj,
            pos,
            global,
            variate_proj,
            layers,
            final_norm,
            head,
        })
    }

    pub fn config(&self) -> &TimeXerConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Zeroes the patch projection (weights and bias).
    pub fn zero_patch_projection(&mut self) {
        self.patch_proj.zero(&mut self.store);
    }

    /// Zeroes the variate projection weights, keeping its bias.
    pub fn zero_variate_weights(&mut self) {
        if let Some(v) = &self.variate_proj {
            self.store.value_mut(v.w).data_mut().fill(0.0);
        }
    }

    fn check_batch(&self, batch: &Batch) -> Result<usize, ModelError> {
        let s = batch.endog.shape();
        if s.len() != 2 || s[1] != self.cfg.lookback {
            return Err(ModelError::Contract(format!(
                "endogenous batch must be [B×{}], got {s:?}",
                self.cfg.lookback
            )));
        }
        if self.cfg.use_exogenous {
            let Some(exog) = &batch.exog else {
                return Err(ModelError::Contract("exogenous window required by this model".into()));
            };
            let e = exog.shape();
            if e != [s[0], self.cfg.lookback, self.cfg.n_exog()] {
                return Err(ModelError::Contract(format!(
                    "exogenous batch must be [{}×{}×{}], got {e:?}",
                    s[0],
                    self.cfg.lookback,
                    self.cfg.n_exog()
                )));
            }
        }
        Ok(s[0])
    }

    /// Patch tokens `[B×n_patches×d]`.
    pub fn patch_embed(&self, tape: &Tape, store: &ParamStore, batch: &Batch) -> Result<Var, ModelError> {
        let b = self.check_batch(batch)?;
        let (l, pl, st, np, d) = (
            self.cfg.lookback,
            self.cfg.patch_len,
            self.cfg.stride,
            self.cfg.n_patches(),
            self.cfg.d_model,
        );
        let x = batch.endog.data();
        let mut patches = Vec::with_capacity(b * np * pl);
        for bi in 0..b {
            for p in 0..np {
                let start = bi * l + p * st;
                patches.extend_from_slice(&x[start..start + pl]);
            }
        }
        let patches = tape.constant(Tensor::new(&[b * np, pl], patches)?);
        let emb = self.patch_proj.forward(tape, store, patches)?;
        let emb = tape.reshape(emb, &[b, np, d])?;
        let pos = tape.repeat(tape.param(store, self.pos), b)?;
        Ok(tape.add(emb, pos)?)
    }

    /// Variate tokens `[B×n_exog×d]`: one token per exogenous series window.
    pub fn embed_exogenous(&self, tape: &Tape, store: &ParamStore, batch: &Batch) -> Result<Option<Var>, ModelError> {
        let Some(proj) = &self.variate_proj else {
            return Ok(None);
        };
        let b = self.check_batch(batch)?;
        let exog = batch.exog.as_ref().expect("checked above");
        let (l, n) = (self.cfg.lookback, self.cfg.n_exog());
        let mut series = vec![0.0; b * n * l];
        for bi in 0..b {
            for t in 0..l {
                for v in 0..n {
                    series[(bi * n + v) * l + t] = exog.at3(bi, t, v);
                }
            }
        }
        let series = tape.constant(Tensor::new(&[b, n, l], series)?);
        Ok(Some(proj.forward(tape, store, series)?))
    }

    fn initial_tokens(&self, tape: &Tape, store: &ParamStore, batch: &Batch) -> Result<TokenSet, ModelError> {
        let b = self.check_batch(batch)?;
        let patches = self.patch_embed(tape, store, batch)?;
        let global = tape.repeat(tape.param(store, self.global), b)?; // [B×1×d]
        Ok(TokenSet {
            tokens: tape.concat(&[patches, global], 1)?,
            variates: self.embed_exogenous(tape, store, batch)?,
        })
    }

    fn encoder_layer(
        &self,
        tape: &Tape,
        store: &ParamStore,
        index: usize,
        tokens: TokenSet,
        drop: &mut DropoutCtx<'_>,
        capture: Option<&mut Vec<Tensor>>,
    ) -> Result<TokenSet, ModelError> {
        let layer = &self.layers[index];
        let s = store;
        let np = self.cfg.n_patches();
        let x = tokens.tokens;
        let (attn, _) = layer.self_attn.forward(tape, s, x, x)?;
        let x = layer.norm1.forward(tape, s, tape.add(x, drop.apply(tape, attn))?)?;

        let x = match (&layer.cross, tokens.variates) {
            (Some((cross, norm2)), Some(variates)) => {
                let patches = tape.slice(x, 1, 0, np)?;
                let glb = tape.slice(x, 1, np, 1)?;
                let (glb_attn, weights) = cross.forward(tape, s, glb, variates)?;
                if let Some(sink) = capture {
                    sink.push(tape.value(weights));
                }
                let glb = norm2.forward(tape, s, tape.add(glb, drop.apply(tape, glb_attn))?)?;
                tape.concat(&[patches, glb], 1)?
            }
            _ => x,
        };

        let h = drop.apply(tape, tape.gelu(layer.ff1.forward(tape, s, x)?));
        let y = drop.apply(tape, layer.ff2.forward(tape, s, h)?);
        let x = layer.norm3.forward(tape, s, tape.add(x, y)?)?;
        Ok(TokenSet {
            tokens: x,
            variates: tokens.variates,
        })
    }

    fn forward_inner(
        &self,
        tape: &Tape,
        store: &ParamStore,
        batch: &Batch,
        mode: Mode,
        mut capture: Option<&mut Vec<Tensor>>,
    ) -> Result<Var, ModelError> {
        let b = self.check_batch(batch)?;
        let mut rng = match mode {
            Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Mode::Eval => None,
        };
        let mut drop = DropoutCtx {
            p: self.cfg.dropout,
            rng: rng.as_mut().map(|r| r as &mut dyn rand::RngCore),
        };
        let mut tokens = self.initial_tokens(tape, store, batch)?;
        if let Some(v) = tokens.variates {
            tokens.variates = Some(drop.apply(tape, v));
        }
        for i in 0..self.layers.len() {
            tokens = self.encoder_layer(tape, store, i, tokens, &mut drop, capture.as_deref_mut())?;
        }
        let x = self.final_norm.forward(tape, store, tokens.tokens)?;
        let flat = tape.reshape(x, &[b, (self.cfg.n_patches() + 1) * self.cfg.d_model])?;
        let flat = drop.apply(tape, flat);
        self.head.forward(tape, store, flat)
    }

    /// Direct multi-step output `[B×H]`.
    pub fn forward(&self, tape: &Tape, batch: &Batch, mode: Mode) -> Result<Var, ModelError> {
        self.forward_inner(tape, &self.store, batch, mode, None)
    }

    /// Like [`TimeXer::forward`] but reading parameters from `store`, which
    /// must have been created by this model.
    pub fn forward_with(&self, tape: &Tape, store: &ParamStore, batch: &Batch, mode: Mode) -> Result<Var, ModelError> {
        self.forward_inner(tape, store, batch, mode, None)
    }

    /// Runs an eval-mode forward pass and returns the cross-attention
    /// weights of `layer` for each sample in the batch.
    pub fn extract_cross_attention(&self, batch: &Batch, layer: usize) -> Result<Vec<AttentionRecord>, ModelError> {
        if !self.cfg.use_exogenous {
            return Err(ModelError::Contract(
                "cross-attention requested from an endogenous-only model".into(),
            ));
        }
        if layer >= self.cfg.n_layers {
            return Err(ModelError::Contract(format!(
                "layer {layer} out of range for {} layers",
                self.cfg.n_layers
            )));
        }
        let b = self.check_batch(batch)?;
        let tape = Tape::new();
        let mut sink = Vec::new();
        self.forward_inner(&tape, &self.store, batch, Mode::Eval, Some(&mut sink))?;
        let w = &sink[layer]; // [(B·h)×1×n_exog]
        let (h, k) = (self.cfg.n_heads, self.cfg.n_exog());
        let per = h * k;
        (0..b)
            .map(|bi| {
                Ok(AttentionRecord {
                    layer,
                    weights: Tensor::new(&[h, 1, k], w.data()[bi * per..(bi + 1) * per].to_vec())?,
                    key_labels: self.cfg.exog_labels.clone(),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn tiny(use_exogenous: bool, n_exog: usize) -> TimeXerConfig {
        TimeXerConfig {
            lookback: 8,
            horizon: 3,
            patch_len: 4,
            stride: 4,
            d_model: 4,
            n_layers: 1,
            n_heads: 2,
            d_ff: 8,
            dropout: 0.0,
            use_exogenous,
            exog_labels: (0..n_exog).map(|i| format!("x{i}")).collect(),
        }
    }

    fn random_batch(b: usize, cfg: &TimeXerConfig, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let endog = Tensor::new(
            &[b, cfg.lookback],
            (0..b * cfg.lookback).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let n = cfg.exog_labels.len();
        let exog = (n > 0).then(|| {
            Tensor::new(
                &[b, cfg.lookback, n],
                (0..b * cfg.lookback * n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap()
        });
        Batch { endog, exog }
    }

    #[test]
    fn tuned_defaults() {
        let cfg = TimeXerConfig::tuned_exog(70, vec!["g".into()]);
        assert_eq!(cfg.n_patches(), 21);
        assert_eq!(cfg.dropout, 0.30);
        assert_eq!(TimeXerConfig::tuned_endog(70).dropout, 0.25);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn n_patches_matches_enumeration() {
        for l in 1..40 {
            for pl in 1..=l {
                for st in 1..12 {
                    let count = (0..l).step_by(st).filter(|s| s + pl <= l).count();
                    assert_eq!(n_patches(l, pl, st), count, "L={l} p={pl} s={st}");
                }
            }
        }
    }

    #[test]
    fn config_errors() {
        let mut c = tiny(false, 0);
        c.patch_len = 9;
        assert!(matches!(c.validate(), Err(ModelError::Config(_))));
        let mut c = tiny(false, 0);
        c.n_heads = 3;
        assert!(c.validate().is_err());
        let mut c = tiny(true, 0);
        c.use_exogenous = true;
        assert!(c.validate().is_err());
        let mut c = tiny(false, 0);
        c.dropout = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn single_patch_is_full_window_projection() {
        let cfg = TimeXerConfig {
            lookback: 4,
            patch_len: 4,
            stride: 1,
            ..tiny(false, 0)
        };
        let m = TimeXer::new(cfg, 1).unwrap();
        let batch = Batch {
            endog: Tensor::new(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            exog: None,
        };
        let tape = Tape::new();
        let tokens = tape.value(m.patch_embed(&tape, &m.store, &batch).unwrap());
        assert_eq!(tokens.shape(), &[1, 1, 4]);
        let w = m.store.value(m.patch_proj.w);
        let bias = m.store.value(m.patch_proj.b);
        let pos = m.store.value(m.pos);
        for j in 0..4 {
            let expected: f64 =
                (0..4).map(|i| (i + 1) as f64 * w.at2(i, j)).sum::<f64>() + bias.data()[j] + pos.data()[j];
            assert_abs_diff_eq!(tokens.data()[j], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_window_gives_positional_embedding() {
        let mut m = TimeXer::new(tiny(false, 0), 2).unwrap();
        m.zero_patch_projection();
        let batch = Batch {
            endog: Tensor::zeros(&[2, 8]),
            exog: None,
        };
        let tape = Tape::new();
        let tokens = tape.value(m.patch_embed(&tape, &m.store, &batch).unwrap());
        let pos = m.store.value(m.pos).data().to_vec();
        assert_eq!(&tokens.data()[..8], &pos[..]);
        assert_eq!(&tokens.data()[8..], &pos[..]);
    }

    #[test]
    fn variate_tokens_one_per_series() {
        let cfg = tiny(true, 16);
        let m = TimeXer::new(cfg.clone(), 3).unwrap();
        let batch = random_batch(2, &cfg, 4);
        let tape = Tape::new();
        let v = m.embed_exogenous(&tape, &m.store, &batch).unwrap().unwrap();
        assert_eq!(tape.shape(v), vec![2, 16, 4]);

        let zero = Batch {
            endog: batch.endog.clone(),
            exog: Some(Tensor::zeros(&[2, 8, 16])),
        };
        let tape = Tape::new();
        let v = tape.value(m.embed_exogenous(&tape, &m.store, &zero).unwrap().unwrap());
        let bias = m.store.value(m.variate_proj.as_ref().unwrap().b).data().to_vec();
        for chunk in v.data().chunks(4) {
            assert_eq!(chunk, &bias[..]);
        }
    }

    #[test]
    fn variate_permutation_permutes_tokens() {
        let cfg = tiny(true, 3);
        let m = TimeXer::new(cfg.clone(), 5).unwrap();
        let batch = random_batch(1, &cfg, 6);
        let ex = batch.exog.as_ref().unwrap();
        let perm = [2usize, 0, 1];
        let mut permuted = vec![0.0; ex.numel()];
        for t in 0..8 {
            for (new, &old) in perm.iter().enumerate() {
                permuted[t * 3 + new] = ex.at3(0, t, old);
            }
        }
        let pb = Batch {
            endog: batch.endog.clone(),
            exog: Some(Tensor::new(&[1, 8, 3], permuted).unwrap()),
        };
        let tape = Tape::new();
        let a = tape.value(m.embed_exogenous(&tape, &m.store, &batch).unwrap().unwrap());
        let b = tape.value(m.embed_exogenous(&tape, &m.store, &pb).unwrap().unwrap());
        for (new, &old) in perm.iter().enumerate() {
            assert_eq!(&b.data()[new * 4..new * 4 + 4], &a.data()[old * 4..old * 4 + 4]);
        }
    }

    #[test]
    fn identical_variates_give_value_projection() {
        // softmax over identical keys is uniform, so the cross-attention
        // output is the value projection of that one token
        let cfg = tiny(true, 4);
        let m = TimeXer::new(cfg.clone(), 7).unwrap();
        let layer = &m.layers[0];
        let (cross, _) = layer.cross.as_ref().unwrap();
        let tape = Tape::new();
        let token: Vec<f64> = vec![0.3, -0.7, 1.1, 0.2];
        let variates = tape.constant(Tensor::new(&[1, 4, 4], token.repeat(4)).unwrap());
        let query = tape.constant(Tensor::new(&[1, 1, 4], vec![0.5, 0.1, -0.4, 0.9]).unwrap());
        let (out, weights) = cross.forward(&tape, &m.store, query, variates).unwrap();
        for w in tape.value(weights).data() {
            assert_abs_diff_eq!(*w, 0.25, epsilon = 1e-15);
        }
        let single = tape.constant(Tensor::new(&[1, 1, 4], token).unwrap());
        let v = cross.v.forward(&tape, &m.store, single).unwrap();
        let expected = cross.o.forward(&tape, &m.store, v).unwrap();
        let (a, b) = (tape.value(out), tape.value(expected));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-12);
        }
    }

    #[test]
    fn endogenous_only_ignores_exogenous_input() {
        let cfg = tiny(false, 0);
        let m = TimeXer::new(cfg.clone(), 8).unwrap();
        let mut b1 = random_batch(2, &cfg, 9);
        b1.exog = Some(Tensor::full(&[2, 8, 3], 5.0));
        let mut b2 = b1.clone();
        b2.exog = Some(Tensor::full(&[2, 8, 3], -123.0));
        let f = |b: &Batch| {
            let tape = Tape::new();
            let out = m.forward(&tape, b, Mode::Eval).unwrap();
            tape.value(out)
        };
        assert_eq!(f(&b1), f(&b2));
        assert!(m.extract_cross_attention(&b1, 0).is_err());
    }

    #[test]
    fn missing_exogenous_is_contract_error() {
        let cfg = tiny(true, 2);
        let m = TimeXer::new(cfg.clone(), 1).unwrap();
        let mut b = random_batch(1, &cfg, 1);
        b.exog = None;
        let tape = Tape::new();
        assert!(matches!(m.forward(&tape, &b, Mode::Eval), Err(ModelError::Contract(_))));
    }

    #[test]
    fn attention_rows_are_distributions() {
        let cfg = TimeXerConfig {
            n_layers: 2,
            ..tiny(true, 5)
        };
        let m = TimeXer::new(cfg.clone(), 11).unwrap();
        let batch = random_batch(3, &cfg, 12);
        for layer in 0..2 {
            let recs = m.extract_cross_attention(&batch, layer).unwrap();
            assert_eq!(recs.len(), 3);
            for r in recs {
                for row in r.weights.data().chunks(5) {
                    assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
                    assert!(row.iter().all(|w| (0.0..=1.0).contains(w)));
                }
                assert_abs_diff_eq!(r.head_mean().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            }
        }
        assert!(m.extract_cross_attention(&batch, 2).is_err());

        let one = tiny(true, 1);
        let m1 = TimeXer::new(one.clone(), 13).unwrap();
        let rec = &m1.extract_cross_attention(&random_batch(1, &one, 2), 0).unwrap()[0];
        assert_eq!(rec.head_mean(), vec![1.0]);
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let cfg = TimeXerConfig {
            dropout: 0.3,
            ..tiny(true, 2)
        };
        let m = TimeXer::new(cfg.clone(), 14).unwrap();
        let batch = random_batch(2, &cfg, 15);
        let run = |mode| {
            let tape = Tape::new();
            let out = m.forward(&tape, &batch, mode).unwrap();
            tape.value(out)
        };
        assert_eq!(run(Mode::Eval), run(Mode::Eval));
        assert_eq!(run(Mode::Train { seed: 3 }), run(Mode::Train { seed: 3 }));
        assert_ne!(run(Mode::Eval), run(Mode::Train { seed: 3 }));
        let h1 = TimeXerConfig { horizon: 1, ..cfg };
        let m1 = TimeXer::new(h1, 1).unwrap();
        let tape = Tape::new();
        assert_eq!(tape.shape(m1.forward(&tape, &batch, Mode::Eval).unwrap()), vec![2, 1]);
    }

    /// Step-by-step scalar recomputation of one encoder layer on two patches.
    #[test]
    fn single_layer_matches_scalar_reference() {
        let cfg = TimeXerConfig {
            lookback: 4,
            horizon: 2,
            patch_len: 2,
            stride: 2,
            d_model: 2,
            n_layers: 1,
            n_heads: 1,
            d_ff: 2,
            dropout: 0.0,
            use_exogenous: true,
            exog_labels: vec!["a".into(), "b".into()],
        };
        let mut m = TimeXer::new(cfg.clone(), 21).unwrap();
        // identity projections, zero biases everywhere
        let ids: Vec<ParamId> = m.store.ids().collect();
        for id in ids {
            let name = m.store.name(id).to_string();
            let v = m.store.value_mut(id);
            if name.ends_with(".bias") || name.ends_with(".beta") {
                v.data_mut().fill(0.0);
            } else if name.ends_with(".weight") && v.shape() == [2, 2] {
                v.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
            }
        }
        m.store.value_mut(m.pos).data_mut().fill(0.0);
        m.store.value_mut(m.global).data_mut().copy_from_slice(&[0.5, -0.5]);
        let vw = m.variate_proj.as_ref().unwrap().w;
        m.store
            .value_mut(vw)
            .data_mut()
            .copy_from_slice(&[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, -1.0, 0.0]);

        let batch = Batch {
            endog: Tensor::new(&[1, 4], vec![1.0, 3.0, -2.0, 0.5]).unwrap(),
            exog: Some(Tensor::new(&[1, 4, 2], vec![1.0, 0.0, 0.5, 2.0, -1.0, 1.0, 0.0, 0.0]).unwrap()),
        };
        let tape = Tape::new();
        let t0 = m.initial_tokens(&tape, &m.store, &batch).unwrap();
        let mut drop = DropoutCtx { p: 0.0, rng: None };
        let out = tape.value(m.encoder_layer(&tape, &m.store, 0, t0, &mut drop, None).unwrap().tokens);

        // scalar reference
        let ln = |v: [f64; 2]| {
            let mean = (v[0] + v[1]) / 2.0;
            let var = ((v[0] - mean).powi(2) + (v[1] - mean).powi(2)) / 2.0;
            let s = (var + 1e-5).sqrt();
            [(v[0] - mean) / s, (v[1] - mean) / s]
        };
        let attend = |q: [f64; 2], keys: &[[f64; 2]]| {
            let scores: Vec<f64> = keys.iter().map(|k| (q[0] * k[0] + q[1] * k[1]) / 2f64.sqrt()).collect();
            let mx = scores.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            let mut o = [0.0; 2];
            for (w, k) in e.iter().zip(keys) {
                o[0] += w / z * k[0];
                o[1] += w / z * k[1];
            }
            o
        };
        let tokens = [[1.0, 3.0], [-2.0, 0.5], [0.5, -0.5]];
        // variate tokens: series a = [1,.5,-1,0], b = [0,2,1,0] through W (4×2)
        let w = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 0.0]];
        let series = [[1.0, 0.5, -1.0, 0.0], [0.0, 2.0, 1.0, 0.0]];
        let variates: Vec<[f64; 2]> = series
            .iter()
            .map(|s| {
                let mut o = [0.0; 2];
                for t in 0..4 {
                    o[0] += s[t] * w[t][0];
                    o[1] += s[t] * w[t][1];
                }
                o
            })
            .collect();
        let mut x = [[0.0; 2]; 3];
        for i in 0..3 {
            let a = attend(tokens[i], &tokens);
            x[i] = ln([tokens[i][0] + a[0], tokens[i][1] + a[1]]);
        }
        let c = attend(x[2], &variates);
        x[2] = ln([x[2][0] + c[0], x[2][1] + c[1]]);
        let gelu = |v: f64| 0.5 * v * (1.0 + (0.797_884_560_802_865_4 * (v + 0.044715 * v * v * v)).tanh());
        for i in 0..3 {
            let h = [gelu(x[i][0]), gelu(x[i][1])];
            x[i] = ln([x[i][0] + h[0], x[i][1] + h[1]]);
        }
        let flat: Vec<f64> = x.iter().flatten().copied().collect();
        for (a, e) in out.data().iter().zip(&flat) {
            assert_abs_diff_eq!(*a, *e, epsilon = 1e-12);
        }
    }
}
