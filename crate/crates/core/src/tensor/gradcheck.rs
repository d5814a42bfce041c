use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ParamId, ParamStore, Tape, TensorError, Var};

/// Settings for a central-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub step: f64,
    pub tol: f64,
    /// Check this many randomly chosen scalar entries; `None` checks all of them.
    pub probes: Option<usize>,
    pub seed: u64,
    /// Denominator floor for the relative error.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-3,
            probes: None,
            seed: 0,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeResult {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub probes: Vec<ProbeResult>,
    /// Largest relative error seen for each parameter that was probed.
    pub max_rel_error: Vec<(String, f64)>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.probes.iter().map(|p| p.rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst() < self.tol
    }
}

fn eval_loss<F>(store: &ParamStore, f: &F) -> Result<f64, TensorError>
where
    F: Fn(&Tape, &ParamStore) -> Result<Var, TensorError>,
{
    let tape = Tape::new();
    let root = f(&tape, store)?;
    let v = tape.with_value(root, |t| t.item());
    if !v.is_finite() {
        return Err(TensorError::NonFinite(format!("loss evaluated to {v}")));
    }
    Ok(v)
}

/// Compares tape gradients of the scalar returned by `f` against central
/// differences on the entries of `store`.
///
/// `f` must be deterministic given the parameter values. The store is
/// restored to its original values before returning.
pub fn finite_difference_check<F>(store: &mut ParamStore, f: F, cfg: &GradCheck) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&Tape, &ParamStore) -> Result<Var, TensorError>,
{
    let mut analytic_store = store.clone();
    analytic_store.zero_grad();
    {
        let tape = Tape::new();
        let root = f(&tape, &analytic_store)?;
        let v = tape.with_value(root, |t| t.item());
        if !v.is_finite() {
            return Err(TensorError::NonFinite(format!("loss evaluated to {v}")));
        }
        tape.backward_into(root, &mut analytic_store)?;
    }

    let mut entries: Vec<(ParamId, usize)> = store
        .ids()
        .flat_map(|id| (0..store.value(id).numel()).map(move |i| (id, i)))
        .collect();
    if let Some(n) = cfg.probes {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        entries.shuffle(&mut rng);
        entries.truncate(n);
        entries.sort();
    }

    let mut probes = Vec::with_capacity(entries.len());
    for (id, i) in entries {
        let original = store.value(id).data()[i];
        store.value_mut(id).data_mut()[i] = original + cfg.step;
        let plus = eval_loss(store, &f);
        store.value_mut(id).data_mut()[i] = original - cfg.step;
        let minus = eval_loss(store, &f);
        store.value_mut(id).data_mut()[i] = original;
        let numeric = (plus? - minus?) / (2.0 * cfg.step);
        let analytic = analytic_store.grad(id).data()[i];
        let denom = analytic.abs().max(numeric.abs()).max(cfg.floor);
        probes.push(ProbeResult {
            param: store.name(id).to_string(),
            index: i,
            analytic,
            numeric,
            rel_error: (analytic - numeric).abs() / denom,
        });
    }

    let mut max_rel_error: Vec<(String, f64)> = Vec::new();
    for p in &probes {
        match max_rel_error.iter_mut().find(|(n, _)| *n == p.param) {
            Some((_, e)) => *e = e.max(p.rel_error),
            None => max_rel_error.push((p.param.clone(), p.rel_error)),
        }
    }
    Ok(GradCheckReport {
        probes,
        max_rel_error,
        tol: cfg.tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::Rng;

    fn check_all(
        store: &mut ParamStore,
        f: impl Fn(&Tape, &ParamStore) -> Result<Var, TensorError>,
    ) -> GradCheckReport {
        finite_difference_check(store, f, &GradCheck::default()).unwrap()
    }

    fn random_store(shapes: &[(&str, &[usize])], seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape) in shapes {
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            store.add(*name, Tensor::new(shape, data).unwrap());
        }
        store
    }

    #[test]
    fn linear_function_is_exact() {
        let mut store = random_store(&[("x", &[5])], 1);
        let report = check_all(&mut store, |t, s| Ok(t.sum(t.param(s, ParamId(0)))));
        assert!(report.worst() < 1e-9, "{}", report.worst());
    }

    #[test]
    fn linear_model_mse_matches_closed_form() {
        // loss = |Xw - y|^2 / N, analytic gradient 2 Xᵀ(Xw - y)/N
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 6;
        let x: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut store = random_store(&[("w", &[3, 1])], 4);
        let xt = Tensor::new(&[n, 3], x.clone()).unwrap();
        let yt = Tensor::new(&[n, 1], y.clone()).unwrap();
        let f = |t: &Tape, s: &ParamStore| {
            let xv = t.constant(xt.clone());
            let yv = t.constant(yt.clone());
            let pred = t.matmul(xv, t.param(s, ParamId(0)))?;
            let d = t.sub(pred, yv)?;
            Ok(t.mean(t.mul(d, d)?))
        };
        let report = check_all(&mut store, f);
        assert!(report.worst() < 1e-6, "{}", report.worst());

        let w = store.value(ParamId(0)).data().to_vec();
        for (j, probe) in report.probes.iter().enumerate() {
            let mut g = 0.0;
            for r in 0..n {
                let resid: f64 = (0..3).map(|c| x[r * 3 + c] * w[c]).sum::<f64>() - y[r];
                g += 2.0 * x[r * 3 + j] * resid / n as f64;
            }
            assert!((probe.analytic - g).abs() < 1e-12);
        }
    }

    #[test]
    fn planted_wrong_rule_is_detected() {
        let mut store = random_store(&[("x", &[4])], 5);
        let report = check_all(&mut store, |t, s| Ok(t.sum(t.broken_square(t.param(s, ParamId(0))))));
        assert!(!report.passed());
        assert!(report.worst() > 1e-3);
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::from_vec(vec![f64::INFINITY]));
        let err = finite_difference_check(
            &mut store,
            |t, s| Ok(t.sum(t.param(s, ParamId(0)))),
            &GradCheck::default(),
        )
        .unwrap_err();
        assert!(matches!(err, TensorError::NonFinite(_)));
    }

    #[test]
    fn every_op_passes_on_random_inputs() {
        let shapes: &[(&str, &[usize])] = &[
            ("a", &[2, 3, 4]),
            ("b", &[2, 4, 3]),
            ("w", &[4, 4]),
            ("g", &[4]),
            ("beta", &[4]),
            ("c", &[2, 3, 4]),
        ];
        for seed in 0..3 {
            let mut store = random_store(shapes, 10 + seed);
            let weights = Tensor::new(&[2, 3, 4], (0..24).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
            let f = |t: &Tape, s: &ParamStore| {
                let a = t.param(s, ParamId(0));
                let b = t.param(s, ParamId(1));
                let w = t.param(s, ParamId(2));
                let g = t.param(s, ParamId(3));
                let beta = t.param(s, ParamId(4));
                let c = t.param(s, ParamId(5));
                let ab = t.bmm(a, b)?; // 2x3x3
                let sm = t.softmax(ab, 2)?;
                let sm1 = t.softmax(ab, 1)?;
                let mixed = t.bmm(t.add(sm, sm1)?, c)?; // 2x3x4
                let flat = t.reshape(mixed, &[6, 4])?;
                let proj = t.matmul(flat, w)?;
                let proj3 = t.reshape(proj, &[2, 3, 4])?;
                let ln = t.layer_norm(proj3, g, beta, 1e-5)?;
                let act = t.add(t.gelu(ln), t.relu(t.sub(c, a)?))?;
                let heads = t.merge_heads(t.split_heads(act, 2)?, 2)?;
                let tr = t.transpose(heads)?; // 2x4x3
                let sl = t.slice(tr, 1, 1, 2)?;
                let cat = t.concat(&[sl, t.slice(tr, 1, 0, 1)?], 1)?;
                let rep = t.repeat(g, 3)?;
                let scaled = t.add_scalar(t.scale(cat, 0.5), 0.1);
                let weighted = t.mul_const(act, &weights)?;
                let l1 = t.mean(t.mul(scaled, scaled)?);
                let l2 = t.sum(t.mul(rep, rep)?);
                let l3 = t.sum(weighted);
                let total = t.add(t.add(l1, l2)?, l3)?;
                Ok(total)
            };
            let report = check_all(&mut store, f);
            assert!(report.passed(), "seed {seed}: worst {}", report.worst());
        }
    }
}
