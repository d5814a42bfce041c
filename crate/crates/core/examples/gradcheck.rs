//! Finite-difference gradient check of every trainable model.

use liqcast::model::{Batch, Mode, Model, ModelConfig, NBeatsConfig, TimeXerConfig, WindowConfig};
use liqcast::tensor::{finite_difference_check, GradCheck, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tx = TimeXerConfig {
        lookback: 24,
        horizon: 6,
        patch_len: 6,
        stride: 6,
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        d_ff: 16,
        dropout: 0.0,
        use_exogenous: true,
        exog_labels: vec!["global_lag_7".into(), "global_lag_84".into()],
    };
    let configs = vec![
        ModelConfig::TimeXer(tx.clone()),
        ModelConfig::TimeXer(TimeXerConfig {
            use_exogenous: false,
            exog_labels: vec![],
            ..tx
        }),
        ModelConfig::NBeats(NBeatsConfig {
            lookback: 24,
            horizon: 6,
            n_blocks: 2,
            hidden: 16,
            layers_per_block: 2,
            dropout: 0.0,
        }),
        ModelConfig::Linear(WindowConfig {
            lookback: 24,
            horizon: 6,
        }),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let names = ["timexer+x", "timexer", "nbeats", "linear"];
    for (name, cfg) in names.iter().zip(configs) {
        let mut model = Model::new(&cfg, 1)?;
        let batch = Batch {
            endog: random(&[4, 24], &mut rng),
            exog: cfg.uses_exogenous().then(|| random(&[4, 24, 2], &mut rng)),
        };
        let target = random(&[4, 6], &mut rng);
        let probe = model.clone();
        let report = finite_difference_check(
            model.params_mut(),
            |tape, store| {
                let out = probe.forward_with(tape, store, &batch, Mode::Eval)?;
                let diff = tape.sub(out, tape.constant(target.clone()))?;
                Ok(tape.mean(tape.mul(diff, diff)?))
            },
            &GradCheck {
                probes: Some(30),
                ..GradCheck::default()
            },
        )?;
        println!(
            "{:<8} {:>3} probes  worst relative error {:.2e}  {}",
            name,
            report.probes.len(),
            report.worst(),
            if report.passed() { "ok" } else { "FAILED" }
        );
    }
    Ok(())
}
