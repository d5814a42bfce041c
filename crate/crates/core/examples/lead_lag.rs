//! Planted lead-lag comparison: TimeXer with and without the leading driver.
//!
//! `cargo run --release --example lead_lag -- [seeds]`

use std::time::Instant;

use liqcast::synthetic::LeadLagExperiment;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seeds: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(5);
    let exp = LeadLagExperiment::default();
    for seed in 0..seeds {
        for h in [8, 48] {
            let start = Instant::now();
            let run = exp.run(seed, h)?;
            let weights: Vec<String> = run.attention.iter().map(|(k, w)| format!("{k}={w:.3}")).collect();
            println!(
                "seed {seed} h={h:>2}  exog {:>9.3}  endog {:>9.3}  argmax {}  [{}]  {:.1}s",
                run.exog_mse,
                run.endog_mse,
                run.attention_argmax(),
                weights.join(" "),
                start.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
