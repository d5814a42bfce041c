//! Model confidence set on simulated losses: one good model, two close rivals, one poor.

use liqcast::data::parse_date;
use liqcast::eval::ErrorMatrix;
use liqcast::mcs::{mcs_run, mcs_table, McsConfig};
use liqcast::synthetic::{ar1_noise, daily_dates};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (origins, h) = (30, 14);
    let n = origins * h;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let models = ["timexer_exog", "timexer", "nbeats", "naive"];
    let gaps = [0.0, 0.05, 0.1, 0.8];
    let columns = gaps
        .iter()
        .map(|g| {
            ar1_noise(n, 0.5, 1.0, &mut rng)
                .into_iter()
                .map(|e| 2.0 + g + e)
                .collect()
        })
        .collect();
    let errors = ErrorMatrix::new(
        h,
        daily_dates(parse_date("2025-01-22")?, origins),
        models.map(String::from).to_vec(),
        columns,
    )?;

    let result = mcs_run(
        &errors,
        &McsConfig {
            seed: 7,
            ..McsConfig::default()
        },
    )?;
    for e in &result.elimination_order {
        println!("eliminated {:<13} p = {:.3}", e.model, e.p_value);
    }
    println!("surviving at alpha {}: {:?}", result.alpha, result.surviving_set);
    println!("{}", result.trace_json());
    let mut csv = Vec::new();
    mcs_table(&[result]).write_csv(&mut csv)?;
    print!("{}", String::from_utf8(csv)?);
    Ok(())
}
