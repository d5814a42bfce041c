//! Moving-block bootstrap indices and the mean of a resampled autocorrelated series.

use liqcast::mcs::block_bootstrap_indices;
use liqcast::synthetic::ar1_noise;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    println!("n=12 b=4: {:?}", block_bootstrap_indices(12, 4, &mut rng)?);
    println!("n=12 b=1: {:?}", block_bootstrap_indices(12, 1, &mut rng)?);

    let x = ar1_noise(500, 0.8, 1.0, &mut rng);
    for b in [1, 10, 50] {
        let means: Vec<f64> = (0..2000)
            .map(|_| {
                let idx = block_bootstrap_indices(x.len(), b, &mut rng).unwrap();
                idx.iter().map(|&i| x[i]).sum::<f64>() / x.len() as f64
            })
            .collect();
        let m = means.iter().sum::<f64>() / means.len() as f64;
        let sd = (means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / means.len() as f64).sqrt();
        println!("block {b:>2}: std of the bootstrap mean {sd:.4}");
    }
    Ok(())
}
