//! Rolling-origin evaluation of two baselines and their per-point error matrix.

use liqcast::eval::{build_error_matrix, rolling_origin, write_results_table};
use liqcast::model::{Model, ModelConfig, WindowConfig};
use liqcast::synthetic::LeadLagTask;
use liqcast::train::{train, EndogScaling, ExogScaling, Forecaster, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let task = LeadLagTask {
        train: 800,
        test: 120,
        ..LeadLagTask::default()
    };
    let frame = task.frame(1)?;
    let mut reports = Vec::new();
    for h in [7, 28] {
        let window = WindowConfig {
            lookback: 64,
            horizon: h,
        };
        let naive = Forecaster::new(
            Model::new(&ModelConfig::Naive(window), 0)?,
            &frame,
            EndogScaling::Instance,
            ExogScaling::Frozen,
        )?;
        let tc = TrainConfig {
            learning_rate: 1e-2,
            batch_size: 32,
            max_epochs: 20,
            ..TrainConfig::default()
        };
        let (linear, _) = train(Model::new(&ModelConfig::Linear(window), 0)?, &frame, &tc)?;
        reports.push(rolling_origin("naive", &naive, &frame)?);
        reports.push(rolling_origin("linear", &linear, &frame)?);
    }
    for r in &reports {
        println!(
            "{:<6} h={:<2} origins {:>3}  mse {:.4}  (scaled {:.3e})",
            r.model_name,
            r.horizon,
            r.origins.len(),
            r.mse_raw,
            r.mse_scaled
        );
    }
    let mut table = Vec::new();
    write_results_table(&reports, &mut table)?;
    println!("\n{}", String::from_utf8(table)?);
    let matrix = build_error_matrix(&reports[..2])?;
    println!(
        "h=7 error matrix: {} points x {} models",
        matrix.n_points(),
        matrix.models.len()
    );
    Ok(())
}
