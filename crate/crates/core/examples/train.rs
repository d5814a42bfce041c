//! Train N-BEATS and a linear model on a synthetic series with early stopping.

use liqcast::model::{Model, ModelConfig, NBeatsConfig, WindowConfig};
use liqcast::synthetic::LeadLagTask;
use liqcast::train::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let task = LeadLagTask {
        train: 1200,
        ..LeadLagTask::default()
    };
    let frame = task.frame(0)?;
    let configs = [
        (
            "nbeats",
            ModelConfig::NBeats(NBeatsConfig {
                dropout: 0.0,
                ..NBeatsConfig::tuned(64, 14)
            }),
        ),
        (
            "linear",
            ModelConfig::Linear(WindowConfig {
                lookback: 64,
                horizon: 14,
            }),
        ),
    ];
    for (name, cfg) in configs {
        let tc = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 30,
            patience: 5,
            ..TrainConfig::default()
        };
        let (fc, report) = train(Model::new(&cfg, 0)?, &frame, &tc)?;
        for e in &report.log {
            println!(
                "{name} epoch {:>2}  train {:.4}  val {:.4}",
                e.epoch, e.train_mse, e.val_mse
            );
        }
        println!(
            "{name}: best epoch {}, stopped {}, test mse {:.3}\n",
            report.best_epoch,
            report.stopped_epoch,
            fc.split_mse(&frame, liqcast::data::SplitLabel::Test)?
        );
    }
    Ok(())
}
