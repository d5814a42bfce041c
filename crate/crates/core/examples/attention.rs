//! Cross-attention of the global token over exogenous variates after training
//! on a task where only `global_lag_84` carries information.

use liqcast::data::SplitLabel;
use liqcast::model::Model;
use liqcast::synthetic::LeadLagExperiment;
use liqcast::train::train;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let exp = LeadLagExperiment::default();
    let h = 48;
    let frame = exp.task.frame(0)?;
    let (fc, _) = train(Model::new(&exp.model_config(h, true), 0)?, &frame, &exp.train_config(0))?;
    let origins = frame.eval_origins(SplitLabel::Test, exp.lookback, h)?;
    for layer in 0..2 {
        println!("layer {layer}");
        for (label, w) in fc.attention(&frame, &origins, layer)? {
            println!("  {label:<14} {w:.4} {}", "#".repeat((w * 60.0) as usize));
        }
    }
    Ok(())
}
