//! Test error as a function of the amount of training data.

use formnet::data::{generate_dataset, split_dataset, SamplingParams};
use formnet::evalrep::{learning_curve, learning_curve_csv, LearningCurveConfig};
use formnet::net::{TrainConfig, UNetConfig};
use formnet::{Design, ForwardConfig};

fn main() -> formnet::Result<()> {
    let cfg = ForwardConfig::for_design(Design::Freeform, 32);
    let ds = generate_dataset(&cfg, 500, 5, &SamplingParams::default())?;
    let (pool, test) = split_dataset(&ds, 0.1, 6)?;
    let lc = LearningCurveConfig {
        fractions: vec![0.1, 0.3, 1.0],
        ensemble_size: 2,
        unet: UNetConfig::new(32, pool.channels(), 2, 8),
        train: TrainConfig {
            epochs: 3,
            batch_size: 16,
            lr0: 1e-3,
            ..TrainConfig::new(7)
        },
        subset_seed: 8,
    };
    let rows = learning_curve(&pool, &test, &lc)?;
    print!("{}", learning_curve_csv(&rows));
    Ok(())
}
