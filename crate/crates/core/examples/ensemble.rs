//! Train three networks that differ only in their seed and compare the
//! averaged prediction with the individual members.

use formnet::data::{generate_dataset, split_dataset, SamplingParams};
use formnet::evalrep::{evaluate, evaluate_ensemble};
use formnet::net::{fit, TrainConfig, UNetConfig};
use formnet::{Design, ForwardConfig};

fn main() -> formnet::Result<()> {
    let cfg = ForwardConfig::for_design(Design::Freeform, 32);
    let ds = generate_dataset(&cfg, 400, 11, &SamplingParams::default())?;
    let (train, test) = split_dataset(&ds, 0.1, 12)?;
    let unet = UNetConfig::new(32, train.channels(), 2, 8);

    let mut members = Vec::new();
    for seed in 20..23 {
        let tc = TrainConfig {
            epochs: 3,
            batch_size: 16,
            lr0: 1e-3,
            ..TrainConfig::new(seed)
        };
        members.push(fit(&train, &unet, &tc)?.0);
    }
    let mut mean_mse = 0.0;
    for (i, m) in members.iter().enumerate() {
        let r = evaluate(m, &test)?;
        mean_mse += r.mse() / members.len() as f64;
        println!("member {i}: RMSE {:.2} nm", r.rmse_nm);
    }
    let ens = evaluate_ensemble(&members, &test)?;
    println!("ensemble: RMSE {:.2} nm", ens.rmse_nm);
    println!("ensemble MSE {:.2} <= mean member MSE {:.2}: {}", ens.mse(), mean_mse, ens.mse() <= mean_mse);
    Ok(())
}
