//! Train a small U-Net on a small freeform dataset and evaluate it.
//!
//! `cargo run --release --example train_unet -- [samples] [epochs]`

use formnet::data::{generate_dataset, split_dataset, SamplingParams};
use formnet::evalrep::{evaluate, format_table};
use formnet::net::{fit, TrainConfig, UNetConfig};
use formnet::{Design, ForwardConfig};

fn main() -> formnet::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let samples = args.next().unwrap_or(600);
    let epochs = args.next().unwrap_or(4);

    let cfg = ForwardConfig::for_design(Design::Freeform, 32);
    let ds = generate_dataset(&cfg, samples, 1, &SamplingParams::default())?;
    let (train, test) = split_dataset(&ds, 0.1, 2)?;
    let unet = UNetConfig::new(32, train.channels(), 2, 8);
    let tc = TrainConfig {
        epochs,
        batch_size: 16,
        lr0: 1e-3,
        ..TrainConfig::new(3)
    };
    let (model, history) = fit(&train, &unet, &tc)?;
    for e in &history.epochs {
        println!("epoch {:2}  loss {:.4}  lr {:.1e}", e.epoch + 1, e.loss, e.lr);
    }
    let report = evaluate(&model, &test)?;
    println!("{}", format_table(&[("model", &report)]));
    println!("RMSE ratio to the raw deviation: {:.3}", report.rmse_ratio());
    Ok(())
}
