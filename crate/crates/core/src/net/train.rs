use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, NormStats};
use crate::error::{Error, Result};

use super::{adam_step, loss_gradient, lr_at_epoch, AdamState, NetworkParams, Scalar, Tensor, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean of the mini-batch losses, normalized units.
    pub loss: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

fn gather<T: Scalar>(src: &Tensor<T>, idx: &[usize]) -> Tensor<T> {
    let mut shape = src.shape();
    shape[0] = idx.len();
    let mut data = Vec::with_capacity(idx.len() * src.sample_len());
    for &i in idx {
        data.extend_from_slice(src.sample(i));
    }
    Tensor::new(shape, data).expect("gathered shape")
}

/// Mini-batch Adam on already normalized tensors.
///
/// Each epoch visits the samples in a fresh permutation drawn from the
/// seed and the epoch number; the final partial batch is kept.
pub fn train_tensors<T: Scalar>(
    mut params: NetworkParams<T>,
    inputs: &Tensor<T>,
    targets: &Tensor<T>,
    tc: &TrainConfig,
) -> Result<(NetworkParams<T>, TrainHistory)> {
    tc.validate()?;
    let n = inputs.batch();
    if n == 0 || targets.batch() != n {
        return Err(Error::InvalidShape(format!(
            "{} inputs and {} targets",
            n,
            targets.batch()
        )));
    }
    let mut state = AdamState::new(params.len());
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0usize;
    for epoch in 0..tc.epochs {
        let started = Instant::now();
        let lr = lr_at_epoch(tc, epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
        // Stream 0 of the seed is left to weight initialization.
        rng.set_stream(epoch as u64 + 1);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(tc.batch_size) {
            let x = gather(inputs, batch);
            let y = gather(targets, batch);
            let (loss, grad) = loss_gradient(&params, &x, &y, tc.weight_decay).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("training step {step}: {m}")),
                other => other,
            })?;
            adam_step(params.values_mut(), &grad, &mut state, lr, &tc.adam);
            total += loss * batch.len() as f64;
            step += 1;
        }
        let record = EpochRecord {
            epoch,
            loss: total / n as f64,
            lr,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {}/{}: loss {:.5} lr {:.2e} ({:.1} s)",
            epoch + 1,
            tc.epochs,
            record.loss,
            lr,
            record.wall_seconds
        );
        history.epochs.push(record);
    }
    Ok((params, history))
}

/// Normalized dataset tensors `(inputs, targets)` for the network.
pub(crate) fn dataset_tensors(ds: &Dataset, norm: &NormStats) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let (n, k, m) = (ds.len(), ds.channels(), ds.grid_size());
    if norm.inputs.len() != k {
        return Err(Error::InvalidShape(format!(
            "normalization has {} channels, dataset {k}",
            norm.inputs.len()
        )));
    }
    let x = Tensor::new([n, k, m, m], norm.normalize_inputs(ds.inputs(), m * m))?;
    let y = Tensor::new([n, 1, m, m], norm.normalize_targets(ds.targets()))?;
    Ok((x, y))
}

/// Trains `params` on a dataset, normalizing inputs and targets with `norm`.
pub fn train(
    params: NetworkParams<f32>,
    train_ds: &Dataset,
    norm: &NormStats,
    tc: &TrainConfig,
) -> Result<(NetworkParams<f32>, TrainHistory)> {
    let cfg = params.config();
    if cfg.in_channels != train_ds.channels() || cfg.input_size != train_ds.grid_size() {
        return Err(Error::InvalidShape(format!(
            "network expects {} channels of {}x{}, dataset has {} of {}x{}",
            cfg.in_channels,
            cfg.input_size,
            cfg.input_size,
            train_ds.channels(),
            train_ds.grid_size(),
            train_ds.grid_size()
        )));
    }
    let (x, y) = dataset_tensors(train_ds, norm)?;
    train_tensors(params, &x, &y, tc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build_unet, UNetConfig};
    use rand::Rng;

    fn toy(n: usize) -> (Tensor<f32>, Tensor<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::from_fn([n, 1, 16, 16], |_| rng.random_range(-1.0f32..1.0));
        // A smooth target that depends on the input: a blurred copy.
        let y = Tensor::from_fn([n, 1, 16, 16], |i| {
            let (s, p) = (i / 256, i % 256);
            let (r, c) = (p / 16, p % 16);
            let mut acc = 0.0;
            for dr in [-1i32, 0, 1] {
                for dc in [-1i32, 0, 1] {
                    let (rr, cc) = ((r as i32 + dr).clamp(0, 15), (c as i32 + dc).clamp(0, 15));
                    acc += x.data()[s * 256 + rr as usize * 16 + cc as usize];
                }
            }
            acc / 9.0
        });
        (x, y)
    }

    #[test]
    fn overfits_eight_samples() {
        let (x, y) = toy(8);
        let p = build_unet::<f32>(&UNetConfig::new(16, 1, 2, 8), 1).unwrap();
        let mut tc = TrainConfig::new(5);
        tc.epochs = 300;
        tc.batch_size = 8;
        tc.lr0 = 2e-3;
        tc.drop_period = 100;
        tc.weight_decay = 0.0;
        let (_, h) = train_tensors(p, &x, &y, &tc).unwrap();
        assert_eq!(h.epochs.len(), 300);
        assert!(h.final_loss().unwrap() < 1e-3, "final loss {:?}", h.final_loss());
    }

    #[test]
    fn training_is_deterministic_and_keeps_partial_batch() {
        let (x, y) = toy(5);
        let cfg = UNetConfig::new(16, 1, 1, 2);
        let mut tc = TrainConfig::new(9);
        tc.epochs = 3;
        tc.batch_size = 2;
        let run = || train_tensors(build_unet::<f32>(&cfg, 4).unwrap(), &x, &y, &tc).unwrap();
        let (a, ha) = run();
        let (b, _) = run();
        assert_eq!(a.values(), b.values());
        assert_eq!(ha.epochs.len(), 3);
        assert_eq!(ha.epochs[0].lr, 5e-4);
    }

    #[test]
    fn rejects_mismatched_batches() {
        let (x, _) = toy(4);
        let (_, y) = toy(3);
        let p = build_unet::<f32>(&UNetConfig::new(16, 1, 1, 2), 0).unwrap();
        assert!(train_tensors(p, &x, &y, &TrainConfig::new(0)).is_err());
    }
}
