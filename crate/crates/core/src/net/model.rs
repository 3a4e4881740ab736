//! Trained models, their file format, and inference.
//!
//! A model file is one line of JSON (format tag, version, network and
//! training configuration, normalization, layer manifest) terminated by a
//! newline, followed by every parameter as binary32 little-endian in
//! manifest order.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{compute_norm_stats, Dataset, NormStats};
use crate::error::{Error, Result};
use crate::grid::{PixelMask, SurfaceGrid};
use crate::io::{f32_from_le_bytes, f32_to_le_bytes, parse_versioned_json, sha256_hex};
use crate::optics::OplField;

use super::{build_unet, train, unet_forward, LayerSpec, NetworkParams, Tensor, TrainConfig, TrainHistory, UNetConfig};

pub const MODEL_FORMAT: &str = "formnet-model";
pub const MODEL_VERSION: u32 = 1;

/// A trained network together with everything needed to apply it.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub params: NetworkParams<f32>,
    pub norm: NormStats,
    pub train: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct Header {
    unet: UNetConfig,
    train: TrainConfig,
    norm: NormStats,
    num_params: usize,
    manifest: Vec<LayerSpec>,
}

#[derive(Serialize)]
struct HeaderOut<'a> {
    format: &'a str,
    version: u32,
    body: &'a Header,
}

impl Model {
    pub fn new(params: NetworkParams<f32>, norm: NormStats, train: TrainConfig) -> Result<Self> {
        if norm.inputs.len() != params.config().in_channels {
            return Err(Error::InvalidShape(format!(
                "normalization for {} channels, network takes {}",
                norm.inputs.len(),
                params.config().in_channels
            )));
        }
        Ok(Self { params, norm, train })
    }

    pub fn config(&self) -> &UNetConfig {
        self.params.config()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            unet: self.config().clone(),
            train: self.train.clone(),
            norm: self.norm.clone(),
            num_params: self.params.len(),
            manifest: self.params.layers().to_vec(),
        };
        let mut bytes = serde_json::to_vec(&HeaderOut {
            format: MODEL_FORMAT,
            version: MODEL_VERSION,
            body: &header,
        })?;
        bytes.push(b'\n');
        bytes.extend(f32_to_le_bytes(self.params.values()));
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let format_err = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let split = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| format_err("missing header line"))?;
        let text = std::str::from_utf8(&bytes[..split]).map_err(|_| format_err("header is not UTF-8"))?;
        let header: Header = parse_versioned_json(text, path, MODEL_FORMAT, MODEL_VERSION)?;
        let mut params = NetworkParams::<f32>::zeros(&header.unet)?;
        if params.layers() != header.manifest.as_slice() || params.len() != header.num_params {
            return Err(format_err("layer manifest does not match the network configuration"));
        }
        let payload = &bytes[split + 1..];
        let expected = 4 * params.len() as u64;
        if payload.len() as u64 != expected {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected,
                found: payload.len() as u64,
            });
        }
        params.values_mut().copy_from_slice(&f32_from_le_bytes(payload));
        Model::new(params, header.norm, header.train)
    }

    /// SHA-256 of the serialized model.
    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_bytes()?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, path)
    }

    fn check_field(&self, field: &OplField) -> Result<()> {
        let cfg = self.config();
        if field.num_channels() != cfg.in_channels || field.size() != cfg.input_size {
            return Err(Error::InvalidShape(format!(
                "model takes {} channels of {}x{}, field has {} of {}x{}",
                cfg.in_channels,
                cfg.input_size,
                cfg.input_size,
                field.num_channels(),
                field.size(),
                field.size()
            )));
        }
        Ok(())
    }

    /// Predictions for a batch of fields; outside the disc every value is 0.
    pub fn predict_many(&self, fields: &[OplField]) -> Result<Vec<SurfaceGrid>> {
        let m = self.config().input_size;
        let k = self.config().in_channels;
        let mut raw = Vec::with_capacity(fields.len() * k * m * m);
        for f in fields {
            self.check_field(f)?;
            raw.extend(f.values().iter().map(|&v| v as f32));
        }
        self.predict_raw(&raw, fields.len())
    }

    /// Predictions for every sample of a dataset, in order.
    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<SurfaceGrid>> {
        let cfg = self.config();
        if ds.channels() != cfg.in_channels || ds.grid_size() != cfg.input_size {
            return Err(Error::InvalidShape("dataset does not match the model".into()));
        }
        self.predict_raw(ds.inputs(), ds.len())
    }

    fn predict_raw(&self, raw: &[f32], n: usize) -> Result<Vec<SurfaceGrid>> {
        let (m, k) = (self.config().input_size, self.config().in_channels);
        let disc = PixelMask::disc(m);
        // Bounded batches keep activation memory flat for large sets.
        const CHUNK: usize = 64;
        let mut out = Vec::with_capacity(n);
        for start in (0..n).step_by(CHUNK) {
            let end = (start + CHUNK).min(n);
            let slice = &raw[start * k * m * m..end * k * m * m];
            let x = Tensor::new([end - start, k, m, m], self.norm.normalize_inputs(slice, m * m))?;
            let y = unet_forward(&self.params, &x)?;
            let grids = (0..end - start)
                .into_par_iter()
                .map(|i| {
                    let mut values = self.norm.denormalize_targets(&y.sample(i)[..m * m]);
                    for (v, &inside) in values.iter_mut().zip(disc.bits()) {
                        if !inside {
                            *v = 0.0;
                        }
                    }
                    SurfaceGrid::from_values(m, values)
                })
                .collect::<Result<Vec<_>>>()?;
            out.extend(grids);
        }
        Ok(out)
    }
}

/// Normalizes on `train_ds`, initializes from `tc.seed`, and trains.
pub fn fit(train_ds: &Dataset, unet: &UNetConfig, tc: &TrainConfig) -> Result<(Model, TrainHistory)> {
    let norm = compute_norm_stats(train_ds)?;
    let params = build_unet::<f32>(unet, tc.seed)?;
    let (params, history) = train(params, train_ds, &norm, tc)?;
    Ok((Model::new(params, norm, tc.clone())?, history))
}

/// Network prediction of the difference topography for one measurement.
pub fn predict(model: &Model, delta_l: &OplField) -> Result<SurfaceGrid> {
    Ok(model.predict_many(std::slice::from_ref(delta_l))?.remove(0))
}

/// Elementwise mean of the member predictions.
pub fn ensemble_predict(members: &[Model], delta_l: &OplField) -> Result<SurfaceGrid> {
    let preds = members
        .iter()
        .map(|m| predict(m, delta_l))
        .collect::<Result<Vec<_>>>()?;
    mean_grid(&preds)
}

pub(crate) fn mean_grid(grids: &[SurfaceGrid]) -> Result<SurfaceGrid> {
    let first = grids
        .first()
        .ok_or_else(|| Error::InvalidInput("ensemble needs at least one member".into()))?;
    let mut acc = vec![0.0; first.values().len()];
    for g in grids {
        if g.size() != first.size() {
            return Err(Error::InvalidShape("ensemble members disagree on grid size".into()));
        }
        acc.iter_mut().zip(g.values()).for_each(|(a, &v)| *a += v);
    }
    let n = grids.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    SurfaceGrid::from_values(first.size(), acc)
}
