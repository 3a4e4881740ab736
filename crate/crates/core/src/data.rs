//! Seeded datasets of (ΔL, ΔT) pairs, splits, normalization, and the
//! on-disk container.
//!
//! A dataset directory holds three files:
//!
//! - `meta`: versioned JSON with every generation parameter and a SHA-256
//!   content digest over `inputs.bin` followed by `targets.bin`;
//! - `inputs.bin`: binary32 little-endian, `[sample][channel][row][col]`;
//! - `targets.bin`: binary32 little-endian, `[sample][row][col]`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{PixelMask, SurfaceGrid};
use crate::io::{f32_to_le_bytes, parse_versioned_json, read_f32_file, to_versioned_json};
use crate::optics::{Design, ForwardConfig, ForwardModel, OplField};
use crate::zernike::ZernikeBasis;

pub const DATASET_FORMAT: &str = "formnet-dataset";
pub const DATASET_VERSION: u32 = 1;
pub const META_FILE: &str = "meta";
pub const INPUTS_FILE: &str = "inputs.bin";
pub const TARGETS_FILE: &str = "targets.bin";

/// Distribution of the random difference topographies.
///
/// Each sample draws an RMS scale `s ~ LogUniform(rms_min_nm, rms_max_nm)`
/// and coefficients `c_j ~ Uniform(-1, 1)` for `j = first_mode..=last_mode`,
/// then rescales so the in-disc RMS equals `s`. A zero `rms_max_nm` yields
/// flat topographies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub first_mode: u32,
    pub last_mode: u32,
    pub rms_min_nm: f64,
    pub rms_max_nm: f64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            first_mode: 2,
            last_mode: 36,
            rms_min_nm: 50.0,
            rms_max_nm: 700.0,
        }
    }
}

impl SamplingParams {
    pub fn flat() -> Self {
        Self {
            rms_min_nm: 0.0,
            rms_max_nm: 0.0,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.first_mode == 0 || self.last_mode < self.first_mode {
            return Err(Error::InvalidConfig(format!(
                "invalid mode range {}..={}",
                self.first_mode, self.last_mode
            )));
        }
        let flat = self.rms_min_nm == 0.0 && self.rms_max_nm == 0.0;
        if !flat && !(self.rms_min_nm > 0.0 && self.rms_max_nm >= self.rms_min_nm) {
            return Err(Error::InvalidConfig(format!(
                "invalid RMS range [{}, {}] nm",
                self.rms_min_nm, self.rms_max_nm
            )));
        }
        Ok(())
    }

    fn draw_scale(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.rms_max_nm == 0.0 {
            0.0
        } else if self.rms_max_nm == self.rms_min_nm {
            self.rms_max_nm
        } else {
            rng.random_range(self.rms_min_nm.ln()..self.rms_max_nm.ln()).exp()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub design: Design,
    pub seed: u64,
    pub num_samples: usize,
    pub channels: usize,
    pub grid_size: usize,
    pub forward_config: ForwardConfig,
    pub forward_config_digest: String,
    pub sampling: SamplingParams,
    /// Index of every sample within the generated dataset it descends from.
    pub sample_indices: Vec<u64>,
    /// Derivation steps applied after generation, e.g. splits and subsets.
    pub derivation: Vec<String>,
    /// SHA-256 over the input bytes followed by the target bytes.
    pub content_digest: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    meta: DatasetMeta,
    inputs: Vec<f32>,
    targets: Vec<f32>,
}

fn content_digest(inputs: &[f32], targets: &[f32]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(f32_to_le_bytes(inputs));
    hasher.update(f32_to_le_bytes(targets));
    hex::encode(hasher.finalize())
}

impl Dataset {
    fn assemble(mut meta: DatasetMeta, inputs: Vec<f32>, targets: Vec<f32>) -> Self {
        meta.num_samples = meta.sample_indices.len();
        meta.content_digest = content_digest(&inputs, &targets);
        Self {
            meta,
            inputs,
            targets,
        }
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.meta.num_samples
    }

    pub fn is_empty(&self) -> bool {
        self.meta.num_samples == 0
    }

    pub fn channels(&self) -> usize {
        self.meta.channels
    }

    pub fn grid_size(&self) -> usize {
        self.meta.grid_size
    }

    pub fn digest(&self) -> &str {
        &self.meta.content_digest
    }

    fn plane(&self) -> usize {
        self.meta.grid_size * self.meta.grid_size
    }

    /// All inputs, `[sample][channel][row][col]`.
    pub fn inputs(&self) -> &[f32] {
        &self.inputs
    }

    /// All targets, `[sample][row][col]`.
    pub fn targets(&self) -> &[f32] {
        &self.targets
    }

    pub fn input_slice(&self, i: usize) -> &[f32] {
        let n = self.meta.channels * self.plane();
        &self.inputs[i * n..(i + 1) * n]
    }

    pub fn target_slice(&self, i: usize) -> &[f32] {
        let n = self.plane();
        &self.targets[i * n..(i + 1) * n]
    }

    pub fn input_field(&self, i: usize) -> OplField {
        OplField::from_values(
            self.meta.channels,
            self.meta.grid_size,
            self.input_slice(i).iter().map(|&v| v as f64).collect(),
        )
        .expect("stored inputs are finite")
    }

    pub fn target_grid(&self, i: usize) -> SurfaceGrid {
        SurfaceGrid::from_values(
            self.meta.grid_size,
            self.target_slice(i).iter().map(|&v| v as f64).collect(),
        )
        .expect("stored targets are finite")
    }

    /// Samples at `indices` (positions in this dataset), in the given order.
    pub fn subset(&self, indices: &[usize], note: &str) -> Result<Dataset> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidInput(format!(
                "sample {bad} out of range for {} samples",
                self.len()
            )));
        }
        let mut inputs = Vec::with_capacity(indices.len() * self.input_slice(0).len());
        let mut targets = Vec::with_capacity(indices.len() * self.plane());
        for &i in indices {
            inputs.extend_from_slice(self.input_slice(i));
            targets.extend_from_slice(self.target_slice(i));
        }
        let mut meta = self.meta.clone();
        meta.sample_indices = indices.iter().map(|&i| self.meta.sample_indices[i]).collect();
        meta.derivation.push(note.to_string());
        Ok(Dataset::assemble(meta, inputs, targets))
    }
}

fn draw_topography(
    basis: &ZernikeBasis,
    sampling: &SamplingParams,
    seed: u64,
    index: u64,
) -> SurfaceGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let scale = sampling.draw_scale(&mut rng);
    let coeffs: Vec<f64> = (0..basis.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut grid = basis.combine(&coeffs);
    let rms = grid.rms_over(basis.mask());
    grid.scale(if rms > 0.0 { scale / rms } else { 0.0 });
    grid
}

/// Generates `n` samples under perfect instrument conditions.
///
/// Sample `i` uses the ChaCha8 stream `i` of `seed`, so the result does not
/// depend on the number of worker threads.
pub fn generate_dataset(
    cfg: &ForwardConfig,
    n: usize,
    seed: u64,
    sampling: &SamplingParams,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidInput("a dataset needs at least one sample".into()));
    }
    sampling.validate()?;
    let model = ForwardModel::new(cfg)?;
    let basis = ZernikeBasis::new(sampling.first_mode, sampling.last_mode, cfg.grid_size)?;
    let samples: Vec<(Vec<f32>, Vec<f32>)> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let delta_t = draw_topography(&basis, sampling, seed, i);
            let delta_l = model.delta_opd(&delta_t)?;
            Ok((
                delta_l.values().iter().map(|&v| v as f32).collect(),
                delta_t.values().iter().map(|&v| v as f32).collect(),
            ))
        })
        .collect::<Result<_>>()?;
    let mut inputs = Vec::with_capacity(n * cfg.num_channels() * cfg.grid_size * cfg.grid_size);
    let mut targets = Vec::with_capacity(n * cfg.grid_size * cfg.grid_size);
    for (i, t) in samples {
        inputs.extend(i);
        targets.extend(t);
    }
    let meta = DatasetMeta {
        design: cfg.design,
        seed,
        num_samples: n,
        channels: cfg.num_channels(),
        grid_size: cfg.grid_size,
        forward_config: cfg.clone(),
        forward_config_digest: cfg.digest(),
        sampling: sampling.clone(),
        sample_indices: (0..n as u64).collect(),
        derivation: Vec::new(),
        content_digest: String::new(),
    };
    Ok(Dataset::assemble(meta, inputs, targets))
}

/// Seeded partition of `0..n` into sorted (train, test) index lists with
/// `round(n * test_frac)` test samples.
pub fn split_indices(n: usize, test_frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(Error::InvalidSplit(format!(
            "test fraction {test_frac} must lie in (0, 1)"
        )));
    }
    let n_test = (n as f64 * test_frac).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::InvalidSplit(format!(
            "{n} samples at test fraction {test_frac} leave an empty side"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = perm[..n_test].to_vec();
    let mut train = perm[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

pub fn split_dataset(ds: &Dataset, test_frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(ds.len(), test_frac, seed)?;
    let note = |part: &str| format!("split(test_frac={test_frac}, seed={seed}, part={part})");
    Ok((ds.subset(&train, &note("train"))?, ds.subset(&test, &note("test"))?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

impl ChannelStats {
    #[inline]
    pub fn normalize(&self, x: f32) -> f32 {
        ((x as f64 - self.mean) / self.std) as f32
    }

    #[inline]
    pub fn denormalize(&self, y: f32) -> f64 {
        y as f64 * self.std + self.mean
    }
}

/// Per-channel affine normalization learned from a training set.
///
/// Statistics come from in-support input pixels and in-disc target pixels,
/// but the affine map is applied to every pixel of a channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub inputs: Vec<ChannelStats>,
    pub target: ChannelStats,
}

fn masked_stats(
    values: &[f32],
    samples: usize,
    stride: usize,
    offset: usize,
    mask: &PixelMask,
    label: &str,
) -> Result<ChannelStats> {
    let pixels = mask.indices();
    let count = (samples * pixels.len()) as f64;
    if count == 0.0 {
        return Err(Error::DegenerateChannel(format!("{label}: no pixels")));
    }
    let iter = || {
        (0..samples).flat_map(|s| {
            let base = s * stride + offset;
            pixels.iter().map(move |&p| values[base + p] as f64)
        })
    };
    let mean = iter().sum::<f64>() / count;
    let var = iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
    let std = var.sqrt();
    if !(std > 0.0) {
        return Err(Error::DegenerateChannel(label.to_string()));
    }
    Ok(ChannelStats { mean, std })
}

pub fn compute_norm_stats(train: &Dataset) -> Result<NormStats> {
    if train.is_empty() {
        return Err(Error::InvalidInput("cannot normalize an empty dataset".into()));
    }
    let plane = train.plane();
    let k = train.channels();
    let supports = train.meta.forward_config.supports();
    let inputs = supports
        .iter()
        .enumerate()
        .map(|(c, mask)| {
            masked_stats(
                &train.inputs,
                train.len(),
                k * plane,
                c * plane,
                mask,
                &format!("input channel {c}"),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let target = masked_stats(
        &train.targets,
        train.len(),
        plane,
        0,
        &PixelMask::disc(train.grid_size()),
        "target",
    )?;
    Ok(NormStats { inputs, target })
}

impl NormStats {
    /// Normalizes channel-major inputs of any number of samples.
    pub fn normalize_inputs(&self, inputs: &[f32], plane: usize) -> Vec<f32> {
        let k = self.inputs.len();
        inputs
            .chunks(plane)
            .enumerate()
            .flat_map(|(i, chunk)| {
                let s = self.inputs[i % k];
                chunk.iter().map(move |&x| s.normalize(x))
            })
            .collect()
    }

    pub fn normalize_targets(&self, targets: &[f32]) -> Vec<f32> {
        targets.iter().map(|&x| self.target.normalize(x)).collect()
    }

    pub fn denormalize_targets(&self, values: &[f32]) -> Vec<f64> {
        values.iter().map(|&y| self.target.denormalize(y)).collect()
    }

    pub fn denormalize_inputs(&self, values: &[f32], plane: usize) -> Vec<f64> {
        let k = self.inputs.len();
        values
            .chunks(plane)
            .enumerate()
            .flat_map(|(i, chunk)| {
                let s = self.inputs[i % k];
                chunk.iter().map(move |&y| s.denormalize(y))
            })
            .collect()
    }
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(INPUTS_FILE), f32_to_le_bytes(&ds.inputs))?;
    fs::write(dir.join(TARGETS_FILE), f32_to_le_bytes(&ds.targets))?;
    fs::write(
        dir.join(META_FILE),
        to_versioned_json(DATASET_FORMAT, DATASET_VERSION, &ds.meta)?,
    )?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join(META_FILE);
    let meta: DatasetMeta = parse_versioned_json(
        &fs::read_to_string(&meta_path)?,
        &meta_path,
        DATASET_FORMAT,
        DATASET_VERSION,
    )?;
    if meta.sample_indices.len() != meta.num_samples {
        return Err(Error::Format {
            path: meta_path,
            reason: "sample index list does not match the sample count".into(),
        });
    }
    let plane = meta.grid_size * meta.grid_size;
    let inputs = read_f32_file(&dir.join(INPUTS_FILE), meta.num_samples * meta.channels * plane)?;
    let targets = read_f32_file(&dir.join(TARGETS_FILE), meta.num_samples * plane)?;
    let computed = content_digest(&inputs, &targets);
    if computed != meta.content_digest {
        return Err(Error::DigestMismatch {
            path: dir.to_path_buf(),
            recorded: meta.content_digest.clone(),
            computed,
        });
    }
    Ok(Dataset {
        meta,
        inputs,
        targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, seed: u64) -> Dataset {
        generate_dataset(&ForwardConfig::freeform(16), n, seed, &SamplingParams::default()).unwrap()
    }

    #[test]
    fn generation_is_deterministic() {
        let a = small(12, 4);
        let b = small(12, 4);
        assert_eq!(a, b);
        assert_ne!(a.digest(), small(12, 5).digest());
    }

    #[test]
    fn generation_is_independent_of_worker_count() {
        let cfg = ForwardConfig::asphere(16);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| generate_dataset(&cfg, 9, 1, &SamplingParams::default()).unwrap());
        let b = three.install(|| generate_dataset(&cfg, 9, 1, &SamplingParams::default()).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn flat_sampling_gives_zeros() {
        let ds = generate_dataset(&ForwardConfig::freeform(16), 1, 0, &SamplingParams::flat()).unwrap();
        assert!(ds.inputs().iter().all(|&v| v == 0.0));
        assert!(ds.targets().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn targets_and_inputs_respect_masks() {
        let cfg = ForwardConfig::asphere(16);
        let ds = generate_dataset(&cfg, 3, 2, &SamplingParams::default()).unwrap();
        let disc = PixelMask::disc(16);
        let supports = cfg.supports();
        for i in 0..3 {
            for (v, &inside) in ds.target_slice(i).iter().zip(disc.bits()) {
                if !inside {
                    assert_eq!(*v, 0.0);
                }
            }
            let field = ds.input_field(i);
            for (k, s) in supports.iter().enumerate() {
                for (v, &inside) in field.channel(k).iter().zip(s.bits()) {
                    if !inside {
                        assert_eq!(*v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn per_sample_rms_follows_drawn_scale() {
        let ds = small(40, 8);
        let disc = PixelMask::disc(16);
        for i in 0..ds.len() {
            let rms = ds.target_grid(i).rms_over(&disc);
            assert!((49.9..=700.1).contains(&rms), "{rms}");
        }
    }

    #[test]
    fn split_examples() {
        let (train, test) = split_indices(22000, 0.10, 3).unwrap();
        assert_eq!(test.len(), 2200);
        assert_eq!(train.len(), 19800);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..22000).collect::<Vec<_>>());
        assert_eq!(split_indices(22000, 0.10, 3).unwrap(), (train, test));
        assert!(matches!(split_indices(5, 0.05, 0), Err(Error::InvalidSplit(_))));
        assert!(split_indices(5, 0.0, 0).is_err());
        assert!(split_indices(5, 1.0, 0).is_err());
    }

    #[test]
    fn split_datasets_carry_lineage() {
        let ds = small(10, 1);
        let (train, test) = split_dataset(&ds, 0.3, 9).unwrap();
        assert_eq!(test.len(), 3);
        assert_eq!(train.len(), 7);
        let mut seen: Vec<u64> = train
            .meta()
            .sample_indices
            .iter()
            .chain(&test.meta().sample_indices)
            .copied()
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        let first = test.meta().sample_indices[0] as usize;
        assert_eq!(test.target_slice(0), ds.target_slice(first));
        assert!(test.meta().derivation[0].contains("part=test"));
    }

    #[test]
    fn normalization_standardizes_training_data() {
        let ds = small(30, 6);
        let stats = compute_norm_stats(&ds).unwrap();
        let plane = 16 * 16;
        let disc = PixelMask::disc(16);
        let norm_t = stats.normalize_targets(ds.targets());
        let vals: Vec<f64> = norm_t
            .chunks(plane)
            .flat_map(|c| disc.indices().into_iter().map(move |p| c[p] as f64))
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        assert!(mean.abs() < 1e-5, "{mean}");
        assert!((std - 1.0).abs() < 1e-4, "{std}");

        let back = stats.denormalize_targets(&norm_t);
        let again = stats.normalize_targets(&back.iter().map(|&v| v as f32).collect::<Vec<_>>());
        for (a, b) in again.iter().zip(&norm_t) {
            assert!((a - b).abs() <= 2.0 * f32::EPSILON * b.abs().max(1.0));
        }
    }

    #[test]
    fn constant_channel_is_degenerate() {
        let ds = generate_dataset(&ForwardConfig::freeform(16), 4, 0, &SamplingParams::flat()).unwrap();
        assert!(matches!(compute_norm_stats(&ds), Err(Error::DegenerateChannel(_))));
    }

    #[test]
    fn test_stats_differ_from_train_stats() {
        let ds = small(40, 12);
        let (train, test) = split_dataset(&ds, 0.25, 1).unwrap();
        let stats = compute_norm_stats(&train).unwrap();
        let test_stats = compute_norm_stats(&test).unwrap();
        assert_ne!(stats, test_stats);
        let norm = stats.normalize_targets(test.targets());
        assert!(norm.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn container_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small(5, 3);
        let path = dir.path().join("ds");
        save_dataset(&ds, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);

        let inputs = fs::read(path.join(INPUTS_FILE)).unwrap();
        fs::write(path.join(INPUTS_FILE), &inputs[..inputs.len() - 1]).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Truncated { .. })));

        let mut flipped = inputs.clone();
        flipped[100] ^= 0x01;
        fs::write(path.join(INPUTS_FILE), &flipped).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::DigestMismatch { .. })));
        fs::write(path.join(INPUTS_FILE), &inputs).unwrap();

        let meta = fs::read_to_string(path.join(META_FILE)).unwrap();
        let bumped = meta.replacen(
            &format!("\"version\": {DATASET_VERSION}"),
            &format!("\"version\": {}", DATASET_VERSION + 1),
            1,
        );
        assert_ne!(meta, bumped);
        fs::write(path.join(META_FILE), bumped).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::VersionMismatch { .. })));
    }
}
