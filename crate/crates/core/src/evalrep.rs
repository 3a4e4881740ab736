//! In-disc error metrics, evaluation reports, heatmaps, and learning curves.
//!
//! Every metric looks only at pixels inside the unit disc and accumulates
//! in f64. RMSE is pooled over all in-disc pixels of all samples; the
//! per-sample values are kept alongside so either view can be recovered.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::{DisturbanceEstimate, HybridInputs};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::grid::{PixelMask, SurfaceGrid};
use crate::io::{read_versioned_json, write_versioned_json};
use crate::net::{fit, Model, TrainConfig, UNetConfig};
use crate::optics::{design_topography, Disturbance};

pub const REPORT_FORMAT: &str = "formnet-report";
pub const REPORT_VERSION: u32 = 1;
pub const HEATMAP_FORMAT: &str = "formnet-heatmap-scale";
pub const HEATMAP_VERSION: u32 = 1;

fn check_pairs(preds: &[SurfaceGrid], truths: &[SurfaceGrid]) -> Result<usize> {
    if preds.len() != truths.len() || preds.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} truths",
            preds.len(),
            truths.len()
        )));
    }
    let size = truths[0].size();
    if preds.iter().chain(truths).any(|g| g.size() != size) {
        return Err(Error::InvalidInput("grids differ in size".into()));
    }
    Ok(size)
}

/// Per-sample in-disc absolute errors.
fn abs_errors(pred: &SurfaceGrid, truth: &SurfaceGrid, pixels: &[usize]) -> Vec<f64> {
    pixels
        .iter()
        .map(|&p| (pred.values()[p] - truth.values()[p]).abs())
        .collect()
}

/// Median with the even-count convention: mean of the two middle values.
pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Root mean squared error pooled over all samples and in-disc pixels.
pub fn rmse_in_disc(preds: &[SurfaceGrid], truths: &[SurfaceGrid]) -> Result<f64> {
    let size = check_pairs(preds, truths)?;
    let pixels = PixelMask::disc(size).indices();
    let sse: f64 = preds
        .iter()
        .zip(truths)
        .flat_map(|(p, t)| abs_errors(p, t, &pixels))
        .map(|e| e * e)
        .sum();
    Ok((sse / (pixels.len() * preds.len()) as f64).sqrt())
}

/// Median of the pooled per-pixel absolute errors.
pub fn median_abs_in_disc(preds: &[SurfaceGrid], truths: &[SurfaceGrid]) -> Result<f64> {
    let size = check_pairs(preds, truths)?;
    let pixels = PixelMask::disc(size).indices();
    let mut all: Vec<f64> = preds
        .iter()
        .zip(truths)
        .flat_map(|(p, t)| abs_errors(p, t, &pixels))
        .collect();
    Ok(median(&mut all))
}

/// Error statistics of one set of predictions against ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse_nm: f64,
    /// Median of the pooled absolute errors.
    pub median_abs_nm: f64,
    /// Median over samples of each sample's median absolute error.
    pub median_of_sample_medians_nm: f64,
    pub per_sample_rmse_nm: Vec<f64>,
    pub samples: usize,
    /// In-disc pixels per sample.
    pub pixels: usize,
    /// RMSE of the truth itself, i.e. of a predictor that always returns zero.
    pub deviation_rmse_nm: f64,
    pub deviation_median_abs_nm: f64,
    pub dataset_digest: String,
    pub model_digest: String,
}

impl MetricsReport {
    pub fn from_predictions(
        preds: &[SurfaceGrid],
        truths: &[SurfaceGrid],
        dataset_digest: &str,
        model_digest: &str,
    ) -> Result<Self> {
        let size = check_pairs(preds, truths)?;
        let pixels = PixelMask::disc(size).indices();
        let mut pooled = Vec::with_capacity(pixels.len() * preds.len());
        let mut deviation = Vec::with_capacity(pixels.len() * preds.len());
        let mut per_sample = Vec::with_capacity(preds.len());
        let mut sample_medians = Vec::with_capacity(preds.len());
        let zero = SurfaceGrid::zeros(size);
        for (p, t) in preds.iter().zip(truths) {
            let mut e = abs_errors(p, t, &pixels);
            per_sample.push((e.iter().map(|v| v * v).sum::<f64>() / pixels.len() as f64).sqrt());
            pooled.extend_from_slice(&e);
            sample_medians.push(median(&mut e));
            deviation.extend(abs_errors(&zero, t, &pixels));
        }
        let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
        Ok(Self {
            rmse_nm: rms(&pooled),
            median_abs_nm: median(&mut pooled),
            median_of_sample_medians_nm: median(&mut sample_medians),
            per_sample_rmse_nm: per_sample,
            samples: preds.len(),
            pixels: pixels.len(),
            deviation_rmse_nm: rms(&deviation),
            deviation_median_abs_nm: median(&mut deviation),
            dataset_digest: dataset_digest.to_string(),
            model_digest: model_digest.to_string(),
        })
    }

    /// Model RMSE relative to the deviation RMSE of the data.
    pub fn rmse_ratio(&self) -> f64 {
        self.rmse_nm / self.deviation_rmse_nm
    }

    pub fn median_ratio(&self) -> f64 {
        self.median_abs_nm / self.deviation_median_abs_nm
    }

    /// Mean squared error, the square of the pooled RMSE.
    pub fn mse(&self) -> f64 {
        self.rmse_nm * self.rmse_nm
    }
}

fn truths(ds: &Dataset) -> Vec<SurfaceGrid> {
    (0..ds.len()).map(|i| ds.target_grid(i)).collect()
}

/// Predicts every sample of `ds` and compares against its targets.
pub fn evaluate(model: &Model, ds: &Dataset) -> Result<MetricsReport> {
    let preds = model.predict_dataset(ds)?;
    MetricsReport::from_predictions(&preds, &truths(ds), ds.digest(), &model.digest()?)
}

/// Evaluates the mean prediction of several models. The model digest field
/// lists the member digests joined by `+`.
pub fn evaluate_ensemble(members: &[Model], ds: &Dataset) -> Result<MetricsReport> {
    if members.is_empty() {
        return Err(Error::InvalidInput("ensemble needs at least one member".into()));
    }
    let per_member = members
        .iter()
        .map(|m| m.predict_dataset(ds))
        .collect::<Result<Vec<_>>>()?;
    let preds = (0..ds.len())
        .map(|i| {
            let grids: Vec<SurfaceGrid> = per_member.iter().map(|p| p[i].clone()).collect();
            crate::net::mean_grid(&grids)
        })
        .collect::<Result<Vec<_>>>()?;
    let digests = members
        .iter()
        .map(Model::digest)
        .collect::<Result<Vec<_>>>()?
        .join("+");
    MetricsReport::from_predictions(&preds, &truths(ds), ds.digest(), &digests)
}

/// Aligned plain-text table with `RMSE` and `Median` rows, one column per entry.
pub fn format_table(columns: &[(&str, &MetricsReport)]) -> String {
    let width = columns.iter().map(|(name, _)| name.len()).max().unwrap_or(0).max(12);
    let mut out = format!("{:<8}", "");
    for (name, _) in columns {
        let _ = write!(out, " {name:>width$}");
    }
    out.push('\n');
    for (label, pick) in [
        ("RMSE", (|r: &MetricsReport| r.rmse_nm) as fn(&MetricsReport) -> f64),
        ("Median", |r: &MetricsReport| r.median_abs_nm),
    ] {
        let _ = write!(out, "{label:<8}");
        for (_, r) in columns {
            let cell = format!("{:.2} nm", pick(r));
            let _ = write!(out, " {cell:>width$}");
        }
        out.push('\n');
    }
    out
}

fn table_path(path: &Path) -> PathBuf {
    path.with_extension("txt")
}

/// Writes the report as JSON at `path` and a table next to it with extension `txt`.
pub fn write_report(report: &MetricsReport, path: &Path) -> Result<()> {
    write_versioned_json(path, REPORT_FORMAT, REPORT_VERSION, report)?;
    let deviation = MetricsReport {
        rmse_nm: report.deviation_rmse_nm,
        median_abs_nm: report.deviation_median_abs_nm,
        ..report.clone()
    };
    let mut text = format_table(&[("model", report), ("deviation", &deviation)]);
    let _ = writeln!(text, "\nsamples: {}  pixels per sample: {}", report.samples, report.pixels);
    let _ = writeln!(text, "dataset: {}", report.dataset_digest);
    let _ = writeln!(text, "model:   {}", report.model_digest);
    fs::write(table_path(path), text)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<MetricsReport> {
    read_versioned_json(path, REPORT_FORMAT, REPORT_VERSION)
}

/// Value range recorded next to a heatmap image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapScale {
    pub min_nm: f64,
    pub max_nm: f64,
    pub width: usize,
    pub height: usize,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes a 16-bit binary PGM mapping the grid minimum to 0 and the maximum
/// to 65535, plus `<path>.json` holding the range. A constant grid maps to 0.
pub fn emit_heatmap(grid: &SurfaceGrid, path: &Path) -> Result<HeatmapScale> {
    if !grid.values().iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("heatmap of a non-finite grid".into()));
    }
    let (min, max) = grid
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let m = grid.size();
    let span = max - min;
    let mut bytes = format!("P5\n{m} {m}\n65535\n").into_bytes();
    for &v in grid.values() {
        let level = if span > 0.0 {
            ((v - min) / span * 65535.0).round().clamp(0.0, 65535.0) as u16
        } else {
            0
        };
        bytes.extend_from_slice(&level.to_be_bytes());
    }
    fs::write(path, bytes)?;
    let scale = HeatmapScale {
        min_nm: min,
        max_nm: max,
        width: m,
        height: m,
    };
    write_versioned_json(&sidecar_path(path), HEATMAP_FORMAT, HEATMAP_VERSION, &scale)?;
    Ok(scale)
}

/// Reconstructs a grid from a heatmap and its sidecar.
pub fn read_heatmap(path: &Path) -> Result<SurfaceGrid> {
    let scale: HeatmapScale = read_versioned_json(&sidecar_path(path), HEATMAP_FORMAT, HEATMAP_VERSION)?;
    let bytes = fs::read(path)?;
    let header = format!("P5\n{} {}\n65535\n", scale.width, scale.height);
    if !bytes.starts_with(header.as_bytes()) || scale.width != scale.height {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "unexpected graymap header".into(),
        });
    }
    let body = &bytes[header.len()..];
    let expected = 2 * scale.width * scale.height;
    if body.len() != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: expected as u64,
            found: body.len() as u64,
        });
    }
    let span = scale.max_nm - scale.min_nm;
    let values = body
        .chunks_exact(2)
        .map(|b| scale.min_nm + u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0 * span)
        .collect();
    SurfaceGrid::from_values(scale.width, values)
}

/// The same held-out samples evaluated three ways: with the perfect
/// instrument, with a disturbed instrument and no correction, and with the
/// disturbed instrument corrected by a calibration estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridComparison {
    pub perfect: MetricsReport,
    pub disturbed: MetricsReport,
    pub calibrated: MetricsReport,
}

impl HybridComparison {
    pub fn table(&self) -> String {
        format_table(&[
            ("perfect", &self.perfect),
            ("disturbed", &self.disturbed),
            ("calibrated", &self.calibrated),
        ])
    }
}

/// A [`HybridComparison`] with the grids it was computed from.
#[derive(Clone, Debug)]
pub struct HybridEvaluation {
    pub comparison: HybridComparison,
    pub truths: Vec<SurfaceGrid>,
    pub perfect: Vec<SurfaceGrid>,
    pub disturbed: Vec<SurfaceGrid>,
    pub calibrated: Vec<SurfaceGrid>,
}

/// Evaluates `model` on the first `samples` entries of `test` under the
/// three instrument conditions. Specimens are the design plus each target
/// difference topography, measured with `d_true`.
pub fn compare_hybrid(
    model: &Model,
    test: &Dataset,
    samples: usize,
    d_true: &Disturbance,
    est: &DisturbanceEstimate,
) -> Result<HybridEvaluation> {
    let n = samples.min(test.len());
    if n == 0 {
        return Err(Error::InvalidInput("no held-out samples to compare".into()));
    }
    let sub = test.subset(&(0..n).collect::<Vec<_>>(), &format!("first {n} samples"))?;
    let cfg = &sub.meta().forward_config;
    let truths = truths(&sub);
    let design = design_topography(cfg.design, cfg.grid_size)?;
    let corrected = HybridInputs::new(cfg, est)?;
    let uncorrected = HybridInputs::new(
        cfg,
        &DisturbanceEstimate::exact(&Disturbance::zero(cfg.num_channels(), d_true.order)),
    )?;
    let fields = truths
        .par_iter()
        .map(|t| {
            let mut specimen = design.clone();
            specimen.add_scaled(t, 1.0);
            Ok((
                uncorrected.from_specimen(&specimen, d_true)?,
                corrected.from_specimen(&specimen, d_true)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let (raw, hybrid): (Vec<_>, Vec<_>) = fields.into_iter().unzip();
    let perfect = model.predict_dataset(&sub)?;
    let disturbed = model.predict_many(&raw)?;
    let calibrated = model.predict_many(&hybrid)?;
    let digest = model.digest()?;
    let report = |p: &[SurfaceGrid]| MetricsReport::from_predictions(p, &truths, sub.digest(), &digest);
    let comparison = HybridComparison {
        perfect: report(&perfect)?,
        disturbed: report(&disturbed)?,
        calibrated: report(&calibrated)?,
    };
    Ok(HybridEvaluation {
        comparison,
        truths,
        perfect,
        disturbed,
        calibrated,
    })
}

/// One row of a learning-curve experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningCurveRow {
    pub fraction: f64,
    pub train_samples: usize,
    pub single_rmse_nm: f64,
    pub ensemble_rmse_nm: f64,
    /// Mean over members of each member's MSE, for the ensemble inequality.
    pub mean_member_mse: f64,
}

/// Settings shared by every run of a learning curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningCurveConfig {
    pub fractions: Vec<f64>,
    pub ensemble_size: usize,
    pub unet: UNetConfig,
    /// Template for member 0; member `m` uses seed `train.seed + m`.
    pub train: TrainConfig,
    /// Seed of the subset draw.
    pub subset_seed: u64,
}

/// Indices of a seeded `fraction` of `0..n`, sorted. A fraction of 1 returns
/// every index, so the full-pool run sees exactly the pool.
pub fn subset_indices(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidInput(format!("fraction {fraction} outside (0, 1]")));
    }
    let take = ((n as f64 * fraction).round() as usize).clamp(1, n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(take);
    idx.sort_unstable();
    Ok(idx)
}

/// Trains a single network and an ensemble on nested seeded subsets of the
/// pool and evaluates all of them on one fixed test set. Member 0 of each
/// ensemble is the single network.
pub fn learning_curve(pool: &Dataset, test: &Dataset, cfg: &LearningCurveConfig) -> Result<Vec<LearningCurveRow>> {
    if cfg.fractions.is_empty() || cfg.fractions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("fractions must be non-empty and strictly ascending".into()));
    }
    if cfg.ensemble_size == 0 {
        return Err(Error::InvalidInput("ensemble size must be at least 1".into()));
    }
    cfg.train.validate()?;
    let mut rows = Vec::with_capacity(cfg.fractions.len());
    for &fraction in &cfg.fractions {
        let idx = subset_indices(pool.len(), fraction, cfg.subset_seed)?;
        let subset = pool.subset(&idx, &format!("learning-curve fraction {fraction}"))?;
        let mut members = Vec::with_capacity(cfg.ensemble_size);
        for m in 0..cfg.ensemble_size {
            let tc = TrainConfig {
                seed: cfg.train.seed.wrapping_add(m as u64),
                ..cfg.train.clone()
            };
            log::info!("fraction {fraction}: training member {} of {}", m + 1, cfg.ensemble_size);
            members.push(fit(&subset, &cfg.unet, &tc)?.0);
        }
        let member_reports = members
            .iter()
            .map(|m| evaluate(m, test))
            .collect::<Result<Vec<_>>>()?;
        let ensemble = evaluate_ensemble(&members, test)?;
        rows.push(LearningCurveRow {
            fraction,
            train_samples: subset.len(),
            single_rmse_nm: member_reports[0].rmse_nm,
            ensemble_rmse_nm: ensemble.rmse_nm,
            mean_member_mse: member_reports.iter().map(MetricsReport::mse).sum::<f64>() / members.len() as f64,
        });
    }
    Ok(rows)
}

/// Comma-separated learning-curve table with a header row.
pub fn learning_curve_csv(rows: &[LearningCurveRow]) -> String {
    let mut out = String::from("fraction,train_samples,single_rmse_nm,ensemble_rmse_nm,mean_member_mse_nm2\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.fraction, r.train_samples, r.single_rmse_nm, r.ensemble_rmse_nm, r.mean_member_mse
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(size: usize, v: f64) -> SurfaceGrid {
        SurfaceGrid::from_values(size, vec![v; size * size]).unwrap()
    }

    #[test]
    fn pooled_rmse_examples() {
        let z = constant(16, 0.0);
        assert_eq!(rmse_in_disc(std::slice::from_ref(&z), std::slice::from_ref(&z)).unwrap(), 0.0);
        assert!((rmse_in_disc(&[constant(16, 10.0)], std::slice::from_ref(&z)).unwrap() - 10.0).abs() < 1e-12);
        let r = rmse_in_disc(&[constant(16, 3.0), constant(16, -4.0)], &[z.clone(), z.clone()]).unwrap();
        assert!((r - (12.5f64).sqrt()).abs() < 1e-12);
        assert!(rmse_in_disc(std::slice::from_ref(&z), &[]).is_err());
        assert!(rmse_in_disc(std::slice::from_ref(&z), &[constant(8, 0.0)]).is_err());
    }

    #[test]
    fn median_conventions() {
        assert_eq!(median(&mut [1.0, 2.0, 100.0]), 2.0);
        assert_eq!(median(&mut [3.0, 1.0, 3.0, 1.0]), 2.0);
        let z = constant(16, 0.0);
        assert_eq!(median_abs_in_disc(&[constant(16, -5.0)], &[z]).unwrap(), 5.0);
    }

    #[test]
    fn out_of_disc_pixels_are_ignored() {
        let z = constant(16, 0.0);
        let disc = PixelMask::disc(16);
        let mut p = z.clone();
        for (v, &inside) in p.values_mut().iter_mut().zip(disc.bits()) {
            if !inside {
                *v = 1e6;
            }
        }
        assert_eq!(rmse_in_disc(&[p], &[z]).unwrap(), 0.0);
    }

    #[test]
    fn report_consistency_and_zero_baseline() {
        let truths: Vec<SurfaceGrid> = (0..3)
            .map(|s| SurfaceGrid::from_disc_fn(16, |x, y| (s as f64 + 1.0) * (x * 40.0 + y * 7.0)))
            .collect();
        let zeros = vec![constant(16, 0.0); 3];
        let r = MetricsReport::from_predictions(&zeros, &truths, "d", "m").unwrap();
        assert_eq!(r.rmse_nm, r.deviation_rmse_nm);
        assert_eq!(r.median_abs_nm, r.deviation_median_abs_nm);
        assert!((r.rmse_nm - rmse_in_disc(&zeros, &truths).unwrap()).abs() < 1e-12);
        let mean_sq = r.per_sample_rmse_nm.iter().map(|v| v * v).sum::<f64>() / 3.0;
        assert!((mean_sq - r.mse()).abs() < 1e-9 * r.mse());
    }

    #[test]
    fn report_round_trip_and_table() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let truths = vec![SurfaceGrid::from_disc_fn(16, |x, y| x * 0.1 + y / 3.0)];
        let preds = vec![constant(16, 0.25)];
        let r = MetricsReport::from_predictions(&preds, &truths, "abc", "def").unwrap();
        write_report(&r, &path).unwrap();
        assert_eq!(read_report(&path).unwrap(), r);
        let table = fs::read_to_string(dir.path().join("report.txt")).unwrap();
        assert!(table.lines().any(|l| l.starts_with("RMSE")));
        assert!(table.lines().any(|l| l.starts_with("Median")));
        assert!(table.contains("abc") && table.contains("def"));
    }

    #[test]
    fn heatmap_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.pgm");
        let g = SurfaceGrid::from_disc_fn(32, |x, y| 300.0 * x - 120.0 * y * y + 1.0 / 3.0);
        let s = emit_heatmap(&g, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5"));
        let back = read_heatmap(&path).unwrap();
        let bound = (s.max_nm - s.min_nm) / 65535.0;
        for (a, b) in g.values().iter().zip(back.values()) {
            assert!((a - b).abs() <= bound);
        }

        let c = constant(8, 7.5);
        let s = emit_heatmap(&c, &path).unwrap();
        assert_eq!(s.min_nm, s.max_nm);
        let bytes = fs::read(&path).unwrap();
        assert!(bytes[bytes.len() - 128..].iter().all(|&b| b == 0));
        assert_eq!(read_heatmap(&path).unwrap(), c);
    }

    #[test]
    fn subsets_are_seeded_nested_and_complete_at_one() {
        assert_eq!(subset_indices(10, 1.0, 3).unwrap(), (0..10).collect::<Vec<_>>());
        let a = subset_indices(100, 0.1, 3).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a, subset_indices(100, 0.1, 3).unwrap());
        let b = subset_indices(100, 0.5, 3).unwrap();
        assert!(a.iter().all(|i| b.contains(i)));
        assert!(subset_indices(10, 0.0, 0).is_err());
        assert!(subset_indices(10, 1.5, 0).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let rows = vec![LearningCurveRow {
            fraction: 0.5,
            train_samples: 10,
            single_rmse_nm: 2.0,
            ensemble_rmse_nm: 1.5,
            mean_member_mse: 4.5,
        }];
        let csv = learning_curve_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("fraction,"));
        assert_eq!(lines[1], "0.5,10,2,1.5,4.5");
    }
}
