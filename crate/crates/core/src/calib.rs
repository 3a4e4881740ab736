//! Calibration of the surrogate instrument from known spherical specimens,
//! and construction of network inputs for a disturbed instrument.
//!
//! The disturbed instrument is modelled per channel as
//! `measured = (1 + g) L_model + sum_j theta_j Z_j` on the channel support.
//! Measuring defocus caps of known amplitude makes this linear in
//! `(g, theta_2 .. theta_J)`; each channel is solved independently by QR.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SurfaceGrid;
use crate::io::{read_versioned_json, write_versioned_json};
use crate::linalg;
use crate::optics::{
    design_topography, ChannelDisturbance, Disturbance, ForwardConfig, ForwardModel, OplField,
};
use crate::zernike::ZernikeBasis;

pub const ESTIMATE_FORMAT: &str = "formnet-disturbance-estimate";
pub const ESTIMATE_VERSION: u32 = 1;

/// Default cap amplitudes in nm.
pub const DEFAULT_AMPLITUDES: [f64; 5] = [5e3, -5e3, 1e4, -1e4, 2e4];

/// Gains with `|1 + g|` below this cannot be divided out.
const MIN_GAIN_FACTOR: f64 = 1e-6;

/// A well-known specimen and what the (disturbed) instrument reports for it.
#[derive(Clone, Debug)]
pub struct CalibrationSpecimen {
    /// Cap amplitude `A` in nm; the topography is `A (x^2 + y^2)`.
    pub amplitude: f64,
    pub topo: SurfaceGrid,
    pub measured: OplField,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceEstimate {
    pub disturbance: Disturbance,
    /// Per-channel RMS of the least-squares residual in nm.
    pub residual_rms: Vec<f64>,
}

impl DisturbanceEstimate {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_versioned_json(path, ESTIMATE_FORMAT, ESTIMATE_VERSION, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_versioned_json(path, ESTIMATE_FORMAT, ESTIMATE_VERSION)
    }

    /// An estimate that is exactly the given disturbance.
    pub fn exact(d: &Disturbance) -> Self {
        Self {
            disturbance: d.clone(),
            residual_rms: vec![0.0; d.channels.len()],
        }
    }
}

/// Defocus cap `A (x^2 + y^2)` on the in-disc pixels.
pub fn cap_topography(amplitude: f64, size: usize) -> SurfaceGrid {
    SurfaceGrid::from_disc_fn(size, |x, y| amplitude * (x * x + y * y))
}

fn check_amplitudes(amplitudes: &[f64], cfg: &ForwardConfig) -> Result<()> {
    if amplitudes.iter().any(|a| !a.is_finite()) {
        return Err(Error::InvalidInput("non-finite cap amplitude".into()));
    }
    let mut mags: Vec<f64> = amplitudes.iter().map(|a| a.abs()).filter(|&a| a > 0.0).collect();
    mags.sort_by(f64::total_cmp);
    mags.dedup();
    if mags.len() < 2 {
        return Err(Error::Identifiability(format!(
            "need caps of at least two distinct non-zero magnitudes, got {amplitudes:?}"
        )));
    }
    if cfg.beta == 0.0 {
        let has_pair = amplitudes
            .iter()
            .any(|&a| a != 0.0 && amplitudes.iter().any(|&b| b == -a));
        if !has_pair {
            return Err(Error::Identifiability(
                "with beta = 0 the amplitudes must include a sign-flipped pair A, -A".into(),
            ));
        }
    }
    Ok(())
}

/// Measures one cap per amplitude with the disturbed instrument.
pub fn generate_calibration_set(
    cfg: &ForwardConfig,
    d: &Disturbance,
    amplitudes: &[f64],
) -> Result<Vec<CalibrationSpecimen>> {
    check_amplitudes(amplitudes, cfg)?;
    let model = ForwardModel::new(cfg)?;
    amplitudes
        .iter()
        .map(|&amplitude| {
            let topo = cap_topography(amplitude, cfg.grid_size);
            let measured = model.apply_disturbance(&model.forward_opd(&topo)?, d)?;
            Ok(CalibrationSpecimen {
                amplitude,
                topo,
                measured,
            })
        })
        .collect()
}

/// Per-channel least-squares estimate of gain and offsets up to Noll `order`.
pub fn estimate_disturbance(
    cal: &[CalibrationSpecimen],
    cfg: &ForwardConfig,
    order: u32,
) -> Result<DisturbanceEstimate> {
    if order == 0 {
        return Err(Error::InvalidIndex(0));
    }
    let amplitudes: Vec<f64> = cal.iter().map(|s| s.amplitude).collect();
    check_amplitudes(&amplitudes, cfg)?;
    let model = ForwardModel::new(cfg)?;
    let size = cfg.grid_size;
    let models = cal
        .iter()
        .map(|s| {
            if s.measured.num_channels() != cfg.num_channels() || s.measured.size() != size {
                return Err(Error::InvalidShape(
                    "calibration measurement does not match the configuration".into(),
                ));
            }
            model.forward_opd(&s.topo)
        })
        .collect::<Result<Vec<_>>>()?;
    let basis = (order >= 2)
        .then(|| ZernikeBasis::new(2, order, size))
        .transpose()?;
    let n_offsets = order as usize - 1;

    let solved: Vec<Result<(ChannelDisturbance, f64)>> = (0..cfg.num_channels())
        .into_par_iter()
        .map(|k| {
            let pixels = model.supports()[k].indices();
            let rows = pixels.len() * cal.len();
            let mut design = DMatrix::<f64>::zeros(rows, 1 + n_offsets);
            let mut rhs = DVector::<f64>::zeros(rows);
            for (s, (spec, l_model)) in cal.iter().zip(&models).enumerate() {
                let lm = l_model.channel(k);
                let meas = spec.measured.channel(k);
                for (i, &p) in pixels.iter().enumerate() {
                    let r = s * pixels.len() + i;
                    design[(r, 0)] = lm[p];
                    if let Some(b) = &basis {
                        for o in 0..n_offsets {
                            design[(r, 1 + o)] = b.mode(o).values()[p];
                        }
                    }
                    rhs[r] = meas[p] - lm[p];
                }
            }
            let sol = linalg::solve(design, &rhs)
                .map_err(|e| Error::Conditioning(format!("channel {k}: {e}")))?;
            Ok((
                ChannelDisturbance {
                    gain: sol.coeffs[0],
                    offsets: sol.coeffs[1..].to_vec(),
                },
                sol.residual_rms,
            ))
        })
        .collect();

    let mut channels = Vec::with_capacity(solved.len());
    let mut residual_rms = Vec::with_capacity(solved.len());
    for r in solved {
        let (ch, rms) = r?;
        channels.push(ch);
        residual_rms.push(rms);
    }
    Ok(DisturbanceEstimate {
        disturbance: Disturbance { order, channels },
        residual_rms,
    })
}

/// Builds network inputs from measurements of a disturbed instrument.
///
/// Holds the calibrated model's prediction for the design topography so
/// that many specimens can be processed cheaply.
#[derive(Clone, Debug)]
pub struct HybridInputs {
    model: ForwardModel,
    design_opd: OplField,
    gains: Vec<f64>,
    offsets: Vec<SurfaceGrid>,
}

impl HybridInputs {
    pub fn new(cfg: &ForwardConfig, est: &DisturbanceEstimate) -> Result<Self> {
        let model = ForwardModel::new(cfg)?;
        let d = &est.disturbance;
        d.check_shape(cfg.num_channels())?;
        for (k, ch) in d.channels.iter().enumerate() {
            let factor = 1.0 + ch.gain;
            if factor.abs() < MIN_GAIN_FACTOR {
                return Err(Error::DegenerateGain { channel: k, value: factor });
            }
        }
        let design_opd = model.forward_opd(&design_topography(cfg.design, cfg.grid_size)?)?;
        let basis = (d.order >= 2)
            .then(|| ZernikeBasis::new(2, d.order, cfg.grid_size))
            .transpose()?;
        let offsets = d
            .channels
            .iter()
            .map(|ch| match &basis {
                Some(b) => b.combine(&ch.offsets),
                None => SurfaceGrid::zeros(cfg.grid_size),
            })
            .collect();
        Ok(Self {
            model,
            design_opd,
            gains: d.channels.iter().map(|c| c.gain).collect(),
            offsets,
        })
    }

    /// `[measured - (1 + g) L_d - offsets] / (1 + g)` on each channel support.
    pub fn from_measurement(&self, measured: &OplField) -> Result<OplField> {
        let cfg = self.model.config();
        if measured.num_channels() != cfg.num_channels() || measured.size() != cfg.grid_size {
            return Err(Error::InvalidShape(
                "measurement does not match the configuration".into(),
            ));
        }
        let mut out = OplField::zeros(cfg.num_channels(), cfg.grid_size);
        for k in 0..cfg.num_channels() {
            let factor = 1.0 + self.gains[k];
            let meas = measured.channel(k);
            let ld = self.design_opd.channel(k);
            let off = self.offsets[k].values();
            let dst = out.channel_mut(k);
            for p in self.model.supports()[k].indices() {
                dst[p] = (meas[p] - factor * ld[p] - off[p]) / factor;
            }
        }
        Ok(out)
    }

    /// Simulates the disturbed measurement of `specimen` and converts it.
    pub fn from_specimen(&self, specimen: &SurfaceGrid, d_true: &Disturbance) -> Result<OplField> {
        let measured = self
            .model
            .apply_disturbance(&self.model.forward_opd(specimen)?, d_true)?;
        self.from_measurement(&measured)
    }
}

/// Hybrid network input for specimen `T_s` measured by the disturbed
/// instrument `d_true`, corrected with the calibration `est`.
pub fn hybrid_delta_opd(
    specimen: &SurfaceGrid,
    cfg: &ForwardConfig,
    d_true: &Disturbance,
    est: &DisturbanceEstimate,
) -> Result<OplField> {
    HybridInputs::new(cfg, est)?.from_specimen(specimen, d_true)
}

/// Network input when the disturbed measurement is compared against the
/// unperturbed model of the design: `disturbed(L_s) - L_d`.
pub fn uncalibrated_delta_opd(
    specimen: &SurfaceGrid,
    cfg: &ForwardConfig,
    d_true: &Disturbance,
) -> Result<OplField> {
    let zero = Disturbance::zero(cfg.num_channels(), d_true.order);
    HybridInputs::new(cfg, &DisturbanceEstimate::exact(&zero))?.from_specimen(specimen, d_true)
}
