//! Surrogate tilted-wave interferometer.
//!
//! Each channel observes the topography through a circular mask, sampled at
//! a sheared position, and converts height to optical path length with an
//! obliquity gain plus a quadratic term:
//!
//! ```text
//! L_k(x, y) = a_k T'(x, y) + beta T'(x, y)^2,   T'(x, y) = T(x - dx_k, y - dy_k)
//! a_k = 2 / cos(theta_k)
//! ```
//!
//! `T'` is bilinear and zero whenever the sample point leaves the disc.
//! Output pixels outside `mask_k` intersected with the disc are exactly zero.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{bilinear_stencil, check_grid_size, in_disc, PixelMask, SurfaceGrid};
use crate::io::{read_versioned_json, sha256_hex, write_versioned_json};
use crate::zernike::ZernikeBasis;

pub const FORWARD_CONFIG_FORMAT: &str = "formnet-forward-config";
pub const FORWARD_CONFIG_VERSION: u32 = 1;
pub const DISTURBANCE_FORMAT: &str = "formnet-disturbance";
pub const DISTURBANCE_VERSION: u32 = 1;

/// Quadratic path-length coefficient in 1/nm.
pub const DEFAULT_BETA: f64 = 5e-6;
/// Highest Noll index of the additive offset fields of a disturbance.
pub const DEFAULT_DISTURBANCE_ORDER: u32 = 10;
pub const DEFAULT_GRID_SIZE: usize = 64;

/// Physical radius of the unit disc in millimetres.
pub const APERTURE_RADIUS_MM: f64 = 10.0;
const NM_PER_MM: f64 = 1e6;

// Conic asphere: c = 0.01 / mm, kappa = -1.5, A4 = 1e-6 / mm^3.
const ASPHERE_CURVATURE: f64 = 0.01;
const ASPHERE_CONIC: f64 = -1.5;
const ASPHERE_A4: f64 = 1e-6;

/// Spherical caps of the multi-sphere freeform: center (unit coords), base
/// radius (unit coords), apex height (nm).
const FREEFORM_CAPS: [([f64; 2], f64, f64); 3] = [
    ([0.0, 0.0], 0.9, 3.0e4),
    ([0.5, 0.2], 0.35, 2.0e4),
    ([-0.4, -0.4], 0.4, 2.5e4),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    Asphere,
    Freeform,
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Design::Asphere => "asphere",
            Design::Freeform => "freeform",
        })
    }
}

impl FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "asphere" => Ok(Design::Asphere),
            "freeform" => Ok(Design::Freeform),
            other => Err(Error::InvalidInput(format!("unknown design `{other}`"))),
        }
    }
}

/// One illumination channel: shear of the sampled topography, obliquity
/// angle, and the circular mask of the illuminated patch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub shear: [f64; 2],
    /// Obliquity angle in radians.
    pub theta: f64,
    pub mask_center: [f64; 2],
    pub mask_radius: f64,
}

impl ChannelConfig {
    pub fn full_disc() -> Self {
        Self {
            shear: [0.0, 0.0],
            theta: 0.0,
            mask_center: [0.0, 0.0],
            mask_radius: 1.0,
        }
    }

    /// Obliquity gain `2 / cos(theta)`.
    pub fn gain(&self) -> f64 {
        2.0 / self.theta.cos()
    }

    /// Pixels inside both the channel mask and the disc.
    pub fn support(&self, size: usize) -> PixelMask {
        let [cx, cy] = self.mask_center;
        let r2 = self.mask_radius * self.mask_radius;
        PixelMask::from_fn(size, |x, y| {
            in_disc(x, y) && (x - cx).powi(2) + (y - cy).powi(2) <= r2
        })
    }

    fn validate(&self, k: usize) -> Result<()> {
        let finite = self.shear.iter().chain(&self.mask_center).all(|v| v.is_finite())
            && self.theta.is_finite()
            && self.mask_radius.is_finite();
        if !finite {
            return Err(Error::InvalidConfig(format!("channel {k}: non-finite parameter")));
        }
        if self.theta.abs() >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::InvalidConfig(format!(
                "channel {k}: |theta| = {} must be below pi/2",
                self.theta.abs()
            )));
        }
        if self.mask_radius <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "channel {k}: mask radius must be positive"
            )));
        }
        Ok(())
    }
}

/// Parameters of the surrogate interferometer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardConfig {
    pub grid_size: usize,
    /// Quadratic coefficient in 1/nm.
    pub beta: f64,
    pub design: Design,
    pub channels: Vec<ChannelConfig>,
}

impl ForwardConfig {
    /// Four-channel asphere setup: obliquities 0, 2, 4, 6 degrees; one
    /// full-disc channel and three off-axis patches.
    pub fn asphere(grid_size: usize) -> Self {
        let patch = |shear: [f64; 2], deg: f64, center: [f64; 2]| ChannelConfig {
            shear,
            theta: deg.to_radians(),
            mask_center: center,
            mask_radius: 0.45,
        };
        Self {
            grid_size,
            beta: DEFAULT_BETA,
            design: Design::Asphere,
            channels: vec![
                ChannelConfig::full_disc(),
                patch([0.15, 0.0], 2.0, [0.4, 0.4]),
                patch([0.0, 0.15], 4.0, [-0.4, 0.4]),
                patch([-0.15, -0.15], 6.0, [0.4, -0.4]),
            ],
        }
    }

    /// Single full-disc channel at normal incidence.
    pub fn freeform(grid_size: usize) -> Self {
        Self {
            grid_size,
            beta: DEFAULT_BETA,
            design: Design::Freeform,
            channels: vec![ChannelConfig::full_disc()],
        }
    }

    pub fn for_design(design: Design, grid_size: usize) -> Self {
        match design {
            Design::Asphere => Self::asphere(grid_size),
            Design::Freeform => Self::freeform(grid_size),
        }
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size < crate::grid::MIN_GRID_SIZE {
            return Err(Error::InvalidConfig(format!(
                "grid size {} is below {}",
                self.grid_size,
                crate::grid::MIN_GRID_SIZE
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("beta = {} must be >= 0", self.beta)));
        }
        if self.channels.is_empty() {
            return Err(Error::InvalidConfig("at least one channel is required".into()));
        }
        for (k, ch) in self.channels.iter().enumerate() {
            ch.validate(k)?;
        }
        Ok(())
    }

    /// Per-channel support masks (mask intersected with the disc).
    pub fn supports(&self) -> Vec<PixelMask> {
        self.channels.iter().map(|c| c.support(self.grid_size)).collect()
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_versioned_json(path, FORWARD_CONFIG_FORMAT, FORWARD_CONFIG_VERSION, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = read_versioned_json(path, FORWARD_CONFIG_FORMAT, FORWARD_CONFIG_VERSION)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-channel optical path length (difference) images in nm, channel-major
/// `[channel][row][col]`.
#[derive(Clone, Debug, PartialEq)]
pub struct OplField {
    size: usize,
    channels: usize,
    values: Vec<f64>,
}

impl OplField {
    pub fn zeros(channels: usize, size: usize) -> Self {
        Self {
            size,
            channels,
            values: vec![0.0; channels * size * size],
        }
    }

    pub fn from_values(channels: usize, size: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != channels * size * size {
            return Err(Error::InvalidShape(format!(
                "{} values cannot fill {channels} channels of {size}x{size}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite path length value".into()));
        }
        Ok(Self {
            size,
            channels,
            values,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn num_channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        let n = self.size * self.size;
        &self.values[k * n..(k + 1) * n]
    }

    pub fn channel_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.size * self.size;
        &mut self.values[k * n..(k + 1) * n]
    }

    /// Elementwise difference `self - other`.
    pub fn difference(&self, other: &OplField) -> Result<OplField> {
        if self.size != other.size || self.channels != other.channels {
            return Err(Error::InvalidShape("path length fields differ in shape".into()));
        }
        Ok(OplField {
            size: self.size,
            channels: self.channels,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }
}

/// Instrument error of a non-perfect interferometer: per-channel relative
/// gain error and additive Zernike offset fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    /// Highest Noll index of the offsets; offsets start at j = 2.
    pub order: u32,
    pub channels: Vec<ChannelDisturbance>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelDisturbance {
    pub gain: f64,
    /// Offset coefficient in nm for Noll j = 2 + i.
    pub offsets: Vec<f64>,
}

impl Disturbance {
    pub fn zero(channels: usize, order: u32) -> Self {
        let n = order.saturating_sub(1) as usize;
        Self {
            order,
            channels: vec![
                ChannelDisturbance {
                    gain: 0.0,
                    offsets: vec![0.0; n],
                };
                channels
            ],
        }
    }

    /// Seeded draw: gains uniform in (-0.02, 0.02), offsets uniform in
    /// (-100, 100) nm for j = 2..=order.
    pub fn sample(channels: usize, order: u32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = order.saturating_sub(1) as usize;
        Self {
            order,
            channels: (0..channels)
                .map(|_| ChannelDisturbance {
                    gain: rng.random_range(-0.02..0.02),
                    offsets: (0..n).map(|_| rng.random_range(-100.0..100.0)).collect(),
                })
                .collect(),
        }
    }

    /// Gains within (-0.5, 0.5) plus [`Disturbance::check_shape`].
    pub fn validate(&self, channels: usize) -> Result<()> {
        self.check_shape(channels)?;
        for (k, ch) in self.channels.iter().enumerate() {
            if !(ch.gain.abs() < 0.5) {
                return Err(Error::InvalidInput(format!(
                    "channel {k}: gain {} outside (-0.5, 0.5)",
                    ch.gain
                )));
            }
        }
        Ok(())
    }

    /// Channel count, offset count, and finiteness.
    pub fn check_shape(&self, channels: usize) -> Result<()> {
        if self.channels.len() != channels {
            return Err(Error::InvalidShape(format!(
                "disturbance has {} channels, configuration has {channels}",
                self.channels.len()
            )));
        }
        let n = self.order.saturating_sub(1) as usize;
        for (k, ch) in self.channels.iter().enumerate() {
            if ch.offsets.len() != n {
                return Err(Error::InvalidShape(format!(
                    "channel {k}: {} offsets for order {}",
                    ch.offsets.len(),
                    self.order
                )));
            }
            if !ch.gain.is_finite() || ch.offsets.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("channel {k}: non-finite parameter")));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_versioned_json(path, DISTURBANCE_FORMAT, DISTURBANCE_VERSION, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_versioned_json(path, DISTURBANCE_FORMAT, DISTURBANCE_VERSION)
    }
}

fn asphere_sag_nm(x: f64, y: f64) -> f64 {
    let r2 = (x * x + y * y) * APERTURE_RADIUS_MM * APERTURE_RADIUS_MM;
    let c = ASPHERE_CURVATURE;
    let conic = c * r2 / (1.0 + (1.0 - (1.0 + ASPHERE_CONIC) * c * c * r2).sqrt());
    (conic + ASPHERE_A4 * r2 * r2) * NM_PER_MM
}

fn caps_nm(x: f64, y: f64) -> f64 {
    let scale = APERTURE_RADIUS_MM * NM_PER_MM;
    FREEFORM_CAPS
        .iter()
        .map(|&([cx, cy], base, height)| {
            let rho2 = ((x - cx).powi(2) + (y - cy).powi(2)) * scale * scale;
            let base_nm = base * scale;
            if rho2 >= base_nm * base_nm {
                return 0.0;
            }
            let radius = (base_nm * base_nm + height * height) / (2.0 * height);
            height - rho2 / (radius + (radius * radius - rho2).sqrt())
        })
        .sum()
}

/// Design sag in nm on the in-disc pixels of an `M x M` grid.
///
/// The asphere is a conic with a fourth-order term over a 10 mm aperture; the
/// freeform is three overlapping spherical caps, offset so the sag vanishes
/// at the vertex.
pub fn design_topography(design: Design, size: usize) -> Result<SurfaceGrid> {
    check_grid_size(size)?;
    Ok(match design {
        Design::Asphere => SurfaceGrid::from_disc_fn(size, asphere_sag_nm),
        Design::Freeform => {
            let vertex = caps_nm(0.0, 0.0);
            SurfaceGrid::from_disc_fn(size, |x, y| caps_nm(x, y) - vertex)
        }
    })
}

/// Precomputed sampling geometry for one [`ForwardConfig`].
///
/// For every channel it holds the support pixels and the bilinear stencil of
/// their sheared sample points, plus the sheared design topography.
#[derive(Clone, Debug)]
pub struct ForwardModel {
    cfg: ForwardConfig,
    supports: Vec<PixelMask>,
    stencils: Vec<Vec<(usize, Vec<(usize, f64)>)>>,
    design_samples: Vec<Vec<f64>>,
}

impl ForwardModel {
    pub fn new(cfg: &ForwardConfig) -> Result<Self> {
        cfg.validate()?;
        let size = cfg.grid_size;
        let supports = cfg.supports();
        let stencils: Vec<_> = cfg
            .channels
            .iter()
            .zip(&supports)
            .map(|(ch, support)| {
                support
                    .indices()
                    .into_iter()
                    .map(|p| {
                        let (row, col) = (p / size, p % size);
                        let x = crate::grid::pixel_center(col, size) - ch.shear[0];
                        let y = crate::grid::pixel_center(row, size) - ch.shear[1];
                        (p, bilinear_stencil(x, y, size))
                    })
                    .collect()
            })
            .collect();
        let mut model = Self {
            cfg: cfg.clone(),
            supports,
            stencils,
            design_samples: Vec::new(),
        };
        let design = design_topography(cfg.design, size)?;
        model.design_samples = (0..cfg.num_channels())
            .map(|k| model.sheared(&design, k))
            .collect();
        Ok(model)
    }

    pub fn config(&self) -> &ForwardConfig {
        &self.cfg
    }

    pub fn supports(&self) -> &[PixelMask] {
        &self.supports
    }

    /// Sheared samples `T'` of channel `k`, one per support pixel.
    fn sheared(&self, grid: &SurfaceGrid, k: usize) -> Vec<f64> {
        let values = grid.values();
        self.stencils[k]
            .iter()
            .map(|(_, taps)| taps.iter().map(|&(i, w)| w * values[i]).sum())
            .collect()
    }

    fn check_grid(&self, grid: &SurfaceGrid) -> Result<()> {
        if grid.size() != self.cfg.grid_size {
            return Err(Error::InvalidInput(format!(
                "topography is {0}x{0}, configuration expects {1}x{1}",
                grid.size(),
                self.cfg.grid_size
            )));
        }
        Ok(())
    }

    pub fn forward_opd(&self, topo: &SurfaceGrid) -> Result<OplField> {
        self.check_grid(topo)?;
        let beta = self.cfg.beta;
        let mut out = OplField::zeros(self.cfg.num_channels(), self.cfg.grid_size);
        for (k, ch) in self.cfg.channels.iter().enumerate() {
            let a = ch.gain();
            let samples = self.sheared(topo, k);
            let dst = out.channel_mut(k);
            for ((p, _), t) in self.stencils[k].iter().zip(samples) {
                dst[*p] = a * t + beta * t * t;
            }
        }
        Ok(out)
    }

    /// `forward(T_d + dT) - forward(T_d)` evaluated pixelwise as
    /// `a dT' + beta (2 T_d' dT' + dT'^2)`.
    pub fn delta_opd(&self, delta: &SurfaceGrid) -> Result<OplField> {
        self.check_grid(delta)?;
        let beta = self.cfg.beta;
        let mut out = OplField::zeros(self.cfg.num_channels(), self.cfg.grid_size);
        for (k, ch) in self.cfg.channels.iter().enumerate() {
            let a = ch.gain();
            let samples = self.sheared(delta, k);
            let dst = out.channel_mut(k);
            for (((p, _), dt), td) in self.stencils[k]
                .iter()
                .zip(samples)
                .zip(&self.design_samples[k])
            {
                dst[*p] = a * dt + beta * (2.0 * td * dt + dt * dt);
            }
        }
        Ok(out)
    }

    pub fn apply_disturbance(&self, field: &OplField, d: &Disturbance) -> Result<OplField> {
        self.check_field(field)?;
        d.validate(self.cfg.num_channels())?;
        let mut out = field.clone();
        let basis = (d.order >= 2)
            .then(|| ZernikeBasis::new(2, d.order, self.cfg.grid_size))
            .transpose()?;
        for (k, dist) in d.channels.iter().enumerate() {
            let offsets = basis.as_ref().map(|b| b.combine(&dist.offsets));
            let dst = out.channel_mut(k);
            for p in self.supports[k].indices() {
                let offset = offsets.as_ref().map_or(0.0, |o| o.values()[p]);
                dst[p] = (1.0 + dist.gain) * dst[p] + offset;
            }
        }
        Ok(out)
    }

    fn check_field(&self, field: &OplField) -> Result<()> {
        if field.size() != self.cfg.grid_size || field.num_channels() != self.cfg.num_channels() {
            return Err(Error::InvalidShape(format!(
                "field has {} channels of {}x{}, configuration expects {} of {}x{}",
                field.num_channels(),
                field.size(),
                field.size(),
                self.cfg.num_channels(),
                self.cfg.grid_size,
                self.cfg.grid_size
            )));
        }
        Ok(())
    }
}

/// Optical path length differences of a topography under `cfg`.
pub fn forward_opd(topo: &SurfaceGrid, cfg: &ForwardConfig) -> Result<OplField> {
    ForwardModel::new(cfg)?.forward_opd(topo)
}

/// Applies gain errors and additive offsets inside each channel's support.
pub fn apply_disturbance(field: &OplField, d: &Disturbance, cfg: &ForwardConfig) -> Result<OplField> {
    ForwardModel::new(cfg)?.apply_disturbance(field, d)
}

/// `forward(T_d + dT) - forward(T_d)` for the design named in `cfg`.
pub fn delta_opd_perfect(delta: &SurfaceGrid, cfg: &ForwardConfig) -> Result<OplField> {
    ForwardModel::new(cfg)?.delta_opd(delta)
}
