//! Square pixel grids over the unit disc.
//!
//! Pixel `(col, row)` of an `M x M` grid has its center at
//! `x = (2 col + 1 - M) / M`, `y = (2 row + 1 - M) / M`. A pixel belongs to
//! the disc when its center satisfies `x^2 + y^2 <= 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest grid size accepted by the renderers and the forward model.
pub const MIN_GRID_SIZE: usize = 8;

/// Unit-disc coordinate of the center of pixel `index` on a grid of `size` pixels.
#[inline]
pub fn pixel_center(index: usize, size: usize) -> f64 {
    (2.0 * index as f64 + 1.0 - size as f64) / size as f64
}

/// Continuous pixel index of unit-disc coordinate `coord`; inverse of [`pixel_center`].
#[inline]
pub fn coord_to_index(coord: f64, size: usize) -> f64 {
    (coord * size as f64 + size as f64 - 1.0) / 2.0
}

#[inline]
pub fn in_disc(x: f64, y: f64) -> bool {
    x * x + y * y <= 1.0
}

pub(crate) fn check_grid_size(size: usize) -> Result<()> {
    if size < MIN_GRID_SIZE {
        return Err(Error::InvalidInput(format!(
            "grid size {size} is below the minimum of {MIN_GRID_SIZE}"
        )));
    }
    Ok(())
}

/// Boolean pixel mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelMask {
    size: usize,
    bits: Vec<bool>,
}

impl PixelMask {
    pub fn from_fn(size: usize, mut f: impl FnMut(f64, f64) -> bool) -> Self {
        let mut bits = Vec::with_capacity(size * size);
        for row in 0..size {
            let y = pixel_center(row, size);
            for col in 0..size {
                bits.push(f(pixel_center(col, size), y));
            }
        }
        Self { size, bits }
    }

    /// Pixels whose centers lie inside the unit disc.
    pub fn disc(size: usize) -> Self {
        Self::from_fn(size, in_disc)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.size + col]
    }

    pub fn intersect(&self, other: &PixelMask) -> PixelMask {
        assert_eq!(self.size, other.size, "mask sizes differ");
        PixelMask {
            size: self.size,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }

    /// Flat indices of set pixels in row-major order.
    pub fn indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }
}

/// `M x M` height map in nanometres, row-major `[row][col]`.
///
/// Houses design topographies, specimen topographies, and difference
/// topographies alike.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceGrid {
    size: usize,
    values: Vec<f64>,
}

impl SurfaceGrid {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            values: vec![0.0; size * size],
        }
    }

    pub fn from_values(size: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != size * size {
            return Err(Error::InvalidShape(format!(
                "{} values cannot fill a {size}x{size} grid",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite grid value {bad}")));
        }
        Ok(Self { size, values })
    }

    /// Builds a grid by evaluating `f(x, y)` at in-disc pixel centers; pixels
    /// outside the disc are exactly zero.
    pub fn from_disc_fn(size: usize, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut values = vec![0.0; size * size];
        for row in 0..size {
            let y = pixel_center(row, size);
            for col in 0..size {
                let x = pixel_center(col, size);
                if in_disc(x, y) {
                    values[row * size + col] = f(x, y);
                }
            }
        }
        Self { size, values }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.size + col]
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    /// Elementwise `self += factor * other`.
    pub fn add_scaled(&mut self, other: &SurfaceGrid, factor: f64) {
        assert_eq!(self.size, other.size, "grid sizes differ");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += factor * b;
        }
    }

    /// Sets every pixel outside `mask` to zero.
    pub fn apply_mask(&mut self, mask: &PixelMask) {
        for (v, &keep) in self.values.iter_mut().zip(mask.bits()) {
            if !keep {
                *v = 0.0;
            }
        }
    }

    /// Root mean square over the pixels selected by `mask`.
    pub fn rms_over(&self, mask: &PixelMask) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (v, &keep) in self.values.iter().zip(mask.bits()) {
            if keep {
                sum += v * v;
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            (sum / count as f64).sqrt()
        }
    }

    /// Bilinear sample at unit-disc coordinates; returns zero when the
    /// sample point leaves the disc, and treats pixels beyond the grid edge as zero.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        bilinear_stencil(x, y, self.size)
            .iter()
            .map(|&(i, w)| w * self.values[i])
            .sum()
    }
}

/// Flat pixel indices and weights of the bilinear interpolant at `(x, y)`.
///
/// Empty when the point lies outside the disc; taps that fall beyond the
/// grid edge are dropped, which is the same as reading zeros there.
pub fn bilinear_stencil(x: f64, y: f64, size: usize) -> Vec<(usize, f64)> {
    let mut taps = Vec::with_capacity(4);
    if !in_disc(x, y) {
        return taps;
    }
    let u = coord_to_index(x, size);
    let v = coord_to_index(y, size);
    let c0 = u.floor();
    let r0 = v.floor();
    let fu = u - c0;
    let fv = v - r0;
    let corners = [
        (r0, c0, (1.0 - fv) * (1.0 - fu)),
        (r0, c0 + 1.0, (1.0 - fv) * fu),
        (r0 + 1.0, c0, fv * (1.0 - fu)),
        (r0 + 1.0, c0 + 1.0, fv * fu),
    ];
    for (r, c, w) in corners {
        if w == 0.0 || r < 0.0 || c < 0.0 {
            continue;
        }
        let (r, c) = (r as usize, c as usize);
        if r < size && c < size {
            taps.push((r * size + c, w));
        }
    }
    taps
}
