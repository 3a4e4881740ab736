//! Zernike polynomials on the unit disc in Noll ordering and normalization.
//!
//! | j | 1 | 2 | 3 | 4 | 5 | 6 | 7 | 8 | 9 | 10 | 11 |
//! |---|---|---|---|---|---|---|---|---|---|----|----|
//! | n | 0 | 1 | 1 | 2 | 2 | 2 | 3 | 3 | 3 | 3  | 4  |
//! | m | 0 | 1 |-1 | 0 |-2 | 2 |-1 | 1 |-3 | 3  | 0  |
//!
//! Positive `m` carries `cos(m phi)`, negative `m` carries `sin(|m| phi)`.
//! Even `j` pairs with the cosine term, odd `j` with the sine term. Every
//! mode has unit mean square over the disc.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_grid_size, PixelMask, SurfaceGrid};
use crate::linalg;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ZernikeIndex {
    j: u32,
    n: u32,
    m: i32,
}

impl ZernikeIndex {
    pub fn from_noll(j: i64) -> Result<Self> {
        if j < 1 || j > u32::MAX as i64 {
            return Err(Error::InvalidIndex(j));
        }
        let (n, m) = noll_to_nm(j as u32)?;
        Ok(Self { j: j as u32, n, m })
    }

    pub fn from_nm(n: u32, m: i32) -> Result<Self> {
        let j = nm_to_noll(n, m)?;
        Ok(Self { j, n, m })
    }

    pub fn noll(&self) -> u32 {
        self.j
    }

    pub fn radial_order(&self) -> u32 {
        self.n
    }

    pub fn azimuthal_order(&self) -> i32 {
        self.m
    }
}

/// Radial and azimuthal orders of Noll index `j`.
pub fn noll_to_nm(j: u32) -> Result<(u32, i32)> {
    if j == 0 {
        return Err(Error::InvalidIndex(0));
    }
    // Order n holds indices n(n+1)/2 + 1 ..= (n+1)(n+2)/2.
    let mut n = 0u64;
    while (n + 1) * (n + 2) / 2 < j as u64 {
        n += 1;
    }
    let pos = j as u64 - n * (n + 1) / 2 - 1;
    let abs_m = if n.is_multiple_of(2) {
        2 * pos.div_ceil(2)
    } else {
        2 * (pos / 2) + 1
    };
    let m = if abs_m == 0 {
        0
    } else if j.is_multiple_of(2) {
        abs_m as i32
    } else {
        -(abs_m as i32)
    };
    Ok((n as u32, m))
}

/// Noll index of the mode with orders `(n, m)`.
pub fn nm_to_noll(n: u32, m: i32) -> Result<u32> {
    let abs_m = m.unsigned_abs();
    if abs_m > n || !(n - abs_m).is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "(n={n}, m={m}) is not a Zernike mode"
        )));
    }
    let base = n * (n + 1) / 2 + 1;
    if abs_m == 0 {
        return Ok(base);
    }
    // The pair for |m| sits at positions |m|-1 and |m| within the order.
    let candidates = [base + abs_m - 1, base + abs_m];
    let want_even = m > 0;
    Ok(candidates
        .into_iter()
        .find(|j| (j % 2 == 0) == want_even)
        .expect("one of two consecutive integers is even"))
}

fn factorial(k: u32) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * i as f64)
}

fn radial(n: u32, abs_m: u32, r: f64) -> f64 {
    let half_diff = (n - abs_m) / 2;
    let half_sum = (n + abs_m) / 2;
    (0..=half_diff)
        .map(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * factorial(n - k)
                / (factorial(k) * factorial(half_sum - k) * factorial(half_diff - k))
                * r.powi((n - 2 * k) as i32)
        })
        .sum()
}

/// Noll-normalized Zernike value at polar coordinates `(r, phi)`.
pub fn eval_zernike(idx: ZernikeIndex, r: f64, phi: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Domain(r));
    }
    Ok(eval_unchecked(idx, r, phi))
}

fn eval_unchecked(idx: ZernikeIndex, r: f64, phi: f64) -> f64 {
    let abs_m = idx.m.unsigned_abs();
    let radial = radial(idx.n, abs_m, r);
    let order = (idx.n + 1) as f64;
    match idx.m {
        0 => order.sqrt() * radial,
        m if m > 0 => (2.0 * order).sqrt() * radial * (abs_m as f64 * phi).cos(),
        _ => (2.0 * order).sqrt() * radial * (abs_m as f64 * phi).sin(),
    }
}

/// Evaluates mode `j` at Cartesian unit-disc coordinates. Points on the
/// boundary may carry a radius a few ulps above one; they are clamped.
pub(crate) fn eval_xy(idx: ZernikeIndex, x: f64, y: f64) -> f64 {
    let r = (x * x + y * y).sqrt().min(1.0);
    eval_unchecked(idx, r, y.atan2(x))
}

/// Renders mode `j` at in-disc pixel centers of an `M x M` grid.
pub fn render_basis(j: u32, size: usize) -> Result<SurfaceGrid> {
    check_grid_size(size)?;
    let idx = ZernikeIndex::from_noll(j as i64)?;
    Ok(SurfaceGrid::from_disc_fn(size, |x, y| eval_xy(idx, x, y)))
}

/// Sparse set of Zernike coefficients in nanometres keyed by Noll index.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ZernikeCoeffs {
    entries: Vec<(u32, f64)>,
}

impl ZernikeCoeffs {
    pub fn new(entries: Vec<(u32, f64)>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for &(j, c) in &entries {
            if j == 0 {
                return Err(Error::InvalidIndex(0));
            }
            if !seen.insert(j) {
                return Err(Error::InvalidInput(format!("duplicate Noll index {j}")));
            }
            if !c.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "non-finite coefficient {c} for Noll index {j}"
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn get(&self, j: u32) -> Option<f64> {
        self.entries.iter().find(|e| e.0 == j).map(|e| e.1)
    }

    pub fn max_index(&self) -> u32 {
        self.entries.iter().map(|e| e.0).max().unwrap_or(0)
    }
}

/// `sum_j c_j Z_j` rendered on an `M x M` grid, zero outside the disc.
pub fn synthesize_surface(coeffs: &ZernikeCoeffs, size: usize) -> Result<SurfaceGrid> {
    check_grid_size(size)?;
    // Entries are validated on construction, but the struct is deserializable.
    let coeffs = ZernikeCoeffs::new(coeffs.entries.clone())?;
    let mut out = SurfaceGrid::zeros(size);
    for &(j, c) in coeffs.entries() {
        out.add_scaled(&render_basis(j, size)?, c);
    }
    Ok(out)
}

/// Least-squares Zernike coefficients `j = 1..=j_max` of a grid, using
/// in-disc pixels only.
pub fn fit_zernike(grid: &SurfaceGrid, j_max: u32) -> Result<ZernikeCoeffs> {
    if j_max == 0 {
        return Err(Error::InvalidIndex(0));
    }
    check_grid_size(grid.size())?;
    let basis = ZernikeBasis::new(1, j_max, grid.size())?;
    let pixels = basis.mask().indices();
    let design = DMatrix::from_fn(pixels.len(), j_max as usize, |r, c| {
        basis.mode(c).values()[pixels[r]]
    });
    let rhs = DVector::from_iterator(pixels.len(), pixels.iter().map(|&p| grid.values()[p]));
    let sol = linalg::solve(design, &rhs).map_err(|e| {
        Error::Conditioning(format!(
            "Zernike fit up to j={j_max} on a {0}x{0} grid: {e}",
            grid.size()
        ))
    })?;
    ZernikeCoeffs::new((1..=j_max).zip(sol.coeffs).collect())
}

/// Pre-rendered consecutive Noll modes `first..=last` on one grid size.
#[derive(Clone, Debug)]
pub struct ZernikeBasis {
    first: u32,
    size: usize,
    modes: Vec<SurfaceGrid>,
    mask: PixelMask,
}

impl ZernikeBasis {
    pub fn new(first: u32, last: u32, size: usize) -> Result<Self> {
        check_grid_size(size)?;
        if first == 0 || last < first {
            return Err(Error::InvalidInput(format!(
                "invalid Noll range {first}..={last}"
            )));
        }
        let modes = (first..=last)
            .map(|j| render_basis(j, size))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            first,
            size,
            modes,
            mask: PixelMask::disc(size),
        })
    }

    pub fn first(&self) -> u32 {
        self.first
    }

    pub fn last(&self) -> u32 {
        self.first + self.modes.len() as u32 - 1
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn mask(&self) -> &PixelMask {
        &self.mask
    }

    /// The `offset`-th mode, i.e. Noll index `first + offset`.
    pub fn mode(&self, offset: usize) -> &SurfaceGrid {
        &self.modes[offset]
    }

    /// Mode with Noll index `j`, if the basis covers it.
    pub fn noll(&self, j: u32) -> Option<&SurfaceGrid> {
        j.checked_sub(self.first)
            .and_then(|o| self.modes.get(o as usize))
    }

    /// Weighted sum of consecutive modes starting at `first`.
    pub fn combine(&self, weights: &[f64]) -> SurfaceGrid {
        assert!(weights.len() <= self.modes.len(), "too many weights");
        let mut out = SurfaceGrid::zeros(self.size);
        for (w, mode) in weights.iter().zip(&self.modes) {
            if *w != 0.0 {
                out.add_scaled(mode, *w);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn noll_examples() {
        assert_eq!(noll_to_nm(1).unwrap(), (0, 0));
        assert_eq!(noll_to_nm(4).unwrap(), (2, 0));
        assert_eq!(noll_to_nm(11).unwrap(), (4, 0));
        assert!(ZernikeIndex::from_noll(0).is_err());
        assert!(ZernikeIndex::from_noll(-3).is_err());
    }

    /// Enumerates the Noll table order by order, independently of the
    /// closed-form position arithmetic in `noll_to_nm`.
    fn enumerate_noll(max_j: u32) -> Vec<(u32, i32)> {
        let mut out = Vec::new();
        let mut n = 0u32;
        while (out.len() as u32) < max_j {
            let mut j = n * (n + 1) / 2 + 1;
            let abs_ms: Vec<u32> = (0..=n).filter(|m| (n - m).is_multiple_of(2)).collect();
            for abs_m in abs_ms {
                if abs_m == 0 {
                    out.push((n, 0));
                    j += 1;
                } else {
                    for _ in 0..2 {
                        let m = if j.is_multiple_of(2) { abs_m as i32 } else { -(abs_m as i32) };
                        out.push((n, m));
                        j += 1;
                    }
                }
            }
            n += 1;
        }
        out.truncate(max_j as usize);
        out
    }

    #[test]
    fn noll_matches_enumeration_and_inverts() {
        let table = enumerate_noll(100);
        for (i, &(n, m)) in table.iter().enumerate() {
            let j = i as u32 + 1;
            assert_eq!(noll_to_nm(j).unwrap(), (n, m), "j={j}");
            assert_eq!(nm_to_noll(n, m).unwrap(), j);
        }
        assert!(nm_to_noll(3, 0).is_err());
        assert!(nm_to_noll(2, 4).is_err());
    }

    #[test]
    fn analytic_values() {
        let piston = ZernikeIndex::from_noll(1).unwrap();
        for &(r, phi) in &[(0.0, 0.0), (0.3, 1.0), (1.0, -2.0)] {
            assert_eq!(eval_zernike(piston, r, phi).unwrap(), 1.0);
        }
        let defocus = ZernikeIndex::from_noll(4).unwrap();
        for phi in [0.0, 0.7, 3.0] {
            let v = eval_zernike(defocus, 1.0, phi).unwrap();
            assert!((v - 3f64.sqrt()).abs() < 1e-12);
        }
        let spherical = ZernikeIndex::from_noll(11).unwrap();
        let r: f64 = 0.6;
        let expect = 5f64.sqrt() * (6.0 * r.powi(4) - 6.0 * r * r + 1.0);
        assert!((eval_zernike(spherical, r, 0.2).unwrap() - expect).abs() < 1e-12);
        assert!(eval_zernike(defocus, 1.01, 0.0).is_err());
        assert!(eval_zernike(defocus, -0.1, 0.0).is_err());
    }

    #[test]
    fn continuous_orthonormality_low_orders() {
        // Polar midpoint quadrature, independent of the pixel lattice.
        let nr = 200;
        let nphi = 256;
        for a in 1..=10u32 {
            for b in a..=10u32 {
                let za = ZernikeIndex::from_noll(a as i64).unwrap();
                let zb = ZernikeIndex::from_noll(b as i64).unwrap();
                let mut acc = 0.0;
                for ir in 0..nr {
                    let r = (ir as f64 + 0.5) / nr as f64;
                    for ip in 0..nphi {
                        let phi = 2.0 * PI * (ip as f64 + 0.5) / nphi as f64;
                        acc += eval_zernike(za, r, phi).unwrap()
                            * eval_zernike(zb, r, phi).unwrap()
                            * r;
                    }
                }
                let inner = acc * (1.0 / nr as f64) * (2.0 * PI / nphi as f64) / PI;
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((inner - expect).abs() < 1e-3, "({a},{b}) -> {inner}");
            }
        }
    }

    #[test]
    fn rendered_defocus_center_and_symmetry() {
        let g = render_basis(4, 64).unwrap();
        for (row, col) in [(31, 31), (31, 32), (32, 31), (32, 32)] {
            assert!((g.get(row, col) + 3f64.sqrt()).abs() < 2e-3);
        }
        // 90 degree rotation of the lattice: (row, col) -> (col, M-1-row).
        for row in 0..64 {
            for col in 0..64 {
                let rotated = g.get(col, 63 - row);
                assert!((g.get(row, col) - rotated).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rendered_modes_vanish_outside_disc() {
        let mask = PixelMask::disc(32);
        for j in 1..=20 {
            let g = render_basis(j, 32).unwrap();
            for (v, &inside) in g.values().iter().zip(mask.bits()) {
                if !inside {
                    assert_eq!(*v, 0.0);
                }
            }
        }
        assert!(render_basis(4, 7).is_err());
    }

    #[test]
    fn synthesis_is_linear() {
        assert!(synthesize_surface(&ZernikeCoeffs::empty(), 16)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));
        let single = synthesize_surface(&ZernikeCoeffs::new(vec![(4, 100.0)]).unwrap(), 32).unwrap();
        let basis = render_basis(4, 32).unwrap();
        for (s, b) in single.values().iter().zip(basis.values()) {
            assert_eq!(*s, 100.0 * b);
        }
        let a = synthesize_surface(&ZernikeCoeffs::new(vec![(4, 37.0)]).unwrap(), 32).unwrap();
        let b = synthesize_surface(&ZernikeCoeffs::new(vec![(5, -12.5)]).unwrap(), 32).unwrap();
        let ab = synthesize_surface(&ZernikeCoeffs::new(vec![(4, 37.0), (5, -12.5)]).unwrap(), 32)
            .unwrap();
        for i in 0..ab.values().len() {
            assert!((ab.values()[i] - a.values()[i] - b.values()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn coefficient_validation() {
        assert!(ZernikeCoeffs::new(vec![(4, f64::NAN)]).is_err());
        assert!(ZernikeCoeffs::new(vec![(4, 1.0), (4, 2.0)]).is_err());
        assert!(ZernikeCoeffs::new(vec![(0, 1.0)]).is_err());
    }

    #[test]
    fn fit_edge_cases() {
        let zero = fit_zernike(&SurfaceGrid::zeros(32), 10).unwrap();
        assert!(zero.entries().iter().all(|e| e.1.abs() < 1e-12));
        assert_eq!(zero.entries().len(), 10);
        // 8x8 has 52 in-disc pixels: 66 modes cannot be determined.
        assert!(matches!(
            fit_zernike(&SurfaceGrid::zeros(8), 66),
            Err(Error::Conditioning(_))
        ));
        assert!(fit_zernike(&SurfaceGrid::zeros(8), 0).is_err());
    }

    #[test]
    fn fit_leaves_residual_for_unmodeled_mode() {
        let j_max = 10;
        let grid = render_basis(j_max + 1, 64).unwrap();
        let coeffs = fit_zernike(&grid, j_max).unwrap();
        let fitted = synthesize_surface(&coeffs, 64).unwrap();
        let mut residual = grid.clone();
        residual.add_scaled(&fitted, -1.0);
        let rms = residual.rms_over(&PixelMask::disc(64));
        assert!(rms > 0.9, "{rms}");
        // Near orthogonality: the projection onto lower modes is small.
        assert!(coeffs.entries().iter().all(|e| e.1.abs() < 0.05));
    }
}
