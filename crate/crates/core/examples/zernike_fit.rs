//! Synthesize a surface from a few Zernike modes, fit it back, and check
//! the orthonormality of the basis on the grid.

use formnet::zernike::{fit_zernike, noll_to_nm, synthesize_surface, ZernikeBasis, ZernikeCoeffs};
use formnet::PixelMask;

fn main() -> formnet::Result<()> {
    let size = 128;
    let truth = ZernikeCoeffs::new(vec![(4, 150.0), (7, -60.0), (11, 35.0), (22, 10.0)])?;
    let surface = synthesize_surface(&truth, size)?;
    println!("surface RMS over disc: {:.3} nm", surface.rms_over(&PixelMask::disc(size)));

    let fitted = fit_zernike(&surface, 36)?;
    println!(" j  (n, m)   true nm   fitted nm");
    for &(j, c) in fitted.entries() {
        if c.abs() > 1e-6 || truth.get(j).is_some() {
            let (n, m) = noll_to_nm(j)?;
            println!("{j:2}  ({n}, {m:+})  {:9.3}  {c:10.4}", truth.get(j).unwrap_or(0.0));
        }
    }

    let basis = ZernikeBasis::new(1, 36, size)?;
    let disc = basis.mask().indices();
    let mut worst = 0.0f64;
    for a in 0..basis.len() {
        for b in 0..=a {
            let (za, zb) = (basis.mode(a).values(), basis.mode(b).values());
            let g = disc.iter().map(|&p| za[p] * zb[p]).sum::<f64>() / disc.len() as f64;
            let expected = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((g - expected).abs());
        }
    }
    println!("largest Gram deviation from identity (j <= 36, {size}x{size}): {worst:.2e}");
    Ok(())
}
