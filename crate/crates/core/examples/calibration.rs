//! Estimate an unknown instrument disturbance from spherical calibration
//! specimens and use it to build corrected network inputs.

use formnet::calib::{
    estimate_disturbance, generate_calibration_set, hybrid_delta_opd, uncalibrated_delta_opd, DEFAULT_AMPLITUDES,
};
use formnet::optics::{delta_opd_perfect, design_topography};
use formnet::zernike::{synthesize_surface, ZernikeCoeffs};
use formnet::{Design, Disturbance, ForwardConfig, OplField};

fn rms(a: &OplField, b: &OplField) -> f64 {
    let d: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
    (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt()
}

fn main() -> formnet::Result<()> {
    let cfg = ForwardConfig::for_design(Design::Asphere, 64);
    let truth = Disturbance::sample(cfg.num_channels(), 10, 2024);
    let cal = generate_calibration_set(&cfg, &truth, &DEFAULT_AMPLITUDES)?;
    let est = estimate_disturbance(&cal, &cfg, 10)?;

    println!("channel  gain true     gain est      worst offset error (nm)");
    for (k, (t, e)) in truth.channels.iter().zip(&est.disturbance.channels).enumerate() {
        let worst = t.offsets.iter().zip(&e.offsets).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("{k:7}  {:+.8}  {:+.8}  {worst:.2e}", t.gain, e.gain);
    }

    let delta = synthesize_surface(&ZernikeCoeffs::new(vec![(6, 300.0), (13, -120.0)])?, cfg.grid_size)?;
    let mut specimen = design_topography(cfg.design, cfg.grid_size)?;
    specimen.add_scaled(&delta, 1.0);
    let perfect = delta_opd_perfect(&delta, &cfg)?;
    let raw = uncalibrated_delta_opd(&specimen, &cfg, &truth)?;
    let hybrid = hybrid_delta_opd(&specimen, &cfg, &truth, &est)?;
    println!("input error without calibration: {:.3} nm RMS", rms(&raw, &perfect));
    println!("input error with calibration:    {:.2e} nm RMS", rms(&hybrid, &perfect));
    Ok(())
}
