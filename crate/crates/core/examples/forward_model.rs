//! Render both design topographies and push a difference topography
//! through the forward model, with and without an instrument disturbance.

use formnet::optics::{delta_opd_perfect, design_topography, ForwardModel};
use formnet::zernike::{synthesize_surface, ZernikeCoeffs};
use formnet::{Design, Disturbance, ForwardConfig, PixelMask};

fn main() -> formnet::Result<()> {
    let size = 64;
    for design in [Design::Freeform, Design::Asphere] {
        let cfg = ForwardConfig::for_design(design, size);
        let model = ForwardModel::new(&cfg)?;
        let topo = design_topography(design, size)?;
        let disc = PixelMask::disc(size);
        println!("{design}: {} channel(s), design RMS {:.0} nm", cfg.num_channels(), topo.rms_over(&disc));

        let delta = synthesize_surface(&ZernikeCoeffs::new(vec![(5, 200.0), (9, -80.0)])?, size)?;
        let dl = delta_opd_perfect(&delta, &cfg)?;
        let disturbance = Disturbance::sample(cfg.num_channels(), 10, 7);
        let mut specimen = topo.clone();
        specimen.add_scaled(&delta, 1.0);
        let perfect = model.forward_opd(&specimen)?;
        let disturbed = model.apply_disturbance(&perfect, &disturbance)?;

        for (k, support) in model.supports().iter().enumerate() {
            let rms = |v: &[f64]| (support.indices().iter().map(|&p| v[p] * v[p]).sum::<f64>() / support.count() as f64).sqrt();
            let shift: Vec<f64> = disturbed.channel(k).iter().zip(perfect.channel(k)).map(|(a, b)| a - b).collect();
            println!(
                "  channel {k}: {} px, dL RMS {:.1} nm, disturbance shifts L by {:.1} nm RMS",
                support.count(),
                rms(dl.channel(k)),
                rms(&shift)
            );
        }
    }
    Ok(())
}
