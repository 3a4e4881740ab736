use formnet::calib::{estimate_disturbance, generate_calibration_set, hybrid_delta_opd, DisturbanceEstimate, DEFAULT_AMPLITUDES};
use formnet::data::{split_indices, ChannelStats};
use formnet::evalrep::{median_abs_in_disc, rmse_in_disc, MetricsReport};
use formnet::net::{build_unet, unet_forward, Tensor, UNetConfig};
use formnet::optics::{delta_opd_perfect, design_topography, forward_opd, ForwardModel};
use formnet::zernike::{fit_zernike, nm_to_noll, noll_to_nm, render_basis, synthesize_surface, ZernikeCoeffs};
use formnet::{Design, Disturbance, ForwardConfig, PixelMask, SurfaceGrid};
use proptest::prelude::*;

fn coeffs(max_j: u32) -> impl Strategy<Value = ZernikeCoeffs> {
    prop::collection::vec(-300.0f64..300.0, (max_j - 1) as usize)
        .prop_map(|c| ZernikeCoeffs::new(c.into_iter().enumerate().map(|(i, v)| (i as u32 + 2, v)).collect()).unwrap())
}

fn design() -> impl Strategy<Value = Design> {
    prop_oneof![Just(Design::Freeform), Just(Design::Asphere)]
}

fn outside_disc_is_zero(g: &SurfaceGrid) -> bool {
    let disc = PixelMask::disc(g.size());
    g.values().iter().zip(disc.bits()).all(|(&v, &inside)| inside || v == 0.0)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn noll_index_round_trips(j in 1u32..=100) {
        let (n, m) = noll_to_nm(j).unwrap();
        prop_assert_eq!(nm_to_noll(n, m).unwrap(), j);
    }

    #[test]
    fn synthesis_and_fit_round_trip(c in coeffs(36)) {
        let g = synthesize_surface(&c, 64).unwrap();
        prop_assert!(outside_disc_is_zero(&g));
        let fitted = fit_zernike(&g, 36).unwrap();
        for &(j, v) in c.entries() {
            prop_assert!((fitted.get(j).unwrap_or(0.0) - v).abs() < 1e-6, "j = {}", j);
        }
    }

    #[test]
    fn rendered_modes_vanish_outside_disc(j in 1u32..=45, size in 8usize..40) {
        prop_assert!(outside_disc_is_zero(&render_basis(j, size).unwrap()));
    }

    #[test]
    fn forward_model_preserves_zero_and_masks(d in design()) {
        let cfg = ForwardConfig::for_design(d, 32);
        let zero = SurfaceGrid::zeros(32);
        prop_assert!(forward_opd(&zero, &cfg).unwrap().values().iter().all(|&v| v == 0.0));
        prop_assert!(delta_opd_perfect(&zero, &cfg).unwrap().values().iter().all(|&v| v == 0.0));
        let model = ForwardModel::new(&cfg).unwrap();
        let l = model.forward_opd(&design_topography(d, 32).unwrap()).unwrap();
        for (k, support) in model.supports().iter().enumerate() {
            let allowed = support.intersect(&PixelMask::disc(32));
            for (&v, &inside) in l.channel(k).iter().zip(allowed.bits()) {
                prop_assert!(inside || v == 0.0);
            }
        }
    }

    #[test]
    fn linear_law_superposes(d in design(), a in coeffs(15), b in coeffs(15)) {
        let mut cfg = ForwardConfig::for_design(d, 32);
        cfg.beta = 0.0;
        let (ga, gb) = (synthesize_surface(&a, 32).unwrap(), synthesize_surface(&b, 32).unwrap());
        let mut sum = ga.clone();
        sum.add_scaled(&gb, 1.0);
        let la = delta_opd_perfect(&ga, &cfg).unwrap();
        let lb = delta_opd_perfect(&gb, &cfg).unwrap();
        let ls = delta_opd_perfect(&sum, &cfg).unwrap();
        for ((x, y), s) in la.values().iter().zip(lb.values()).zip(ls.values()) {
            prop_assert!((x + y - s).abs() <= 1e-6 * (1.0 + s.abs()));
        }
    }

    #[test]
    fn forward_model_is_deterministic(d in design(), c in coeffs(10)) {
        let cfg = ForwardConfig::for_design(d, 32);
        let g = synthesize_surface(&c, 32).unwrap();
        prop_assert_eq!(delta_opd_perfect(&g, &cfg).unwrap(), delta_opd_perfect(&g, &cfg).unwrap());
    }

    #[test]
    fn calibration_recovers_disturbance(d in design(), seed in any::<u64>()) {
        let cfg = ForwardConfig::for_design(d, 32);
        let truth = Disturbance::sample(cfg.num_channels(), 10, seed);
        let cal = generate_calibration_set(&cfg, &truth, &DEFAULT_AMPLITUDES).unwrap();
        let est = estimate_disturbance(&cal, &cfg, 10).unwrap();
        for (t, e) in truth.channels.iter().zip(&est.disturbance.channels) {
            prop_assert!((t.gain - e.gain).abs() < 1e-6);
            for (a, b) in t.offsets.iter().zip(&e.offsets) {
                prop_assert!((a - b).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn calibration_residual_does_not_grow_with_order(seed in any::<u64>()) {
        let cfg = ForwardConfig::for_design(Design::Asphere, 32);
        let truth = Disturbance::sample(cfg.num_channels(), 15, seed);
        let cal = generate_calibration_set(&cfg, &truth, &DEFAULT_AMPLITUDES).unwrap();
        let mut previous: Option<Vec<f64>> = None;
        for order in [3, 6, 10, 15] {
            let r = estimate_disturbance(&cal, &cfg, order).unwrap().residual_rms;
            if let Some(p) = &previous {
                for (now, before) in r.iter().zip(p) {
                    prop_assert!(*now <= before + 1e-9);
                }
            }
            previous = Some(r);
        }
    }

    #[test]
    fn exact_estimates_cancel_the_disturbance(d in design(), c in coeffs(36), seed in any::<u64>()) {
        let cfg = ForwardConfig::for_design(d, 32);
        let truth = Disturbance::sample(cfg.num_channels(), 10, seed);
        let delta = synthesize_surface(&c, 32).unwrap();
        let mut specimen = design_topography(d, 32).unwrap();
        specimen.add_scaled(&delta, 1.0);
        let hybrid = hybrid_delta_opd(&specimen, &cfg, &truth, &DisturbanceEstimate::exact(&truth)).unwrap();
        let perfect = delta_opd_perfect(&delta, &cfg).unwrap();
        let n = perfect.values().len() as f64;
        let rms = (hybrid.values().iter().zip(perfect.values()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt();
        prop_assert!(rms < 1e-3, "rms {}", rms);
    }

    #[test]
    fn split_partitions_indices(n in 1usize..500, frac in 0.0f64..1.0, seed in any::<u64>()) {
        let n_test = (n as f64 * frac).round() as usize;
        let Ok((train, test)) = split_indices(n, frac, seed) else {
            // Only splits that would leave a side empty are refused.
            prop_assert!(frac == 0.0 || n_test == 0 || n_test == n);
            return Ok(());
        };
        prop_assert_eq!(test.len(), (n as f64 * frac).round() as usize);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn normalization_inverts(mean in -1e3f64..1e3, std in 1e-2f64..1e3, x in -1e4f32..1e4) {
        let c = ChannelStats { mean, std };
        let y = x.abs().max(1.0) * 0.1;
        let back = c.normalize(c.denormalize(y) as f32);
        prop_assert!((back - y).abs() <= 4.0 * f32::EPSILON * (1.0 + mean.abs() as f32 / std as f32) * y.abs().max(1.0));
    }

    #[test]
    fn unet_preserves_spatial_size(depth in 1usize..4, width in 1usize..4, mult in 1usize..3, k in 1usize..3) {
        let size = (1 << depth) * 2 * mult;
        let cfg = UNetConfig::new(size, k, depth, width);
        let p = build_unet::<f32>(&cfg, 1).unwrap();
        let y = unet_forward(&p, &Tensor::zeros([2, k, size, size])).unwrap();
        prop_assert_eq!(y.shape(), [2, 1, size, size]);
        prop_assert_eq!(p.layers().len(), 6 * depth + 3);
    }

    #[test]
    fn pooled_rmse_matches_per_sample_mean(errs in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 256), 1..5)) {
        let truths: Vec<SurfaceGrid> = errs.iter().map(|_| SurfaceGrid::zeros(16)).collect();
        let preds: Vec<SurfaceGrid> = errs.iter().map(|e| {
            let mut g = SurfaceGrid::from_values(16, e.clone()).unwrap();
            g.apply_mask(&PixelMask::disc(16));
            g
        }).collect();
        let r = MetricsReport::from_predictions(&preds, &truths, "d", "m").unwrap();
        let per_sample = r.per_sample_rmse_nm.iter().map(|v| v * v).sum::<f64>() / preds.len() as f64;
        prop_assert!((r.rmse_nm.powi(2) - per_sample).abs() <= 1e-9 * (1.0 + per_sample));
        prop_assert_eq!(r.rmse_nm, rmse_in_disc(&preds, &truths).unwrap());
        prop_assert_eq!(r.median_abs_nm, median_abs_in_disc(&preds, &truths).unwrap());
        // A zero predictor reproduces the deviation statistics.
        let z = MetricsReport::from_predictions(&truths, &preds, "d", "m").unwrap();
        prop_assert_eq!(z.rmse_nm, z.deviation_rmse_nm);
        prop_assert_eq!(z.median_abs_nm, z.deviation_median_abs_nm);
    }
}
