use super::*;
use crate::flow::FlowField;
use crate::synth::{self, SynthConfig, WarpKind};
use crate::weight::WeightMap;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn small_texture(width: usize, height: usize, channels: usize, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = Raster::new(width, height, channels).unwrap();
    for v in r.data_mut() {
        *v = 0.5 + 0.4 * (rng.random::<f64>() - 0.5);
    }
    crate::pyramid::gaussian_blur(&r, 0.8)
}

fn pair_from_synth<'a>(
    p: &'a crate::synth::SynthPair,
    lambda: &'a WeightMap,
) -> LevelPair<'a> {
    LevelPair {
        vis1: &p.frame1.visible,
        nir1: p.frame1.nir.as_ref(),
        vis2: &p.frame2.visible,
        nir2: p.frame2.nir.as_ref(),
        lambda,
    }
}

mod warping {
    use super::*;

    #[test]
    fn zero_flow_is_identity() {
        let r = small_texture(12, 9, 2, 3);
        let flow = FlowField::new(12, 9);
        let (warped, _) = warp_image(&r, &flow).unwrap();
        assert_eq!(warped.data(), r.data(), "integer-node sampling is exact");
    }

    #[test]
    fn unit_shift_on_column_ramp() {
        // I(x, y) = x / 10, flow (1, 0): warped column c equals (c+1)/10.
        let mut r = Raster::new(10, 6, 1).unwrap();
        for y in 0..6 {
            for x in 0..10 {
                r.set(x, y, 0, x as f64 / 10.0);
            }
        }
        let mut flow = FlowField::new(10, 6);
        for y in 0..6 {
            for x in 0..10 {
                flow.set(x, y, 1.0, 0.0);
            }
        }
        let (warped, _) = warp_image(&r, &flow).unwrap();
        for y in 1..5 {
            for x in 1..8 {
                assert!(
                    (warped.get(x, y, 0) - (x + 1) as f64 / 10.0).abs() < 1e-12,
                    "column {x}"
                );
            }
        }
    }

    #[test]
    fn flow_leaving_image_masks_everything() {
        let r = small_texture(8, 8, 1, 5);
        let mut flow = FlowField::new(8, 8);
        for y in 0..8 {
            for x in 0..8 {
                flow.set(x, y, 100.0, 100.0);
            }
        }
        let (_, mask) = warp_image(&r, &flow).unwrap();
        assert!(mask.iter().all(|&m| m));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let r = small_texture(8, 8, 1, 5);
        let flow = FlowField::new(9, 8);
        assert!(matches!(
            warp_image(&r, &flow),
            Err(SolverError::DimensionMismatch(..))
        ));
    }
}

mod energy {
    use super::*;

    #[test]
    fn identical_frames_zero_flow_gives_phi_zero_everywhere() {
        let vis = small_texture(7, 5, 3, 11);
        let nir = small_texture(7, 5, 1, 12);
        let lambda = WeightMap::constant(7, 5, 0.5);
        let pair = LevelPair {
            vis1: &vis,
            nir1: Some(&nir),
            vis2: &vis,
            nir2: Some(&nir),
            lambda: &lambda,
        };
        let params = SolverParams::default();
        let n = (7 * 5) as f64;
        let eps = params.epsilon;
        let e = evaluate_energy_uv(&pair, &[0.0; 35], &[0.0; 35], &params).unwrap();
        assert!((e.e_visible - n * (1.0 + params.theta) * eps).abs() < 1e-12);
        assert!((e.e_nir - n * eps).abs() < 1e-12);
        assert!((e.e_smooth - n * eps).abs() < 1e-12);
    }

    #[test]
    fn single_pixel_difference_hand_computed() {
        // 2x2 image, one pixel differs by d; theta = 0, lambda = 0, gamma = 0.
        let d = 0.2;
        let i1 = Raster::constant(2, 2, 1, 0.5);
        let mut i2 = i1.clone();
        i2.set(1, 0, 0, 0.5 + d);
        let lambda = WeightMap::constant(2, 2, 0.0);
        let pair = LevelPair {
            vis1: &i1,
            nir1: None,
            vis2: &i2,
            nir2: None,
            lambda: &lambda,
        };
        let params = SolverParams {
            theta: 0.0,
            gamma: 0.0,
            ..SolverParams::default()
        };
        let eps = params.epsilon;
        let e = evaluate_energy_uv(&pair, &[0.0; 4], &[0.0; 4], &params).unwrap();
        let expected = (d * d + eps * eps).sqrt() + 3.0 * eps;
        assert!((e.e_total - expected).abs() < 1e-12, "{} vs {expected}", e.e_total);
        assert!((e.e_visible - expected).abs() < 1e-12);
    }

    #[test]
    fn total_is_weighted_sum_for_constant_lambda() {
        let p = synth::generate(&SynthConfig {
            width: 40,
            height: 36,
            warp: WarpKind::Translation { dx: 0.8, dy: -0.4 },
            ..Default::default()
        })
        .unwrap();
        let lambda = WeightMap::constant(40, 36, 0.3);
        let pair = pair_from_synth(&p, &lambda);
        let params = SolverParams::default();
        let n = 40 * 36;
        let e = evaluate_energy_uv(&pair, &vec![0.1; n], &vec![-0.2; n], &params).unwrap();
        let combined = 0.7 * e.e_visible + 0.3 * e.e_nir + params.gamma * e.e_smooth;
        assert!(
            (e.e_total - combined).abs() <= 1e-9 * e.e_total.abs(),
            "{} vs {combined}",
            e.e_total
        );
        assert!(e.e_total >= 0.0 && e.e_visible >= 0.0 && e.e_nir >= 0.0 && e.e_smooth >= 0.0);
    }
}

mod linearization {
    use super::*;

    /// Analytic first derivatives of e_visible / e_nir with respect to the
    /// per-pixel flow components, reconstructed from the linearization.
    fn analytic_gradients(
        lin: &Linearization,
        params: &SolverParams,
        i: usize,
    ) -> (f64, f64, f64, f64) {
        let ch = lin.channels;
        let mut rv = 0.0;
        let mut rg = 0.0;
        for c in 0..ch {
            let k = i * ch + c;
            rv += lin.iz[k] * lin.iz[k];
            rg += lin.ixz[k] * lin.ixz[k] + lin.iyz[k] * lin.iyz[k];
        }
        let pv = phi_prime(rv, params.epsilon);
        let pg = phi_prime(rg, params.epsilon);
        let mut dvu = 0.0;
        let mut dvv = 0.0;
        for c in 0..ch {
            let k = i * ch + c;
            dvu += 2.0 * pv * lin.iz[k] * lin.ix[k]
                + params.theta
                    * 2.0
                    * pg
                    * (lin.ixz[k] * lin.ixx[k] + lin.iyz[k] * lin.iyx[k]);
            dvv += 2.0 * pv * lin.iz[k] * lin.iy[k]
                + params.theta
                    * 2.0
                    * pg
                    * (lin.ixz[k] * lin.ixy[k] + lin.iyz[k] * lin.iyy[k]);
        }
        let pn = phi_prime(lin.nz[i] * lin.nz[i], params.epsilon);
        let dnu = 2.0 * pn * lin.nz[i] * lin.nx[i];
        let dnv = 2.0 * pn * lin.nz[i] * lin.ny[i];
        (dvu, dvv, dnu, dnv)
    }

    #[test]
    fn data_coefficients_match_finite_differences() {
        let p = synth::generate(&SynthConfig {
            width: 40,
            height: 32,
            warp: WarpKind::Translation { dx: 1.2, dy: 0.6 },
            ..Default::default()
        })
        .unwrap();
        let lambda = WeightMap::constant(40, 32, 0.5);
        let pair = pair_from_synth(&p, &lambda);
        let params = SolverParams::default();
        let n = 40 * 32;
        let u = vec![0.37; n];
        let v = vec![-0.21; n];
        let lin = linearize(&pair, &u, &v).unwrap();

        let h = 1e-4;
        let mut checked = 0;
        for &(px, py) in &[(5, 5), (16, 12), (25, 17), (9, 18), (32, 24)] {
            let i = py * 40 + px;
            let (dvu, dvv, dnu, dnv) = analytic_gradients(&lin, &params, i);
            for (axis, analytic_vis, analytic_nir) in [(0, dvu, dnu), (1, dvv, dnv)] {
                let mut plus_u = u.clone();
                let mut plus_v = v.clone();
                let mut minus_u = u.clone();
                let mut minus_v = v.clone();
                if axis == 0 {
                    plus_u[i] += h;
                    minus_u[i] -= h;
                } else {
                    plus_v[i] += h;
                    minus_v[i] -= h;
                }
                let ep = evaluate_energy_uv(&pair, &plus_u, &plus_v, &params).unwrap();
                let em = evaluate_energy_uv(&pair, &minus_u, &minus_v, &params).unwrap();
                let fd_vis = (ep.e_visible - em.e_visible) / (2.0 * h);
                let fd_nir = (ep.e_nir - em.e_nir) / (2.0 * h);
                for (analytic, fd) in [(analytic_vis, fd_vis), (analytic_nir, fd_nir)] {
                    let scale = analytic.abs().max(fd.abs());
                    if scale > 1e-4 {
                        assert!(
                            (analytic - fd).abs() <= 1e-3 * scale,
                            "pixel ({px},{py}) axis {axis}: analytic {analytic} vs fd {fd}"
                        );
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked >= 10, "most probes should carry signal, got {checked}");
    }

    /// Row-reducing oracle, independent of the SOR path.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&r, &s| a[r][col].abs().partial_cmp(&a[s][col].abs()).unwrap())
                .unwrap();
            a.swap(col, pivot);
            b.swap(col, pivot);
            let d = a[col][col];
            assert!(d.abs() > 1e-14, "singular system");
            for row in col + 1..n {
                let f = a[row][col] / d;
                if f != 0.0 {
                    for k in col..n {
                        a[row][k] -= f * a[col][k];
                    }
                    b[row] -= f * b[col];
                }
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let mut s = b[row];
            for k in row + 1..n {
                s -= a[row][k] * x[k];
            }
            x[row] = s / a[row][row];
        }
        x
    }

    fn wavy(w: usize, h: usize, f1: (f64, f64), f2: (f64, f64), p: f64) -> Raster {
        let mut r = Raster::new(w, h, 1).unwrap();
        for y in 0..h {
            for x in 0..w {
                let v = 0.5
                    + 0.22 * (f1.0 * x as f64 + f1.1 * y as f64 + p).sin()
                    + 0.18 * (f2.0 * x as f64 + f2.1 * y as f64 + 0.4 + p).sin();
                r.set(x, y, 0, v);
            }
        }
        r
    }

    #[test]
    fn six_by_six_system_matches_dense_direct_solve() {
        // Crossed sinusoids keep the data diagonal populated everywhere, and
        // a generic nonzero flow state keeps the lagged diffusivities off
        // their flat-field cap; both keep the system well conditioned.
        let vis1 = wavy(6, 6, (1.3, 0.2), (0.3, 1.1), 0.0);
        let vis2 = wavy(6, 6, (1.3, 0.2), (0.3, 1.1), 0.02);
        let nir1 = wavy(6, 6, (0.9, 1.2), (1.4, 0.5), 0.0);
        let nir2 = wavy(6, 6, (0.9, 1.2), (1.4, 0.5), 0.016);
        let lambda = WeightMap::constant(6, 6, 0.5);
        let pair = LevelPair {
            vis1: &vis1,
            nir1: Some(&nir1),
            vis2: &vis2,
            nir2: Some(&nir2),
            lambda: &lambda,
        };
        let params = SolverParams {
            gamma: 0.15,
            ..SolverParams::default()
        };
        let n = 36;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let u: Vec<f64> = (0..n).map(|_| 0.3 * (rng.random::<f64>() - 0.5)).collect();
        let v: Vec<f64> = (0..n).map(|_| 0.3 * (rng.random::<f64>() - 0.5)).collect();
        let sys = build_level_system(&pair, &u, &v, &params).unwrap();

        let (a, b) = sys.to_dense();
        let direct = dense_solve(a, b);

        let mut du = vec![0.0; n];
        let mut dv = vec![0.0; n];
        sor_solve(&sys, &mut du, &mut dv, 1.9, 20_000, 1e-13, SweepOrder::RedBlack).unwrap();
        for i in 0..n {
            assert!(
                (du[i] - direct[2 * i]).abs() < 1e-8,
                "du[{i}] {} vs {}",
                du[i],
                direct[2 * i]
            );
            assert!(
                (dv[i] - direct[2 * i + 1]).abs() < 1e-8,
                "dv[{i}] {} vs {}",
                dv[i],
                direct[2 * i + 1]
            );
        }

        // At the production tolerance the iterate stays within sor_tol of
        // the direct solution.
        let mut du_t = vec![0.0; n];
        let mut dv_t = vec![0.0; n];
        sor_solve(&sys, &mut du_t, &mut dv_t, 1.9, 10_000, params.sor_tol, SweepOrder::RedBlack)
            .unwrap();
        for i in 0..n {
            assert!((du_t[i] - direct[2 * i]).abs() < params.sor_tol);
            assert!((dv_t[i] - direct[2 * i + 1]).abs() < params.sor_tol);
        }
    }
}

mod level_solving {
    use super::*;

    #[test]
    fn identical_frames_keep_zero_flow() {
        let vis = small_texture(24, 20, 1, 31);
        let nir = small_texture(24, 20, 1, 32);
        let lambda = WeightMap::constant(24, 20, 0.5);
        let pair = LevelPair {
            vis1: &vis,
            nir1: Some(&nir),
            vis2: &vis,
            nir2: Some(&nir),
            lambda: &lambda,
        };
        let params = SolverParams::default();
        let n = 24 * 20;
        let mut u = vec![0.0; n];
        let mut v = vec![0.0; n];
        solve_level(&pair, &mut u, &mut v, &params).unwrap();
        for i in 0..n {
            assert!(u[i].abs() < 1e-6 && v[i].abs() < 1e-6, "zero is a fixed point");
        }
    }

    #[test]
    fn single_level_recovers_unit_shift() {
        let p = synth::generate(&SynthConfig {
            width: 64,
            height: 48,
            warp: WarpKind::Translation { dx: 1.0, dy: 0.0 },
            seed: 17,
            ..Default::default()
        })
        .unwrap();
        let lambda = WeightMap::constant(64, 48, 0.5);
        let pair = pair_from_synth(&p, &lambda);
        let params = SolverParams::default();
        let n = 64 * 48;
        let mut u = vec![0.0; n];
        let mut v = vec![0.0; n];
        solve_level(&pair, &mut u, &mut v, &params).unwrap();
        let mean_u = u.iter().sum::<f64>() / n as f64;
        let mean_v = v.iter().sum::<f64>() / n as f64;
        assert!((mean_u - 1.0).abs() < 0.1, "mean u = {mean_u}");
        assert!(mean_v.abs() < 0.1, "mean v = {mean_v}");
    }

    #[test]
    fn energy_descends_across_outer_iterations() {
        for seed in [1u64, 2, 3, 4, 5] {
            let p = synth::generate(&SynthConfig {
                width: 48,
                height: 40,
                warp: WarpKind::Translation {
                    dx: 0.3 + seed as f64 * 0.2,
                    dy: 0.15 * seed as f64 - 0.3,
                },
                seed,
                ..Default::default()
            })
            .unwrap();
            let lambda = WeightMap::constant(48, 40, 0.5);
            let pair = pair_from_synth(&p, &lambda);
            let params = SolverParams::default();
            let n = 48 * 40;
            let mut u = vec![0.0; n];
            let mut v = vec![0.0; n];
            let energies = solve_level(&pair, &mut u, &mut v, &params).unwrap();
            for w in energies.windows(2) {
                assert!(
                    w[1].e_total <= w[0].e_total * (1.0 + 1e-3),
                    "seed {seed}: energy rose {} -> {}",
                    w[0].e_total,
                    w[1].e_total
                );
            }
        }
    }
}

mod full_solver {
    use super::*;

    #[test]
    fn identical_frames_give_near_zero_flow() {
        let p = synth::generate(&SynthConfig {
            width: 64,
            height: 48,
            warp: WarpKind::Translation { dx: 0.0, dy: 0.0 },
            ..Default::default()
        })
        .unwrap();
        let result = compute_flow(&p.frame1, &p.frame2, &SolverParams::default()).unwrap();
        let n = (64 * 48) as f64;
        let avg: f64 = (0..48)
            .flat_map(|y| (0..64).map(move |x| (x, y)))
            .map(|(x, y)| {
                let (u, v) = result.flow.get(x, y);
                ((u * u + v * v) as f64).sqrt()
            })
            .sum::<f64>()
            / n;
        assert!(avg < 0.05, "avg endpoint magnitude {avg}");
    }

    #[test]
    fn recovers_two_pixel_translation() {
        let p = synth::generate(&SynthConfig {
            width: 96,
            height: 72,
            warp: WarpKind::Translation { dx: 2.0, dy: 0.0 },
            seed: 9,
            ..Default::default()
        })
        .unwrap();
        let result = compute_flow(&p.frame1, &p.frame2, &SolverParams::default()).unwrap();
        let mut sum = 0.0;
        for y in 0..72 {
            for x in 0..96 {
                let (u, v) = result.flow.get(x, y);
                sum += (((u - 2.0) * (u - 2.0) + v * v) as f64).sqrt();
            }
        }
        let avg = sum / (96.0 * 72.0);
        assert!(avg < 0.2, "avg EE = {avg}");
    }

    #[test]
    fn fixed_weight_modes_match_pure_channel_modes_bitwise() {
        let p = synth::generate(&SynthConfig {
            width: 48,
            height: 40,
            warp: WarpKind::Translation { dx: 1.0, dy: 0.5 },
            seed: 4,
            ..Default::default()
        })
        .unwrap();
        for (fixed, pure) in [
            (ChannelMode::Fixed(0.0), ChannelMode::RgbOnly),
            (ChannelMode::Fixed(1.0), ChannelMode::NirOnly),
        ] {
            let mut params = SolverParams {
                outer_iters: 3,
                ..SolverParams::default()
            };
            params.mode = fixed;
            let a = compute_flow(&p.frame1, &p.frame2, &params).unwrap();
            params.mode = pure;
            let b = compute_flow(&p.frame1, &p.frame2, &params).unwrap();
            let bits = |f: &FlowField| -> Vec<u32> {
                f.u_plane()
                    .iter()
                    .chain(f.v_plane())
                    .map(|x| x.to_bits())
                    .collect()
            };
            assert_eq!(bits(&a.flow), bits(&b.flow), "{:?} vs {:?}", fixed, pure);
        }
    }

    #[test]
    fn missing_nir_rejected_outside_rgb_mode() {
        let vis1 = small_texture(32, 32, 3, 41);
        let vis2 = small_texture(32, 32, 3, 42);
        let i1 = MultispectralImage::new(vis1, None).unwrap();
        let i2 = MultispectralImage::new(vis2, None).unwrap();
        let params = SolverParams::default();
        assert!(matches!(
            compute_flow(&i1, &i2, &params),
            Err(SolverError::MissingNir(_))
        ));
        let rgb = SolverParams {
            mode: ChannelMode::RgbOnly,
            outer_iters: 2,
            ..SolverParams::default()
        };
        assert!(compute_flow(&i1, &i2, &rgb).is_ok());
    }

    #[test]
    fn translation_equivariance_on_common_interior() {
        let big = synth::generate(&SynthConfig {
            width: 112,
            height: 88,
            warp: WarpKind::Translation { dx: 1.3, dy: 0.7 },
            seed: 77,
            ..Default::default()
        })
        .unwrap();
        let crop_ms = |img: &MultispectralImage, ox: usize, oy: usize, w: usize, h: usize| {
            let crop = |r: &Raster| {
                let mut out = Raster::new(w, h, r.channels()).unwrap();
                for y in 0..h {
                    for x in 0..w {
                        for c in 0..r.channels() {
                            out.set(x, y, c, r.get(x + ox, y + oy, c));
                        }
                    }
                }
                out
            };
            MultispectralImage::new(crop(&img.visible), img.nir.as_ref().map(crop)).unwrap()
        };
        let (w, h) = (96, 72);
        let (tx, ty) = (3usize, 2usize);
        let a1 = crop_ms(&big.frame1, 0, 0, w, h);
        let a2 = crop_ms(&big.frame2, 0, 0, w, h);
        let b1 = crop_ms(&big.frame1, tx, ty, w, h);
        let b2 = crop_ms(&big.frame2, tx, ty, w, h);
        let params = SolverParams::default();
        let fa = compute_flow(&a1, &a2, &params).unwrap().flow;
        let fb = compute_flow(&b1, &b2, &params).unwrap().flow;
        let margin = 16;
        let mut max_dev = 0.0f64;
        for y in margin..h - margin - ty {
            for x in margin..w - margin - tx {
                let (ua, va) = fa.get(x + tx, y + ty);
                let (ub, vb) = fb.get(x, y);
                max_dev = max_dev
                    .max((ua - ub).abs() as f64)
                    .max((va - vb).abs() as f64);
            }
        }
        assert!(max_dev < 0.05, "max interior deviation {max_dev}");
    }
}
