//! Exhaustive descriptor matching in a search window, and forward-backward
//! occlusion labeling.

use rayon::prelude::*;

use super::descriptor::DescriptorField;
use super::GtError;
use crate::flow::FlowField;
use crate::raster::Raster;

/// For each pixel of frame 1, return the integer offset into frame 2
/// minimizing descriptor Euclidean distance over the
/// `(2 m_p + 1) x (2 m_p + 1)` window (clipped at the borders).
///
/// Ties break toward the smallest offset magnitude, then row-major window
/// order, so the result is deterministic.
pub fn match_window(
    desc1: &DescriptorField,
    desc2: &DescriptorField,
    m_p: usize,
) -> Result<FlowField, GtError> {
    if desc1.width() != desc2.width() || desc1.height() != desc2.height() {
        return Err(GtError::DimensionMismatch(
            desc1.width(),
            desc1.height(),
            desc2.width(),
            desc2.height(),
        ));
    }
    if m_p < 1 {
        return Err(GtError::BadSearchRadius(m_p));
    }
    let (w, h) = (desc1.width(), desc1.height());
    let m = m_p as isize;
    let mut u = vec![0.0f32; w * h];
    let mut v = vec![0.0f32; w * h];
    u.par_chunks_mut(w)
        .zip(v.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (urow, vrow))| {
            for x in 0..w {
                let d1 = desc1.get(x, y);
                let mut best_dist = f64::INFINITY;
                let mut best_mag = i64::MAX;
                let mut best = (0i64, 0i64);
                for dy in -m..=m {
                    let qy = y as isize + dy;
                    if qy < 0 || qy >= h as isize {
                        continue;
                    }
                    for dx in -m..=m {
                        let qx = x as isize + dx;
                        if qx < 0 || qx >= w as isize {
                            continue;
                        }
                        let dist =
                            DescriptorField::distance_sq(d1, desc2.get(qx as usize, qy as usize));
                        let mag = (dx * dx + dy * dy) as i64;
                        if dist < best_dist || (dist == best_dist && mag < best_mag) {
                            best_dist = dist;
                            best_mag = mag;
                            best = (dx as i64, dy as i64);
                        }
                    }
                }
                urow[x] = best.0 as f32;
                vrow[x] = best.1 as f32;
            }
        });
    Ok(FlowField::from_components(w, h, u, v))
}

/// Forward-backward consistency check.
///
/// A pixel p with forward match q = p + w_f(p) is labeled unknown (and set
/// in the occlusion mask) when the intensity difference between the forward
/// matched result and the backward matched result,
/// `|nir1(round(q + w_b(q))) - nir2(q)|`, exceeds the threshold, or when
/// either lookup leaves the image.
pub fn fb_consistency(
    forward: &FlowField,
    backward: &FlowField,
    nir1: &Raster,
    nir2: &Raster,
    fb_threshold: f64,
) -> Result<(FlowField, Vec<bool>), GtError> {
    let (w, h) = (forward.width(), forward.height());
    if backward.width() != w
        || backward.height() != h
        || nir1.width() != w
        || nir1.height() != h
        || nir2.width() != w
        || nir2.height() != h
    {
        return Err(GtError::DimensionMismatch(
            w,
            h,
            backward.width(),
            backward.height(),
        ));
    }
    let mut cleaned = forward.clone();
    let mut mask = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut reject = || {
                cleaned.set_unknown(x, y);
                mask[y * w + x] = true;
            };
            if !forward.is_valid(x, y) {
                reject();
                continue;
            }
            let (uf, vf) = forward.get(x, y);
            let qx = (x as f64 + uf as f64).round() as isize;
            let qy = (y as f64 + vf as f64).round() as isize;
            if qx < 0 || qx >= w as isize || qy < 0 || qy >= h as isize {
                reject();
                continue;
            }
            let (qxu, qyu) = (qx as usize, qy as usize);
            if !backward.is_valid(qxu, qyu) {
                reject();
                continue;
            }
            let (ub, vb) = backward.get(qxu, qyu);
            let rx = (qx as f64 + ub as f64).round() as isize;
            let ry = (qy as f64 + vb as f64).round() as isize;
            if rx < 0 || rx >= w as isize || ry < 0 || ry >= h as isize {
                reject();
                continue;
            }
            let diff = (nir1.get(rx as usize, ry as usize, 0) - nir2.get(qxu, qyu, 0)).abs();
            if diff > fb_threshold {
                reject();
            }
        }
    }
    Ok((cleaned, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gt::descriptor::dense_descriptor;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn speckle(w: usize, h: usize, seed: u64) -> Raster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = Raster::new(w, h, 1).unwrap();
        for v in r.data_mut() {
            *v = rng.random::<f64>();
        }
        r
    }

    #[test]
    fn identical_frames_match_at_zero_offset() {
        let img = speckle(24, 20, 3);
        let d = dense_descriptor(&img).unwrap();
        let flow = match_window(&d, &d, 3).unwrap();
        for y in 0..20 {
            for x in 0..24 {
                assert_eq!(flow.get(x, y), (0.0, 0.0), "tie-break prefers (0,0)");
            }
        }
    }

    #[test]
    fn integer_shift_recovered_in_interior() {
        // Frame 2 holds frame 1 shifted by (3, 0): I2(x) = I1(x - 3).
        let master = speckle(40, 28, 11);
        let mut f1 = Raster::new(32, 28, 1).unwrap();
        let mut f2 = Raster::new(32, 28, 1).unwrap();
        for y in 0..28 {
            for x in 0..32 {
                f1.set(x, y, 0, master.get(x + 4, y, 0));
                f2.set(x, y, 0, master.get(x + 1, y, 0));
            }
        }
        let d1 = dense_descriptor(&f1).unwrap();
        let d2 = dense_descriptor(&f2).unwrap();
        let flow = match_window(&d1, &d2, 5).unwrap();
        for y in 9..19 {
            for x in 9..20 {
                assert_eq!(flow.get(x, y), (3.0, 0.0), "at ({x},{y})");
            }
        }
    }

    /// Independent exhaustive matcher used as an oracle: straight loops,
    /// no early exits, same tie-break contract.
    fn brute_force_match(d1: &DescriptorField, d2: &DescriptorField, m: isize) -> Vec<(i32, i32)> {
        let (w, h) = (d1.width(), d1.height());
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut candidates: Vec<(f64, i64, i64, i64)> = Vec::new();
                for dy in -m..=m {
                    for dx in -m..=m {
                        let (qx, qy) = (x + dx, y + dy);
                        if qx < 0 || qy < 0 || qx >= w as isize || qy >= h as isize {
                            continue;
                        }
                        let a = d1.get(x as usize, y as usize);
                        let b = d2.get(qx as usize, qy as usize);
                        let mut dist = 0.0f64;
                        for k in 0..a.len() {
                            dist += ((a[k] - b[k]) as f64).powi(2);
                        }
                        candidates.push((dist, (dx * dx + dy * dy) as i64, dy as i64, dx as i64));
                    }
                }
                // Sort by distance, then offset magnitude, then row-major
                // window order (dy, dx).
                candidates.sort_by(|p, q| {
                    p.0.partial_cmp(&q.0)
                        .unwrap()
                        .then(p.1.cmp(&q.1))
                        .then(p.2.cmp(&q.2))
                        .then(p.3.cmp(&q.3))
                });
                let best = candidates[0];
                out.push((best.3 as i32, best.2 as i32));
            }
        }
        out
    }

    #[test]
    fn matches_brute_force_oracle_on_random_fields() {
        for seed in 0..6u64 {
            let f1 = speckle(16, 16, seed * 2 + 100);
            let f2 = speckle(16, 16, seed * 2 + 101);
            let d1 = dense_descriptor(&f1).unwrap();
            let d2 = dense_descriptor(&f2).unwrap();
            for m_p in [1usize, 2, 3] {
                let flow = match_window(&d1, &d2, m_p).unwrap();
                let oracle = brute_force_match(&d1, &d2, m_p as isize);
                for y in 0..16 {
                    for x in 0..16 {
                        let (u, v) = flow.get(x, y);
                        let (ou, ov) = oracle[y * 16 + x];
                        assert_eq!(
                            (u as i32, v as i32),
                            (ou, ov),
                            "seed {seed} m_p {m_p} at ({x},{y})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn fb_consistent_pair_keeps_all_pixels() {
        let img = speckle(20, 16, 21);
        let d = dense_descriptor(&img).unwrap();
        let fwd = match_window(&d, &d, 2).unwrap();
        let bwd = match_window(&d, &d, 2).unwrap();
        let (cleaned, mask) = fb_consistency(&fwd, &bwd, &img, &img, 0.04).unwrap();
        assert!(mask.iter().all(|&m| !m));
        assert_eq!(cleaned, fwd);
    }

    #[test]
    fn intensity_violation_marks_pixel() {
        let img = speckle(20, 16, 22);
        let mut img2 = img.clone();
        // Make the back-matched lookup differ by twice the threshold at one
        // pixel: forward and backward flows are zero, so the check compares
        // nir1(p) against nir2(p).
        let thr = 0.04;
        let old = img2.get(7, 5, 0);
        img2.set(7, 5, 0, (old + 2.0 * thr).min(1.0));
        let fwd = FlowField::new(20, 16);
        let bwd = FlowField::new(20, 16);
        let (cleaned, mask) = fb_consistency(&fwd, &bwd, &img, &img2, thr).unwrap();
        assert!(mask[5 * 20 + 7]);
        assert!(!cleaned.is_valid(7, 5));
        assert!(!mask[0], "untouched pixels stay valid");
    }
}
