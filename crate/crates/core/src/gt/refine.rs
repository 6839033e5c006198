//! Lucas-Kanade subpixel refinement and block-average flow downsampling.

use rayon::prelude::*;

use super::GtError;
use crate::flow::FlowField;
use crate::raster::{central_diff, Raster};

/// Refinement step quantum: displacements are rounded to multiples of this.
pub const SUBPIXEL_STEP: f64 = 1.0 / 20.0;

const LK_RADIUS: isize = 2; // 5x5 window
const LK_MAX_ITERS: usize = 5;
const MIN_EIGENVALUE: f64 = 1e-6;

/// Refine an integer flow field to subpixel precision with per-pixel
/// Lucas-Kanade least squares on a 5x5 window.
///
/// Iterates until the increment drops below half a step or `LK_MAX_ITERS`
/// is reached, then quantizes each component to the nearest multiple of
/// [`SUBPIXEL_STEP`]. Pixels with a degenerate structure tensor keep their
/// integer estimate; unknown pixels pass through untouched.
pub fn lk_subpixel(
    nir1: &Raster,
    nir2: &Raster,
    integer_flow: &FlowField,
) -> Result<FlowField, GtError> {
    let (w, h) = (nir1.width(), nir1.height());
    if nir2.width() != w || nir2.height() != h || integer_flow.width() != w || integer_flow.height() != h
    {
        return Err(GtError::DimensionMismatch(
            w,
            h,
            integer_flow.width(),
            integer_flow.height(),
        ));
    }
    let (gx, gy) = central_diff(nir1);

    let mut u = vec![0.0f32; w * h];
    let mut v = vec![0.0f32; w * h];
    u.par_chunks_mut(w)
        .zip(v.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (urow, vrow))| {
            let mut sample = [0.0f64];
            for x in 0..w {
                if !integer_flow.is_valid(x, y) {
                    let (fu, fv) = integer_flow.get(x, y);
                    urow[x] = fu;
                    vrow[x] = fv;
                    continue;
                }
                let (u0, v0) = integer_flow.get(x, y);
                let (mut du, mut dv) = (u0 as f64, v0 as f64);

                // Structure tensor of frame 1 over the window.
                let mut a = 0.0;
                let mut b = 0.0;
                let mut c = 0.0;
                for j in -LK_RADIUS..=LK_RADIUS {
                    for i in -LK_RADIUS..=LK_RADIUS {
                        let ix = gx.get_clamped(x as isize + i, y as isize + j, 0);
                        let iy = gy.get_clamped(x as isize + i, y as isize + j, 0);
                        a += ix * ix;
                        b += ix * iy;
                        c += iy * iy;
                    }
                }
                let lambda_min = 0.5 * (a + c - ((a - c) * (a - c) + 4.0 * b * b).sqrt());
                if lambda_min < MIN_EIGENVALUE {
                    urow[x] = u0;
                    vrow[x] = v0;
                    continue;
                }
                let det = a * c - b * b;

                for _ in 0..LK_MAX_ITERS {
                    let mut ru = 0.0;
                    let mut rv = 0.0;
                    for j in -LK_RADIUS..=LK_RADIUS {
                        for i in -LK_RADIUS..=LK_RADIUS {
                            let sxr = x as isize + i;
                            let syr = y as isize + j;
                            let i1 = nir1.get_clamped(sxr, syr, 0);
                            nir2.sample_bicubic_into(
                                sxr as f64 + du,
                                syr as f64 + dv,
                                &mut sample,
                            );
                            let it = sample[0] - i1;
                            ru -= gx.get_clamped(sxr, syr, 0) * it;
                            rv -= gy.get_clamped(sxr, syr, 0) * it;
                        }
                    }
                    let step_u = (c * ru - b * rv) / det;
                    let step_v = (a * rv - b * ru) / det;
                    du += step_u;
                    dv += step_v;
                    if (step_u * step_u + step_v * step_v).sqrt() < SUBPIXEL_STEP / 2.0 {
                        break;
                    }
                }
                urow[x] = (((du / SUBPIXEL_STEP).round()) * SUBPIXEL_STEP) as f32;
                vrow[x] = (((dv / SUBPIXEL_STEP).round()) * SUBPIXEL_STEP) as f32;
            }
        });
    Ok(FlowField::from_components(w, h, u, v))
}

/// Downsample a flow field by block averaging.
///
/// Output dimensions are `floor(input / factor)`; each output vector is the
/// mean of the valid vectors in its `factor x factor` block divided by
/// `factor` (converting displacement units to the coarse grid). Blocks with
/// no valid vectors emit the unknown sentinel.
pub fn downsample_flow(flow: &FlowField, factor: usize) -> Result<FlowField, GtError> {
    if factor == 0 {
        return Err(GtError::BadDownsampleFactor(factor));
    }
    let ow = flow.width() / factor;
    let oh = flow.height() / factor;
    let mut out = FlowField::new(ow, oh);
    for oy in 0..oh {
        for ox in 0..ow {
            let mut sum_u = 0.0f64;
            let mut sum_v = 0.0f64;
            let mut count = 0usize;
            for y in oy * factor..(oy + 1) * factor {
                for x in ox * factor..(ox + 1) * factor {
                    if flow.is_valid(x, y) {
                        let (u, v) = flow.get(x, y);
                        sum_u += u as f64;
                        sum_v += v as f64;
                        count += 1;
                    }
                }
            }
            if count == 0 {
                out.set_unknown(ox, oy);
            } else {
                let scale = (count * factor) as f64;
                out.set(ox, oy, (sum_u / scale) as f32, (sum_v / scale) as f32);
            }
        }
    }
    Ok(out)
}
