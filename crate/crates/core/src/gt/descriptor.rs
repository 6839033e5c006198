//! Dense per-pixel gradient-histogram descriptors.
//!
//! Every pixel gets a 128-dimensional descriptor built the standard way:
//! a 16x16 patch split into 4x4 spatial cells, 8 orientation bins per cell,
//! Gaussian-weighted gradient magnitudes with trilinear binning, then
//! L2-normalize, clamp at 0.2 and renormalize. Orientation is fixed
//! upright: adjacent-frame ground-truth motion is near-translational, so no
//! dominant-orientation estimation is performed.

use rayon::prelude::*;

use super::GtError;
use crate::raster::{central_diff, Raster};

/// Descriptor vector length (4 * 4 spatial cells * 8 orientation bins).
pub const DESCRIPTOR_LEN: usize = 128;

const PATCH_RADIUS: isize = 8;
const SPATIAL_CELLS: usize = 4;
const ORIENTATION_BINS: usize = 8;
const GAUSS_SIGMA: f64 = 8.0;
const CLAMP: f32 = 0.2;

/// Per-pixel descriptors, row-major, `DESCRIPTOR_LEN` floats each.
///
/// Descriptors are L2-normalized (norm 1) except over constant patches,
/// which produce the zero vector.
#[derive(Debug, Clone)]
pub struct DescriptorField {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl DescriptorField {
    /// Build a field from raw descriptor data
    /// (`width * height * DESCRIPTOR_LEN` values, row-major).
    pub fn from_raw(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height * DESCRIPTOR_LEN);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * DESCRIPTOR_LEN;
        &self.data[i..i + DESCRIPTOR_LEN]
    }

    /// Squared Euclidean distance between two descriptors.
    #[inline]
    pub fn distance_sq(a: &[f32], b: &[f32]) -> f64 {
        let mut s = 0.0f64;
        for i in 0..DESCRIPTOR_LEN {
            let d = (a[i] - b[i]) as f64;
            s += d * d;
        }
        s
    }
}

/// Compute the descriptor field of a single-channel raster.
pub fn dense_descriptor(image: &Raster) -> Result<DescriptorField, GtError> {
    if image.channels() != 1 {
        return Err(GtError::NotSingleChannel(image.channels()));
    }
    if image.width() < 16 || image.height() < 16 {
        return Err(GtError::ImageTooSmall(image.width(), image.height()));
    }
    let (w, h) = (image.width(), image.height());
    let (gx, gy) = central_diff(image);

    // Gaussian window over the patch, indexed by (j + 8, i + 8).
    let mut gauss = [[0.0f64; 16]; 16];
    for (j, row) in gauss.iter_mut().enumerate() {
        for (i, g) in row.iter_mut().enumerate() {
            let dx = i as f64 - PATCH_RADIUS as f64 + 0.5;
            let dy = j as f64 - PATCH_RADIUS as f64 + 0.5;
            *g = (-(dx * dx + dy * dy) / (2.0 * GAUSS_SIGMA * GAUSS_SIGMA)).exp();
        }
    }

    let mut data = vec![0.0f32; w * h * DESCRIPTOR_LEN];
    data.par_chunks_mut(w * DESCRIPTOR_LEN)
        .enumerate()
        .for_each(|(y, row)| {
            let mut hist = [0.0f64; DESCRIPTOR_LEN];
            for x in 0..w {
                hist.fill(0.0);
                accumulate_patch(&gx, &gy, &gauss, x as isize, y as isize, &mut hist);
                normalize(&hist, &mut row[x * DESCRIPTOR_LEN..(x + 1) * DESCRIPTOR_LEN]);
            }
        });
    Ok(DescriptorField {
        width: w,
        height: h,
        data,
    })
}

fn accumulate_patch(
    gx: &Raster,
    gy: &Raster,
    gauss: &[[f64; 16]; 16],
    px: isize,
    py: isize,
    hist: &mut [f64; DESCRIPTOR_LEN],
) {
    for j in -PATCH_RADIUS..PATCH_RADIUS {
        for i in -PATCH_RADIUS..PATCH_RADIUS {
            let dx = gx.get_clamped(px + i, py + j, 0);
            let dy = gy.get_clamped(px + i, py + j, 0);
            let mag = (dx * dx + dy * dy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let weight = mag * gauss[(j + PATCH_RADIUS) as usize][(i + PATCH_RADIUS) as usize];

            // Continuous bin coordinates: 4px spatial cells, 8 orientation
            // bins over [0, 2pi).
            let xb = (i as f64 + PATCH_RADIUS as f64 + 0.5) / 4.0 - 0.5;
            let yb = (j as f64 + PATCH_RADIUS as f64 + 0.5) / 4.0 - 0.5;
            let mut ori = dy.atan2(dx);
            if ori < 0.0 {
                ori += std::f64::consts::TAU;
            }
            let ob = ori / std::f64::consts::TAU * ORIENTATION_BINS as f64;

            let x0 = xb.floor();
            let y0 = yb.floor();
            let o0 = ob.floor();
            let (fx, fy, fo) = (xb - x0, yb - y0, ob - o0);
            for (cell_y, wy) in [(y0 as isize, 1.0 - fy), (y0 as isize + 1, fy)] {
                if cell_y < 0 || cell_y >= SPATIAL_CELLS as isize {
                    continue;
                }
                for (cell_x, wx) in [(x0 as isize, 1.0 - fx), (x0 as isize + 1, fx)] {
                    if cell_x < 0 || cell_x >= SPATIAL_CELLS as isize {
                        continue;
                    }
                    for (ori_bin, wo) in [(o0 as usize % ORIENTATION_BINS, 1.0 - fo), ((o0 as usize + 1) % ORIENTATION_BINS, fo)] {
                        let idx = (cell_y as usize * SPATIAL_CELLS + cell_x as usize)
                            * ORIENTATION_BINS
                            + ori_bin;
                        hist[idx] += weight * wy * wx * wo;
                    }
                }
            }
        }
    }
}

fn normalize(hist: &[f64; DESCRIPTOR_LEN], out: &mut [f32]) {
    let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        out.fill(0.0);
        return;
    }
    let mut clamped = [0.0f32; DESCRIPTOR_LEN];
    for (c, &v) in clamped.iter_mut().zip(hist.iter()) {
        *c = ((v / norm) as f32).min(CLAMP);
    }
    let norm2 = clamped.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
    if norm2 < 1e-12 {
        out.fill(0.0);
        return;
    }
    for (o, &c) in out.iter_mut().zip(clamped.iter()) {
        *o = (c as f64 / norm2) as f32;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
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
    fn constant_image_gives_zero_descriptors() {
        let field = dense_descriptor(&Raster::constant(20, 18, 1, 0.4)).unwrap();
        for y in 0..18 {
            for x in 0..20 {
                assert!(field.get(x, y).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn textured_descriptors_are_unit_norm() {
        let field = dense_descriptor(&speckle(24, 20, 5)).unwrap();
        for y in 0..20 {
            for x in 0..24 {
                let norm: f64 = field
                    .get(x, y)
                    .iter()
                    .map(|&v| (v as f64) * (v as f64))
                    .sum::<f64>()
                    .sqrt();
                assert!((norm - 1.0).abs() < 1e-6, "norm at ({x},{y}) = {norm}");
            }
        }
    }

    #[test]
    fn identical_interior_patches_match_exactly() {
        // Tile a 17-wide pattern twice; pixels one period apart see the
        // same patch content and must produce identical descriptors.
        let period = 17;
        let tile = speckle(period, 48, 9);
        let mut r = Raster::new(period * 2 + 8, 48, 1).unwrap();
        for y in 0..48 {
            for x in 0..r.width() {
                r.set(x, y, 0, tile.get(x % period, y, 0));
            }
        }
        let field = dense_descriptor(&r).unwrap();
        let (x1, x2, y) = (12, 12 + period, 24);
        let (a, b) = (field.get(x1, y), field.get(x2, y));
        for i in 0..DESCRIPTOR_LEN {
            assert!(
                (a[i] - b[i]).abs() < 1e-9,
                "component {i}: {} vs {}",
                a[i],
                b[i]
            );
        }
    }

    #[test]
    fn rejects_small_images() {
        assert!(matches!(
            dense_descriptor(&Raster::constant(15, 20, 1, 0.1)),
            Err(GtError::ImageTooSmall(..))
        ));
    }
}
