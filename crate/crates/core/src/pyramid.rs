//! Multi-resolution pyramids and flow rescaling for coarse-to-fine solving.
//!
//! Each level is produced from the previous one by Gaussian pre-smoothing
//! (anti-aliasing sigma derived from the downsampling factor) followed by
//! bicubic resampling; weight maps travel through the same operator and are
//! re-clamped to `[0, 1]`.

use thiserror::Error;

use crate::flow::FlowField;
use crate::raster::{MultispectralImage, Raster};
use crate::weight::{compute_lambda, WeightError, WeightMap};

pub const DEFAULT_FACTOR: f64 = 0.75;
pub const DEFAULT_MIN_SIZE: usize = 16;

#[derive(Debug, Error)]
pub enum PyramidError {
    #[error("pyramid factor must lie in (0,1), got {0}")]
    BadFactor(f64),
    #[error("image {0}x{1} is below the minimum level size {2}")]
    ImageTooSmall(usize, usize, usize),
    #[error(transparent)]
    Weight(#[from] WeightError),
}

/// One resolution level: visible/nir rasters plus the resampled weight map,
/// all sharing the level dimensions.
#[derive(Debug, Clone)]
pub struct PyramidLevel {
    pub visible: Raster,
    pub nir: Option<Raster>,
    pub lambda: WeightMap,
}

impl PyramidLevel {
    pub fn width(&self) -> usize {
        self.visible.width()
    }

    pub fn height(&self) -> usize {
        self.visible.height()
    }
}

/// Ordered levels, finest first (index 0 = input resolution).
#[derive(Debug, Clone)]
pub struct Pyramid {
    pub levels: Vec<PyramidLevel>,
    pub factor: f64,
}

impl Pyramid {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// Coarsest-last traversal order used by the solver.
    pub fn coarsest(&self) -> &PyramidLevel {
        self.levels.last().expect("pyramid has at least one level")
    }
}

/// Number of levels with both dimensions still >= `min_size`, by the same
/// ceil recurrence the builder uses.
pub fn level_count(width: usize, height: usize, factor: f64, min_size: usize) -> usize {
    let (mut w, mut h) = (width, height);
    let mut n = 1;
    loop {
        let nw = (w as f64 * factor).ceil() as usize;
        let nh = (h as f64 * factor).ceil() as usize;
        if nw < min_size || nh < min_size || (nw == w && nh == h) {
            return n;
        }
        w = nw;
        h = nh;
        n += 1;
    }
}

/// Build the image+weight pyramid.
///
/// When `recompute_lambda` is set the weight map is recomputed from each
/// level's own visible/NIR rasters (requires NIR) instead of resampling the
/// full-resolution map; `(steepness, midpoint)` feed that recomputation.
pub fn build_pyramid(
    image: &MultispectralImage,
    lambda: &WeightMap,
    factor: f64,
    min_size: usize,
    recompute_lambda: Option<(f64, f64)>,
) -> Result<Pyramid, PyramidError> {
    if !(factor > 0.0 && factor < 1.0) {
        return Err(PyramidError::BadFactor(factor));
    }
    if image.width() < min_size || image.height() < min_size {
        return Err(PyramidError::ImageTooSmall(
            image.width(),
            image.height(),
            min_size,
        ));
    }
    // Anti-aliasing sigma for a fractional pyramid step.
    let sigma = 0.5 * (1.0 / (factor * factor) - 1.0).sqrt();
    let mut levels = vec![PyramidLevel {
        visible: image.visible.clone(),
        nir: image.nir.clone(),
        lambda: clamp_weights(lambda.clone()),
    }];
    loop {
        let prev = levels.last().unwrap();
        let (w, h) = (prev.width(), prev.height());
        let nw = (w as f64 * factor).ceil() as usize;
        let nh = (h as f64 * factor).ceil() as usize;
        if nw < min_size || nh < min_size || (nw == w && nh == h) {
            break;
        }
        let visible = downsample(&prev.visible, nw, nh, sigma);
        let nir = prev.nir.as_ref().map(|n| downsample(n, nw, nh, sigma));
        let lambda = match (recompute_lambda, &nir) {
            (Some((a, b)), Some(nir)) => compute_lambda(&visible, nir, a, b)?,
            _ => {
                let as_raster = Raster::from_vec(w, h, 1, prev.lambda.values().to_vec())
                    .expect("weight map dims");
                let resampled = downsample(&as_raster, nw, nh, sigma);
                clamp_weights(WeightMap::from_values(nw, nh, resampled.data().to_vec()))
            }
        };
        levels.push(PyramidLevel {
            visible,
            nir,
            lambda,
        });
    }
    Ok(Pyramid { levels, factor })
}

fn clamp_weights(map: WeightMap) -> WeightMap {
    let (w, h) = (map.width(), map.height());
    let values = map.values().iter().map(|&v| v.clamp(0.0, 1.0)).collect();
    WeightMap::from_values(w, h, values)
}

/// Gaussian pre-smooth then bicubic resample to the target dimensions.
fn downsample(raster: &Raster, new_width: usize, new_height: usize, sigma: f64) -> Raster {
    let smoothed = gaussian_blur(raster, sigma);
    resample_bicubic(&smoothed, new_width, new_height)
}

/// Separable Gaussian blur with clamped-edge handling.
pub fn gaussian_blur(raster: &Raster, sigma: f64) -> Raster {
    if sigma <= 0.0 {
        return raster.clone();
    }
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for i in -radius..=radius {
        kernel.push((-(i as f64 * i as f64) / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }
    let (w, h, ch) = (raster.width(), raster.height(), raster.channels());
    let mut horiz = Raster::new(w, h, ch).expect("blur dims");
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let xi = x as isize + k as isize - radius;
                    acc += kv * raster.get_clamped(xi, y as isize, c);
                }
                horiz.set(x, y, c, acc);
            }
        }
    }
    let mut out = Raster::new(w, h, ch).expect("blur dims");
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let yi = y as isize + k as isize - radius;
                    acc += kv * horiz.get_clamped(x as isize, yi, c);
                }
                out.set(x, y, c, acc);
            }
        }
    }
    out
}

/// Bicubic resample onto a new grid with pixel-center alignment:
/// `src = (dst + 0.5) * (src_dim / dst_dim) - 0.5`.
pub fn resample_bicubic(raster: &Raster, new_width: usize, new_height: usize) -> Raster {
    let sx = raster.width() as f64 / new_width as f64;
    let sy = raster.height() as f64 / new_height as f64;
    let ch = raster.channels();
    let mut out = Raster::new(new_width, new_height, ch).expect("resample dims");
    let mut buf = vec![0.0; ch];
    for y in 0..new_height {
        let src_y = (y as f64 + 0.5) * sy - 0.5;
        for x in 0..new_width {
            let src_x = (x as f64 + 0.5) * sx - 0.5;
            raster.sample_bicubic_into(src_x, src_y, &mut buf);
            for c in 0..ch {
                out.set(x, y, c, buf[c]);
            }
        }
    }
    out
}

/// Resample a flow field onto a new grid, rescaling displacements by the
/// per-axis dimension ratio so they stay in target-grid pixel units.
///
/// A target pixel whose bicubic stencil touches an invalid source pixel
/// becomes invalid itself.
pub fn rescale_flow(flow: &FlowField, new_width: usize, new_height: usize) -> FlowField {
    let (w, h) = (flow.width(), flow.height());
    if new_width == w && new_height == h {
        return flow.clone();
    }
    let ratio_u = new_width as f64 / w as f64;
    let ratio_v = new_height as f64 / h as f64;
    let sx = w as f64 / new_width as f64;
    let sy = h as f64 / new_height as f64;
    let mut out = FlowField::new(new_width, new_height);
    for y in 0..new_height {
        let src_y = (y as f64 + 0.5) * sy - 0.5;
        for x in 0..new_width {
            let src_x = (x as f64 + 0.5) * sx - 0.5;
            match sample_flow_bicubic(flow, src_x, src_y) {
                Some((u, v)) => out.set(x, y, (u * ratio_u) as f32, (v * ratio_v) as f32),
                None => out.set_unknown(x, y),
            }
        }
    }
    out
}

/// Bicubic sample of (u, v); `None` if the stencil touches an invalid pixel.
fn sample_flow_bicubic(flow: &FlowField, x: f64, y: f64) -> Option<(f64, f64)> {
    let x0 = x.floor();
    let y0 = y.floor();
    let wx = cubic(x - x0);
    let wy = cubic(y - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let (w, h) = (flow.width() as isize, flow.height() as isize);
    let mut u = 0.0;
    let mut v = 0.0;
    for (j, &wyj) in wy.iter().enumerate() {
        let yj = (y0 + j as isize - 1).clamp(0, h - 1) as usize;
        for (i, &wxi) in wx.iter().enumerate() {
            let xi = (x0 + i as isize - 1).clamp(0, w - 1) as usize;
            if !flow.is_valid(xi, yj) {
                return None;
            }
            let wgt = wyj * wxi;
            u += wgt * flow.u(xi, yj) as f64;
            v += wgt * flow.v(xi, yj) as f64;
        }
    }
    Some((u, v))
}

fn cubic(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        -0.5 * t3 + t2 - 0.5 * t,
        1.5 * t3 - 2.5 * t2 + 1.0,
        -1.5 * t3 + 2.0 * t2 + 0.5 * t,
        0.5 * t3 - 0.5 * t2,
    ]
}
