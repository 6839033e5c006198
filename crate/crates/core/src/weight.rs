//! Detail-aware per-pixel channel weight.
//!
//! The weight selects, per pixel, how much of the NIR versus the visible
//! data term contributes to the flow energy. It is a logistic function of
//! the relative NIR gradient strength on the first frame,
//!
//! ```text
//! lambda(x) = 1 / (1 + exp(-a * (|gN|/(|gV|+|gN|) - b)))
//! ```
//!
//! with Sobel gradient magnitudes and defaults a = 10, b = 0.5. The map is
//! computed once on the first frame at full resolution and resampled per
//! pyramid level.

use thiserror::Error;

use crate::raster::{sobel_gradient, Raster, RasterError};

/// Default logistic steepness.
pub const DEFAULT_STEEPNESS: f64 = 10.0;
/// Default logistic midpoint.
pub const DEFAULT_MIDPOINT: f64 = 0.5;

/// Below this combined gradient magnitude the relative strength is
/// undefined; such pixels fall back to the midpoint (lambda = 0.5).
pub const DEGENERATE_GRADIENT: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum WeightError {
    #[error("visible is {0}x{1} but nir is {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("steepness must be positive, got {0}")]
    BadSteepness(f64),
    #[error("midpoint must lie in [0,1], got {0}")]
    BadMidpoint(f64),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// Per-pixel weight in `[0, 1]`: 1 favors the NIR data term, 0 the visible.
#[derive(Debug, Clone)]
pub struct WeightMap {
    width: usize,
    height: usize,
    lambda: Vec<f64>,
}

impl WeightMap {
    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            lambda: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    pub fn from_values(width: usize, height: usize, lambda: Vec<f64>) -> Self {
        assert_eq!(lambda.len(), width * height);
        Self {
            width,
            height,
            lambda,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.lambda[y * self.width + x]
    }

    pub fn values(&self) -> &[f64] {
        &self.lambda
    }

    /// Render as an 8-bit grayscale raster (lambda * 255 rounded to nearest).
    pub fn to_raster(&self) -> Raster {
        let data = self
            .lambda
            .iter()
            .map(|&l| (l * 255.0).round() / 255.0)
            .collect();
        Raster::from_vec(self.width, self.height, 1, data).expect("weight map dims")
    }
}

/// The scalar weight for one pair of gradient magnitudes.
#[inline]
pub fn lambda_from_magnitudes(nir_mag: f64, vis_mag: f64, steepness: f64, midpoint: f64) -> f64 {
    let total = vis_mag + nir_mag;
    let ratio = if total < DEGENERATE_GRADIENT {
        midpoint
    } else {
        nir_mag / total
    };
    1.0 / (1.0 + (-steepness * (ratio - midpoint)).exp())
}

/// Compute the detail-aware weight map from the first frame's visible and
/// NIR rasters.
pub fn compute_lambda(
    visible_frame1: &Raster,
    nir_frame1: &Raster,
    steepness: f64,
    midpoint: f64,
) -> Result<WeightMap, WeightError> {
    if visible_frame1.width() != nir_frame1.width()
        || visible_frame1.height() != nir_frame1.height()
    {
        return Err(WeightError::DimensionMismatch(
            visible_frame1.width(),
            visible_frame1.height(),
            nir_frame1.width(),
            nir_frame1.height(),
        ));
    }
    if !(steepness > 0.0) {
        return Err(WeightError::BadSteepness(steepness));
    }
    if !(0.0..=1.0).contains(&midpoint) {
        return Err(WeightError::BadMidpoint(midpoint));
    }
    let grad_vis = sobel_gradient(visible_frame1)?;
    let grad_nir = sobel_gradient(nir_frame1)?;
    let (w, h) = (visible_frame1.width(), visible_frame1.height());
    let mut lambda = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            lambda[y * w + x] = lambda_from_magnitudes(
                grad_nir.magnitude(x, y),
                grad_vis.magnitude(x, y),
                steepness,
                midpoint,
            );
        }
    }
    Ok(WeightMap {
        width: w,
        height: h,
        lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_gradients_hit_midpoint() {
        let l = lambda_from_magnitudes(0.3, 0.3, 10.0, 0.5);
        assert_eq!(l, 0.5, "a*(0.5-0.5)=0 forces exactly 1/(1+e^0)");
    }

    #[test]
    fn nir_only_gradient() {
        // ratio 1 -> 1/(1+e^-5)
        let l = lambda_from_magnitudes(0.4, 0.0, 10.0, 0.5);
        let expected = 1.0 / (1.0 + (-5.0f64).exp());
        assert!((l - expected).abs() < 1e-12);
        assert!((l - 0.993307).abs() < 1e-6);
    }

    #[test]
    fn visible_only_gradient() {
        let l = lambda_from_magnitudes(0.0, 0.4, 10.0, 0.5);
        let expected = 1.0 / (1.0 + (5.0f64).exp());
        assert!((l - expected).abs() < 1e-12);
        assert!((l - 0.006693).abs() < 1e-6);
    }

    #[test]
    fn degenerate_gradients_fall_back() {
        assert_eq!(lambda_from_magnitudes(0.0, 0.0, 10.0, 0.5), 0.5);
    }

    #[test]
    fn compute_lambda_on_rasters() {
        // Visible flat, NIR carrying a ramp: lambda should saturate toward 1
        // wherever the NIR gradient exists.
        let vis = Raster::constant(8, 8, 3, 0.5);
        let mut nir = Raster::new(8, 8, 1).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                nir.set(x, y, 0, x as f64 * 0.1);
            }
        }
        let wm = compute_lambda(&vis, &nir, 10.0, 0.5).unwrap();
        for y in 1..7 {
            for x in 1..7 {
                assert!(wm.get(x, y) > 0.99, "lambda at ({x},{y}) = {}", wm.get(x, y));
            }
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let vis = Raster::constant(8, 8, 3, 0.5);
        let nir = Raster::constant(9, 8, 1, 0.5);
        assert!(matches!(
            compute_lambda(&vis, &nir, 10.0, 0.5),
            Err(WeightError::DimensionMismatch(..))
        ));
    }

    proptest! {
        #[test]
        fn monotone_in_nir_magnitude(
            v in 1e-6f64..10.0,
            n1 in 1e-6f64..10.0,
            bump in 1e-6f64..1.0,
        ) {
            let lo = lambda_from_magnitudes(n1, v, 10.0, 0.5);
            let hi = lambda_from_magnitudes(n1 + bump, v, 10.0, 0.5);
            prop_assert!(hi > lo, "lambda must strictly increase with |gN|");
        }

        #[test]
        fn scale_invariant(
            v in 1e-4f64..10.0,
            n in 1e-4f64..10.0,
            s in 0.01f64..100.0,
        ) {
            let a = lambda_from_magnitudes(n, v, 10.0, 0.5);
            let b = lambda_from_magnitudes(n * s, v * s, 10.0, 0.5);
            prop_assert!((a - b).abs() < 1e-10);
        }

        #[test]
        fn swap_symmetry(v in 0f64..10.0, n in 0f64..10.0) {
            let a = lambda_from_magnitudes(n, v, 10.0, 0.5);
            let b = lambda_from_magnitudes(v, n, 10.0, 0.5);
            prop_assert!((a - (1.0 - b)).abs() < 1e-12);
        }

        #[test]
        fn range_is_open_unit_interval(v in 0f64..100.0, n in 0f64..100.0) {
            let l = lambda_from_magnitudes(n, v, 10.0, 0.5);
            prop_assert!(l > 0.0 && l < 1.0);
        }
    }
}
