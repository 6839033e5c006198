//! Ground-truth flow construction from NIR image pairs.
//!
//! The pipeline matches per-pixel descriptors exhaustively inside a search
//! window sized by the maximum expected motion, labels inconsistent pixels
//! via a forward-backward check, refines the surviving integer matches to
//! 1/20 px with Lucas-Kanade, and block-averages the field down by the
//! configured factor. No flow method is involved: a smoothness prior would
//! oversmooth motion boundaries and defeat the purpose of ground truth.

pub mod descriptor;
pub mod matching;
pub mod refine;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use descriptor::{dense_descriptor, DescriptorField, DESCRIPTOR_LEN};
pub use matching::{fb_consistency, match_window};
pub use refine::{downsample_flow, lk_subpixel, SUBPIXEL_STEP};

use crate::flow::FlowField;
use crate::raster::Raster;

#[derive(Debug, Error)]
pub enum GtError {
    #[error("image {0}x{1} too small for 16x16 descriptor patches")]
    ImageTooSmall(usize, usize),
    #[error("descriptors need a single-channel raster, got {0} channels")]
    NotSingleChannel(usize),
    #[error("inputs are {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("search radius {0} must be at least 1")]
    BadSearchRadius(usize),
    #[error("downsample factor {0} must be at least 1")]
    BadDownsampleFactor(usize),
    #[error("forward-backward threshold {0} must be positive")]
    BadThreshold(f64),
}

/// Ground-truth construction parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GtConfig {
    /// Maximum expected motion in pixels; the search window spans
    /// 2 m_p x 2 m_p around each pixel.
    pub m_p: usize,
    /// Forward-backward intensity difference threshold, in normalized
    /// intensity (0.04 ~ 10 gray levels of an 8-bit capture).
    pub fb_threshold: f64,
    /// Subpixel quantization step.
    pub subpixel_step: f64,
    /// Block size for the final flow downsampling.
    pub downsample_factor: usize,
}

impl Default for GtConfig {
    fn default() -> Self {
        Self {
            m_p: 6,
            fb_threshold: 0.04,
            subpixel_step: SUBPIXEL_STEP,
            downsample_factor: 3,
        }
    }
}

impl GtConfig {
    pub fn validate(&self) -> Result<(), GtError> {
        if self.m_p < 1 {
            return Err(GtError::BadSearchRadius(self.m_p));
        }
        if !(self.fb_threshold > 0.0) {
            return Err(GtError::BadThreshold(self.fb_threshold));
        }
        if self.downsample_factor < 1 {
            return Err(GtError::BadDownsampleFactor(self.downsample_factor));
        }
        Ok(())
    }
}

/// Pipeline products: the downsampled ground-truth field plus the full
/// resolution intermediates.
#[derive(Debug, Clone)]
pub struct GtOutput {
    /// Final ground truth on the coarse grid.
    pub flow: FlowField,
    /// Refined full-resolution field before downsampling.
    pub full_res: FlowField,
    /// Occlusion/NAN mask at full resolution (true = unreliable).
    pub occlusion: Vec<bool>,
}

/// Run the full construction: descriptors, bidirectional window matching,
/// forward-backward labeling, subpixel refinement, downsampling.
pub fn build_ground_truth(
    nir1: &Raster,
    nir2: &Raster,
    config: &GtConfig,
) -> Result<GtOutput, GtError> {
    config.validate()?;
    let d1 = dense_descriptor(nir1)?;
    let d2 = dense_descriptor(nir2)?;
    let forward = match_window(&d1, &d2, config.m_p)?;
    let backward = match_window(&d2, &d1, config.m_p)?;
    let (cleaned, occlusion) = fb_consistency(&forward, &backward, nir1, nir2, config.fb_threshold)?;
    let full_res = lk_subpixel(nir1, nir2, &cleaned)?;
    let flow = downsample_flow(&full_res, config.downsample_factor)?;
    Ok(GtOutput {
        flow,
        full_res,
        occlusion,
    })
}

/// Render an occlusion mask as an 8-bit-style raster (0 = valid,
/// 255 = occluded), in normalized intensities.
pub fn occlusion_raster(mask: &[bool], width: usize, height: usize) -> Raster {
    let data = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    Raster::from_vec(width, height, 1, data).expect("mask dims")
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
        crate::pyramid::gaussian_blur(&r, 0.6)
    }

    #[test]
    fn identical_pair_gives_zero_flow_and_empty_mask() {
        let img = speckle(48, 36, 2);
        let out = build_ground_truth(&img, &img, &GtConfig::default()).unwrap();
        assert!(out.occlusion.iter().all(|&m| !m));
        for y in 0..out.flow.height() {
            for x in 0..out.flow.width() {
                assert_eq!(out.flow.get(x, y), (0.0, 0.0));
            }
        }
    }

    #[test]
    fn painted_occlusion_is_detected() {
        // Frame 2 paints a bright flat square over textured content; inside
        // the square every match within the window lands on paint, so the
        // forward-backward intensity check must reject it.
        let img = speckle(64, 56, 8);
        let mut img2 = img.clone();
        for y in 12..44 {
            for x in 16..48 {
                img2.set(x, y, 0, 0.95);
            }
        }
        let cfg = GtConfig {
            m_p: 2,
            ..GtConfig::default()
        };
        let d1 = dense_descriptor(&img).unwrap();
        let d2 = dense_descriptor(&img2).unwrap();
        let fwd = match_window(&d1, &d2, cfg.m_p).unwrap();
        let bwd = match_window(&d2, &d1, cfg.m_p).unwrap();
        let (_, mask) = fb_consistency(&fwd, &bwd, &img, &img2, cfg.fb_threshold).unwrap();
        let mut covered = 0;
        let mut area = 0;
        for y in 12..44 {
            for x in 16..48 {
                area += 1;
                if mask[y * 64 + x] {
                    covered += 1;
                }
            }
        }
        let overlap = covered as f64 / area as f64;
        assert!(overlap >= 0.8, "mask covers {overlap:.2} of the painted square");
    }
}
