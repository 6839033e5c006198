//! Joint entropy of channel pairs over randomly sampled patches.
//!
//! Measures how much information two spectral channels share: per sampled
//! patch location the mean intensity of each channel lands in a 2-D
//! histogram, and the entropy `H(X,Y) = -sum p log2 p` of the normalized
//! histogram is returned in bits. Complementary channels (e.g. NIR dye
//! speckle against gray) score higher than redundant ones (R against G).

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::raster::Raster;

#[derive(Debug, Error)]
pub enum EntropyError {
    #[error("channels are {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("need at least 2 bins per axis, got {0}")]
    TooFewBins(usize),
    #[error("patch size {0} exceeds image dimensions {1}x{2}")]
    PatchTooLarge(usize, usize, usize),
    #[error("need at least one sample patch")]
    NoSamples,
}

#[derive(Debug, Clone, Copy)]
pub struct EntropyConfig {
    pub n_patches: usize,
    pub patch_size: usize,
    pub bins: usize,
    pub seed: u64,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        Self {
            n_patches: 20_000,
            patch_size: 3,
            bins: 16,
            seed: 0,
        }
    }
}

/// Joint entropy of two aligned single-channel rasters, in bits.
pub fn joint_entropy(
    channel_a: &Raster,
    channel_b: &Raster,
    config: &EntropyConfig,
) -> Result<f64, EntropyError> {
    let (w, h) = (channel_a.width(), channel_a.height());
    if channel_b.width() != w || channel_b.height() != h {
        return Err(EntropyError::DimensionMismatch(
            w,
            h,
            channel_b.width(),
            channel_b.height(),
        ));
    }
    if config.bins < 2 {
        return Err(EntropyError::TooFewBins(config.bins));
    }
    if config.patch_size == 0 || config.patch_size > w || config.patch_size > h {
        return Err(EntropyError::PatchTooLarge(config.patch_size, w, h));
    }
    if config.n_patches == 0 {
        return Err(EntropyError::NoSamples);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bins = config.bins;
    let mut hist = vec![0u64; bins * bins];
    for _ in 0..config.n_patches {
        let x = rng.random_range(0..=w - config.patch_size);
        let y = rng.random_range(0..=h - config.patch_size);
        let ma = patch_mean(channel_a, x, y, config.patch_size);
        let mb = patch_mean(channel_b, x, y, config.patch_size);
        hist[bin_of(ma, bins) * bins + bin_of(mb, bins)] += 1;
    }

    // Summing unordered index pairs keeps H(A,B) and H(B,A) bit-identical:
    // transposing the histogram only swaps the two addends of each pair,
    // and IEEE addition is commutative.
    let n = config.n_patches as f64;
    let cell = |i: usize, j: usize| -> f64 {
        let c = hist[i * bins + j];
        if c == 0 {
            0.0
        } else {
            let p = c as f64 / n;
            -p * p.log2()
        }
    };
    let mut entropy = 0.0;
    for i in 0..bins {
        entropy += cell(i, i);
        for j in i + 1..bins {
            entropy += cell(i, j) + cell(j, i);
        }
    }
    Ok(entropy)
}

fn patch_mean(raster: &Raster, x: usize, y: usize, size: usize) -> f64 {
    let mut s = 0.0;
    for j in 0..size {
        for i in 0..size {
            s += raster.get(x + i, y + j, 0);
        }
    }
    s / (size * size) as f64
}

#[inline]
fn bin_of(value: f64, bins: usize) -> usize {
    ((value.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1)
}
