//! Raster containers, bicubic sampling and Sobel gradients.
//!
//! A [`Raster`] stores one image role (visible or NIR) as row-major,
//! channel-interleaved `f64` intensities normalized to `[0, 1]`. Rasters are
//! immutable after construction as far as the rest of the crate is concerned
//! and safe to share across threads.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("raster dimensions must be positive, got {width}x{height}")]
    EmptyRaster { width: usize, height: usize },
    #[error("channel count {0} out of range (1..=3 visible, 1 nir)")]
    BadChannelCount(usize),
    #[error("data length {got} does not match {width}x{height}x{channels}")]
    DataLengthMismatch {
        width: usize,
        height: usize,
        channels: usize,
        got: usize,
    },
    #[error("visible is {vis_width}x{vis_height} but nir is {nir_width}x{nir_height}")]
    DimensionMismatch {
        vis_width: usize,
        vis_height: usize,
        nir_width: usize,
        nir_height: usize,
    },
    #[error("image {width}x{height} smaller than the 3x3 kernel")]
    TooSmallForKernel { width: usize, height: usize },
}

/// Single-role image: `channels` interleaved intensity planes in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyRaster { width, height });
        }
        if channels == 0 || channels > 3 {
            return Err(RasterError::BadChannelCount(channels));
        }
        Ok(Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        })
    }

    pub fn from_vec(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, RasterError> {
        let mut r = Self::new(width, height, channels)?;
        if data.len() != r.data.len() {
            return Err(RasterError::DataLengthMismatch {
                width,
                height,
                channels,
                got: data.len(),
            });
        }
        r.data = data;
        Ok(r)
    }

    /// Constant-valued raster, mostly useful in tests and synthesis.
    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Self {
        let mut r = Self::new(width, height, channels).expect("constant raster dims");
        r.data.fill(value);
        r
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        debug_assert!(x < self.width && y < self.height && c < self.channels);
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        debug_assert!(x < self.width && y < self.height && c < self.channels);
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// All channels at a pixel.
    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Clamped-edge lookup: out-of-range indices replicate the border pixel.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize, c: usize) -> f64 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.get(xc, yc, c)
    }

    /// Extract one channel as a single-plane raster.
    pub fn channel(&self, c: usize) -> Raster {
        assert!(c < self.channels);
        let mut out = Raster::new(self.width, self.height, 1).expect("channel extract dims");
        for i in 0..self.width * self.height {
            out.data[i] = self.data[i * self.channels + c];
        }
        out
    }

    /// Mean intensity over all pixels and channels.
    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Bicubic (Catmull-Rom) sample of every channel at real coordinates.
    ///
    /// Taps outside the image replicate the border (clamped-edge extension).
    /// Returns `true` when any tap of the 4x4 stencil required clamping,
    /// i.e. the stencil leaves the image.
    pub fn sample_bicubic_into(&self, x: f64, y: f64, out: &mut [f64]) -> bool {
        debug_assert_eq!(out.len(), self.channels);
        let (x0, wx) = cubic_setup(x);
        let (y0, wy) = cubic_setup(y);
        out.fill(0.0);
        for (j, &wyj) in wy.iter().enumerate() {
            let yj = y0 + j as isize - 1;
            for (i, &wxi) in wx.iter().enumerate() {
                let xi = x0 + i as isize - 1;
                let w = wyj * wxi;
                for c in 0..self.channels {
                    out[c] += w * self.get_clamped(xi, yj, c);
                }
            }
        }
        stencil_leaves(x0, y0, self.width, self.height)
    }

    /// Convenience wrapper over [`Raster::sample_bicubic_into`].
    pub fn sample_bicubic(&self, x: f64, y: f64) -> (Vec<f64>, bool) {
        let mut out = vec![0.0; self.channels];
        let oob = self.sample_bicubic_into(x, y, &mut out);
        (out, oob)
    }

    /// Bicubic sample together with the analytic spatial derivatives of the
    /// interpolant. The derivatives are exact for the Catmull-Rom surface,
    /// which keeps solver linearizations consistent with finite differences
    /// of the sampled energy.
    pub fn sample_bicubic_with_grad_into(
        &self,
        x: f64,
        y: f64,
        val: &mut [f64],
        dx: &mut [f64],
        dy: &mut [f64],
    ) -> bool {
        debug_assert_eq!(val.len(), self.channels);
        let (x0, wx) = cubic_setup(x);
        let (y0, wy) = cubic_setup(y);
        let dwx = cubic_deriv_weights(x - x0 as f64);
        let dwy = cubic_deriv_weights(y - y0 as f64);
        val.fill(0.0);
        dx.fill(0.0);
        dy.fill(0.0);
        for j in 0..4 {
            let yj = y0 + j as isize - 1;
            for i in 0..4 {
                let xi = x0 + i as isize - 1;
                let wv = wy[j] * wx[i];
                let wdx = wy[j] * dwx[i];
                let wdy = dwy[j] * wx[i];
                for c in 0..self.channels {
                    let s = self.get_clamped(xi, yj, c);
                    val[c] += wv * s;
                    dx[c] += wdx * s;
                    dy[c] += wdy * s;
                }
            }
        }
        stencil_leaves(x0, y0, self.width, self.height)
    }
}

#[inline]
fn stencil_leaves(x0: isize, y0: isize, width: usize, height: usize) -> bool {
    x0 < 1 || y0 < 1 || x0 + 2 > width as isize - 1 || y0 + 2 > height as isize - 1
}

/// Base tap index and the four Catmull-Rom weights for one axis.
#[inline]
fn cubic_setup(x: f64) -> (isize, [f64; 4]) {
    let x0 = x.floor();
    let t = x - x0;
    (x0 as isize, cubic_weights(t))
}

#[inline]
fn cubic_weights(t: f64) -> [f64; 4] {
    // Catmull-Rom (tension -0.5): interpolating, reproduces linears exactly.
    let t2 = t * t;
    let t3 = t2 * t;
    [
        -0.5 * t3 + t2 - 0.5 * t,
        1.5 * t3 - 2.5 * t2 + 1.0,
        -1.5 * t3 + 2.0 * t2 + 0.5 * t,
        0.5 * t3 - 0.5 * t2,
    ]
}

#[inline]
fn cubic_deriv_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    [
        -1.5 * t2 + 2.0 * t - 0.5,
        4.5 * t2 - 5.0 * t,
        -4.5 * t2 + 4.0 * t + 0.5,
        1.5 * t2 - t,
    ]
}

/// Aligned visible (1-3 channels) and optional NIR (1 channel) rasters
/// sharing a single coordinate frame.
#[derive(Debug, Clone)]
pub struct MultispectralImage {
    pub visible: Raster,
    pub nir: Option<Raster>,
}

impl MultispectralImage {
    pub fn new(visible: Raster, nir: Option<Raster>) -> Result<Self, RasterError> {
        if let Some(n) = &nir {
            if n.width() != visible.width() || n.height() != visible.height() {
                return Err(RasterError::DimensionMismatch {
                    vis_width: visible.width(),
                    vis_height: visible.height(),
                    nir_width: n.width(),
                    nir_height: n.height(),
                });
            }
            if n.channels() != 1 {
                return Err(RasterError::BadChannelCount(n.channels()));
            }
        }
        Ok(Self { visible, nir })
    }

    pub fn width(&self) -> usize {
        self.visible.width()
    }

    pub fn height(&self) -> usize {
        self.visible.height()
    }
}

/// Per-pixel (gx, gy) for each channel of the source raster.
#[derive(Debug, Clone)]
pub struct GradientField {
    width: usize,
    height: usize,
    channels: usize,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl GradientField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn gx(&self, x: usize, y: usize, c: usize) -> f64 {
        self.gx[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn gy(&self, x: usize, y: usize, c: usize) -> f64 {
        self.gy[(y * self.width + x) * self.channels + c]
    }

    /// Euclidean gradient magnitude over all channels at a pixel.
    #[inline]
    pub fn magnitude(&self, x: usize, y: usize) -> f64 {
        let i = (y * self.width + x) * self.channels;
        let mut s = 0.0;
        for c in 0..self.channels {
            s += self.gx[i + c] * self.gx[i + c] + self.gy[i + c] * self.gy[i + c];
        }
        s.sqrt()
    }
}

/// 3x3 Sobel gradients per channel with clamped-edge boundary handling.
///
/// The kernels carry a 1/4 normalization ({1,2,1} x {-1,0,1} / 4) so that a
/// unit step edge yields a unit gradient.
pub fn sobel_gradient(raster: &Raster) -> Result<GradientField, RasterError> {
    let (w, h, ch) = (raster.width(), raster.height(), raster.channels());
    if w < 3 || h < 3 {
        return Err(RasterError::TooSmallForKernel {
            width: w,
            height: h,
        });
    }
    let mut gx = vec![0.0; w * h * ch];
    let mut gy = vec![0.0; w * h * ch];
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            for c in 0..ch {
                let tl = raster.get_clamped(xi - 1, yi - 1, c);
                let tc = raster.get_clamped(xi, yi - 1, c);
                let tr = raster.get_clamped(xi + 1, yi - 1, c);
                let ml = raster.get_clamped(xi - 1, yi, c);
                let mr = raster.get_clamped(xi + 1, yi, c);
                let bl = raster.get_clamped(xi - 1, yi + 1, c);
                let bc = raster.get_clamped(xi, yi + 1, c);
                let br = raster.get_clamped(xi + 1, yi + 1, c);
                let i = (y * w + x) * ch + c;
                gx[i] = ((tr + 2.0 * mr + br) - (tl + 2.0 * ml + bl)) / 4.0;
                gy[i] = ((bl + 2.0 * bc + br) - (tl + 2.0 * tc + tr)) / 4.0;
            }
        }
    }
    Ok(GradientField {
        width: w,
        height: h,
        channels: ch,
        gx,
        gy,
    })
}

/// Central-difference derivative rasters ((I(x+1)-I(x-1))/2, clamped edges).
///
/// This matches the Catmull-Rom interpolant's derivative at grid nodes, so
/// data terms built on these rasters stay consistent with bicubic warping.
pub fn central_diff(raster: &Raster) -> (Raster, Raster) {
    let (w, h, ch) = (raster.width(), raster.height(), raster.channels());
    let mut dx = Raster::new(w, h, ch).expect("central diff dims");
    let mut dy = Raster::new(w, h, ch).expect("central diff dims");
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            for c in 0..ch {
                let vx =
                    (raster.get_clamped(xi + 1, yi, c) - raster.get_clamped(xi - 1, yi, c)) / 2.0;
                let vy =
                    (raster.get_clamped(xi, yi + 1, c) - raster.get_clamped(xi, yi - 1, c)) / 2.0;
                dx.set(x, y, c, vx);
                dy.set(x, y, c, vy);
            }
        }
    }
    (dx, dy)
}
