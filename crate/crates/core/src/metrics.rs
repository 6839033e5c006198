//! Flow error metrics: endpoint/angle error maps, summary statistics,
//! sequence accumulation and raster rendering.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::FlowField;
use crate::raster::Raster;

/// RX threshold set reported for endpoint error.
pub const EE_THRESHOLDS: [f64; 4] = [0.5, 0.75, 1.0, 2.0];
/// RX threshold set reported for angle error.
pub const AE_THRESHOLDS: [f64; 4] = [2.0, 5.0, 7.5, 10.0];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("fields are {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("no valid pixels to aggregate")]
    EmptyValidSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    /// Endpoint error in pixels.
    EE,
    /// Angle error in degrees (space-time augmented vectors).
    AE,
}

impl ErrorKind {
    pub fn default_thresholds(&self) -> &'static [f64; 4] {
        match self {
            ErrorKind::EE => &EE_THRESHOLDS,
            ErrorKind::AE => &AE_THRESHOLDS,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ErrorKind::EE => "ee",
            ErrorKind::AE => "ae",
        }
    }
}

/// Per-pixel error values; pixels under a ground-truth sentinel are invalid
/// and excluded from every statistic.
#[derive(Debug, Clone)]
pub struct ErrorMap {
    pub kind: ErrorKind,
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
    /// Pixels where the estimate carried a sentinel: the error is computed
    /// against (0,0) and the pixel is flagged, so sparse submissions still
    /// pay for the gap.
    est_missing: Vec<bool>,
}

impl ErrorMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn n_est_missing(&self) -> usize {
        self.est_missing.iter().filter(|&&v| v).count()
    }

    /// Valid error values in row-major order.
    pub fn valid_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.valid)
            .filter_map(|(&v, &ok)| ok.then_some(v))
            .collect()
    }
}

fn check_dims(gt: &FlowField, est: &FlowField) -> Result<(), MetricsError> {
    if gt.width() != est.width() || gt.height() != est.height() {
        return Err(MetricsError::DimensionMismatch(
            gt.width(),
            gt.height(),
            est.width(),
            est.height(),
        ));
    }
    Ok(())
}

fn error_map_with(
    gt: &FlowField,
    est: &FlowField,
    kind: ErrorKind,
    f: impl Fn(f64, f64, f64, f64) -> f64,
) -> Result<ErrorMap, MetricsError> {
    check_dims(gt, est)?;
    let (w, h) = (gt.width(), gt.height());
    let mut values = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    let mut est_missing = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !gt.is_valid(x, y) {
                continue;
            }
            valid[i] = true;
            let (ug, vg) = gt.get(x, y);
            let (ue, ve) = if est.is_valid(x, y) {
                est.get(x, y)
            } else {
                est_missing[i] = true;
                (0.0, 0.0)
            };
            values[i] = f(ug as f64, vg as f64, ue as f64, ve as f64);
        }
    }
    Ok(ErrorMap {
        kind,
        width: w,
        height: h,
        values,
        valid,
        est_missing,
    })
}

/// Endpoint error: Euclidean distance between estimated and ground-truth
/// displacement, per valid ground-truth pixel.
pub fn endpoint_error(gt: &FlowField, est: &FlowField) -> Result<ErrorMap, MetricsError> {
    error_map_with(gt, est, ErrorKind::EE, |ug, vg, ue, ve| {
        ((ue - ug) * (ue - ug) + (ve - vg) * (ve - vg)).sqrt()
    })
}

/// Angle error in degrees between the space-time augmented vectors
/// (u, v, 1), with the cosine clamped to [-1, 1].
pub fn angle_error(gt: &FlowField, est: &FlowField) -> Result<ErrorMap, MetricsError> {
    error_map_with(gt, est, ErrorKind::AE, |ug, vg, ue, ve| {
        let num = ug * ue + vg * ve + 1.0;
        let den = ((ug * ug + vg * vg + 1.0) * (ue * ue + ve * ve + 1.0)).sqrt();
        (num / den).clamp(-1.0, 1.0).acos().to_degrees()
    })
}

/// One reported RX entry: the fraction of pixels whose error reads strictly
/// above the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RxEntry {
    pub threshold: f64,
    pub fraction: f64,
}

/// Aggregate statistics of one error map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub n_valid: usize,
    /// Pixels where the estimate was missing and penalized as zero motion.
    pub n_est_missing: usize,
    pub avg: f64,
    /// Population standard deviation.
    pub sd: f64,
    pub a50: f64,
    pub a75: f64,
    pub a99: f64,
    pub a100: f64,
    pub rx: Vec<RxEntry>,
}

/// Error value at the X-th percentile of the ascending sort: 0-based rank
/// `ceil(X * n / 100) - 1`.
fn percentile(sorted: &[f64], x: f64) -> f64 {
    let n = sorted.len();
    let rank = ((x * n as f64 / 100.0).ceil() as usize).max(1) - 1;
    sorted[rank.min(n - 1)]
}

/// Compute Avg/SD/AX/RX for an error map.
pub fn compute_stats(errs: &ErrorMap, r_thresholds: &[f64]) -> Result<ErrorStats, MetricsError> {
    let mut values = errs.valid_values();
    if values.is_empty() {
        return Err(MetricsError::EmptyValidSet);
    }
    let n = values.len() as f64;
    let avg = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - avg) * (v - avg)).sum::<f64>() / n).sqrt();
    let rx = r_thresholds
        .iter()
        .map(|&threshold| RxEntry {
            threshold,
            fraction: values.iter().filter(|&&v| v > threshold).count() as f64 / n,
        })
        .collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(ErrorStats {
        n_valid: values.len(),
        n_est_missing: errs.n_est_missing(),
        avg,
        sd,
        a50: percentile(&values, 50.0),
        a75: percentile(&values, 75.0),
        a99: percentile(&values, 99.0),
        a100: *values.last().unwrap(),
        rx,
    })
}

/// Per-frame statistics of a sequence plus the running accumulated Avg.EE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceStats {
    pub per_frame: Vec<ErrorStats>,
    /// acc_ee[k] = sum of avg over frames 0..=k.
    pub acc_ee: Vec<f64>,
}

/// Accumulate per-frame endpoint-error statistics into a sequence record.
pub fn accumulate_sequence(per_frame: &[ErrorStats]) -> Result<SequenceStats, MetricsError> {
    if per_frame.is_empty() {
        return Err(MetricsError::EmptyValidSet);
    }
    let mut acc_ee = Vec::with_capacity(per_frame.len());
    let mut running = 0.0;
    for stats in per_frame {
        running += stats.avg;
        acc_ee.push(running);
    }
    Ok(SequenceStats {
        per_frame: per_frame.to_vec(),
        acc_ee,
    })
}

/// Render an error map as a grayscale raster: `clamp(err / scale) * 255`,
/// with invalid pixels black.
pub fn render_error_map(errs: &ErrorMap, scale: f64) -> Raster {
    let (w, h) = (errs.width(), errs.height());
    let mut out = Raster::new(w, h, 1).expect("render dims");
    for y in 0..h {
        for x in 0..w {
            if errs.is_valid(x, y) {
                out.set(x, y, 0, (errs.value(x, y) / scale).clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// Render a flow field with the hue-wheel coding: hue encodes direction,
/// saturation encodes magnitude relative to the field maximum, invalid
/// pixels are black.
pub fn render_flow(field: &FlowField) -> Raster {
    let (w, h) = (field.width(), field.height());
    let mut max_mag = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            if field.is_valid(x, y) {
                let (u, v) = field.get(x, y);
                max_mag = max_mag.max(((u * u + v * v) as f64).sqrt());
            }
        }
    }
    let mut out = Raster::new(w, h, 3).expect("render dims");
    for y in 0..h {
        for x in 0..w {
            if !field.is_valid(x, y) {
                continue;
            }
            let (u, v) = field.get(x, y);
            let mag = ((u * u + v * v) as f64).sqrt();
            let mut hue = (v as f64).atan2(u as f64).to_degrees();
            if hue < 0.0 {
                hue += 360.0;
            }
            let sat = if max_mag > 0.0 { mag / max_mag } else { 0.0 };
            let (r, g, b) = hsv_to_rgb(hue, sat, 1.0);
            out.set(x, y, 0, r);
            out.set(x, y, 1, g);
            out.set(x, y, 2, b);
        }
    }
    out
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let hp = h / 60.0;
    let xx = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as usize {
        0 => (c, xx, 0.0),
        1 => (xx, c, 0.0),
        2 => (0.0, c, xx),
        3 => (0.0, xx, c),
        4 => (xx, 0.0, c),
        _ => (c, 0.0, xx),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}
