//! Coarse-to-fine variational solver for the combined RGB-NIR flow energy.
//!
//! The minimized energy blends a visible data term (intensity plus gradient
//! constancy), a NIR intensity-constancy term and a shared smoothness term:
//!
//! ```text
//! E(w) = sum_x (1 - lambda(x)) Ev + lambda(x) En + gamma Es
//! ```
//!
//! with the robust penalty `phi(s^2) = sqrt(s^2 + eps^2)` on every term.
//! Minimization runs nested fixed-point iterations per pyramid level: the
//! outer loop re-warps the second frame about the current flow and
//! linearizes the data terms to first order; the inner loop lags the
//! `phi'` nonlinearity weights and solves the resulting coupled linear
//! system with successive over-relaxation.

pub mod sor;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::FlowField;
use crate::pyramid::{build_pyramid, rescale_flow, PyramidError, PyramidLevel};
use crate::raster::{central_diff, MultispectralImage, Raster};
use crate::weight::{compute_lambda, WeightError, WeightMap};

pub use sor::{sor_solve, CoupledSystem, SweepOrder};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("relaxation parameter must lie in (0,2), got {0}")]
    BadRelaxation(f64),
    #[error("linear system contains non-finite coefficients")]
    NonFiniteCoefficients,
    #[error("frames are {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("mode {0} needs a NIR channel but none is present")]
    MissingNir(&'static str),
    #[error("parameter {name} = {value} out of range")]
    BadParameter { name: &'static str, value: f64 },
    #[error(transparent)]
    Pyramid(#[from] PyramidError),
    #[error(transparent)]
    Weight(#[from] WeightError),
}

/// Which channels feed the data term, and with what weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ChannelMode {
    /// Per-pixel logistic weight from relative gradient strength.
    DetailAware,
    /// Constant weight in [0,1].
    Fixed(f64),
    /// Visible data term only (lambda = 0).
    RgbOnly,
    /// NIR data term only (lambda = 1).
    NirOnly,
}

impl ChannelMode {
    pub fn name(&self) -> &'static str {
        match self {
            ChannelMode::DetailAware => "detail_aware",
            ChannelMode::Fixed(_) => "fixed",
            ChannelMode::RgbOnly => "rgb_only",
            ChannelMode::NirOnly => "nir_only",
        }
    }

    fn needs_nir(&self) -> bool {
        !matches!(self, ChannelMode::RgbOnly)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverParams {
    /// Smoothness weight.
    pub gamma: f64,
    /// Gradient-constancy weight in [0,1].
    pub theta: f64,
    /// Robust penalty epsilon.
    pub epsilon: f64,
    pub pyramid_factor: f64,
    /// Shortest allowed side of the coarsest pyramid level.
    pub min_level_size: usize,
    /// Warping iterations per level.
    pub outer_iters: usize,
    /// Lagged-nonlinearity iterations per warp.
    pub inner_iters: usize,
    pub sor_iters: usize,
    pub sor_omega: f64,
    pub sor_tol: f64,
    pub mode: ChannelMode,
    /// Logistic steepness for the detail-aware weight.
    pub lambda_steepness: f64,
    /// Logistic midpoint for the detail-aware weight.
    pub lambda_midpoint: f64,
    /// Recompute the weight map from each level's own rasters instead of
    /// resampling the full-resolution map.
    pub lambda_per_level: bool,
    /// Row-major Gauss-Seidel sweeps instead of red-black, for debugging.
    pub sequential_sor: bool,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            // Balanced against [0,1] intensities: the robust penalty caps
            // phi' at 1/(2*epsilon), so smoothness weights far above the
            // data-term scale (gradients ~0.1 intensity/px) stall the
            // linear solves.
            gamma: 0.3,
            theta: 0.5,
            epsilon: 0.001,
            pyramid_factor: 0.75,
            min_level_size: 16,
            outer_iters: 5,
            inner_iters: 5,
            sor_iters: 30,
            sor_omega: 1.9,
            sor_tol: 1e-4,
            mode: ChannelMode::DetailAware,
            lambda_steepness: 10.0,
            lambda_midpoint: 0.5,
            lambda_per_level: false,
            sequential_sor: false,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<(), SolverError> {
        let checks: [(&'static str, f64, bool); 7] = [
            ("gamma", self.gamma, self.gamma > 0.0 && self.gamma.is_finite()),
            ("theta", self.theta, (0.0..=1.0).contains(&self.theta)),
            ("epsilon", self.epsilon, self.epsilon > 0.0),
            (
                "pyramid_factor",
                self.pyramid_factor,
                self.pyramid_factor > 0.0 && self.pyramid_factor < 1.0,
            ),
            (
                "sor_omega",
                self.sor_omega,
                self.sor_omega > 0.0 && self.sor_omega < 2.0,
            ),
            ("sor_tol", self.sor_tol, self.sor_tol > 0.0),
            (
                "lambda_steepness",
                self.lambda_steepness,
                self.lambda_steepness > 0.0,
            ),
        ];
        for (name, value, ok) in checks {
            if !ok {
                return Err(SolverError::BadParameter { name, value });
            }
        }
        if let ChannelMode::Fixed(l) = self.mode {
            if !(0.0..=1.0).contains(&l) {
                return Err(SolverError::BadParameter {
                    name: "fixed lambda",
                    value: l,
                });
            }
        }
        Ok(())
    }

    fn sweep_order(&self) -> SweepOrder {
        if self.sequential_sor {
            SweepOrder::Sequential
        } else {
            SweepOrder::RedBlack
        }
    }
}

/// Robust penalty `phi(s^2) = sqrt(s^2 + eps^2)`.
#[inline]
pub fn phi(s2: f64, epsilon: f64) -> f64 {
    (s2 + epsilon * epsilon).sqrt()
}

/// Derivative of the robust penalty with respect to `s^2`.
#[inline]
pub fn phi_prime(s2: f64, epsilon: f64) -> f64 {
    0.5 / (s2 + epsilon * epsilon).sqrt()
}

/// Per-term energies; integrals are approximated by pixel sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub e_visible: f64,
    pub e_nir: f64,
    pub e_smooth: f64,
    /// Combined energy with the per-pixel weight inside the sum.
    pub e_total: f64,
}

/// One energy measurement along the coarse-to-fine schedule.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub level: usize,
    pub width: usize,
    pub height: usize,
    /// 0 = before the first warp of the level, k = after outer iteration k.
    pub outer_iter: usize,
    pub energy: EnergyBreakdown,
}

/// Solver output: dense flow plus the energy trace and the weight map used.
#[derive(Debug, Clone)]
pub struct FlowResult {
    pub flow: FlowField,
    pub trace: Vec<EnergyRecord>,
    pub lambda: WeightMap,
}

/// Warp a raster by a dense displacement field: `out(x) = r(x + w(x))`,
/// sampled bicubically with clamped-edge extension. The mask marks pixels
/// whose 4x4 sampling stencil leaves the image.
pub fn warp_image(raster: &Raster, flow: &FlowField) -> Result<(Raster, Vec<bool>), SolverError> {
    if raster.width() != flow.width() || raster.height() != flow.height() {
        return Err(SolverError::DimensionMismatch(
            raster.width(),
            raster.height(),
            flow.width(),
            flow.height(),
        ));
    }
    let u: Vec<f64> = flow.u_plane().iter().map(|&x| x as f64).collect();
    let v: Vec<f64> = flow.v_plane().iter().map(|&x| x as f64).collect();
    Ok(warp_raster(raster, &u, &v))
}

fn warp_raster(raster: &Raster, u: &[f64], v: &[f64]) -> (Raster, Vec<bool>) {
    let (w, h, ch) = (raster.width(), raster.height(), raster.channels());
    let mut data = vec![0.0; w * h * ch];
    let mut oob = vec![false; w * h];
    data.par_chunks_mut(w * ch)
        .zip(oob.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (row, oob_row))| {
            for x in 0..w {
                let i = y * w + x;
                let sx = x as f64 + u[i];
                let sy = y as f64 + v[i];
                oob_row[x] = raster.sample_bicubic_into(sx, sy, &mut row[x * ch..(x + 1) * ch]);
            }
        });
    (
        Raster::from_vec(w, h, ch, data).expect("warp output dims"),
        oob,
    )
}

/// Warped values plus the analytic spatial derivatives of the warped
/// interpolant, flattened as `n_pixels * channels`.
fn warp_raster_with_grad(
    raster: &Raster,
    u: &[f64],
    v: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<bool>) {
    let (w, h, ch) = (raster.width(), raster.height(), raster.channels());
    let mut val = vec![0.0; w * h * ch];
    let mut dx = vec![0.0; w * h * ch];
    let mut dy = vec![0.0; w * h * ch];
    let mut oob = vec![false; w * h];
    val.par_chunks_mut(w * ch)
        .zip(dx.par_chunks_mut(w * ch))
        .zip(dy.par_chunks_mut(w * ch))
        .zip(oob.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (((vrow, xrow), yrow), oob_row))| {
            for x in 0..w {
                let i = y * w + x;
                let r = x * ch..(x + 1) * ch;
                oob_row[x] = raster.sample_bicubic_with_grad_into(
                    x as f64 + u[i],
                    y as f64 + v[i],
                    &mut vrow[r.clone()],
                    &mut xrow[r.clone()],
                    &mut yrow[r],
                );
            }
        });
    (val, dx, dy, oob)
}

/// Borrowed per-level inputs for one frame pair.
#[derive(Debug, Clone, Copy)]
pub struct LevelPair<'a> {
    pub vis1: &'a Raster,
    pub nir1: Option<&'a Raster>,
    pub vis2: &'a Raster,
    pub nir2: Option<&'a Raster>,
    pub lambda: &'a WeightMap,
}

impl<'a> LevelPair<'a> {
    pub fn from_levels(l1: &'a PyramidLevel, l2: &'a PyramidLevel) -> Self {
        Self {
            vis1: &l1.visible,
            nir1: l1.nir.as_ref(),
            vis2: &l2.visible,
            nir2: l2.nir.as_ref(),
            lambda: &l1.lambda,
        }
    }

    fn width(&self) -> usize {
        self.vis1.width()
    }

    fn height(&self) -> usize {
        self.vis1.height()
    }

    fn check_dims(&self) -> Result<(), SolverError> {
        let (w, h) = (self.width(), self.height());
        let all_match = self.vis2.width() == w
            && self.vis2.height() == h
            && self.lambda.width() == w
            && self.lambda.height() == h
            && self.nir1.map_or(true, |n| n.width() == w && n.height() == h)
            && self.nir2.map_or(true, |n| n.width() == w && n.height() == h);
        if all_match {
            Ok(())
        } else {
            Err(SolverError::DimensionMismatch(
                w,
                h,
                self.vis2.width(),
                self.vis2.height(),
            ))
        }
    }
}

/// First-order expansion of the data terms about a warp: residual constants
/// and the derivatives of each warped quantity with respect to (du, dv).
/// All channel arrays are flattened `n_pixels * channels`.
pub struct Linearization {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Pixels whose warp stencil left the image; their data terms are
    /// disabled during assembly.
    pub oob: Vec<bool>,
    /// Visible intensity residual and derivatives.
    pub iz: Vec<f64>,
    pub ix: Vec<f64>,
    pub iy: Vec<f64>,
    /// x-derivative plane of the visible frame: residual and derivatives.
    pub ixz: Vec<f64>,
    pub ixx: Vec<f64>,
    pub ixy: Vec<f64>,
    /// y-derivative plane of the visible frame: residual and derivatives.
    pub iyz: Vec<f64>,
    pub iyx: Vec<f64>,
    pub iyy: Vec<f64>,
    /// NIR intensity residual and derivatives (empty without a NIR channel).
    pub nz: Vec<f64>,
    pub nx: Vec<f64>,
    pub ny: Vec<f64>,
}

/// Linearize the data terms about the warp `(u, v)`.
///
/// Gradient-constancy planes are the central-difference derivative rasters
/// of each frame; their warped derivatives come from the analytic gradient
/// of the bicubic interpolant, which keeps the expansion consistent with
/// finite differences of [`evaluate_energy`].
pub fn linearize(pair: &LevelPair, u: &[f64], v: &[f64]) -> Result<Linearization, SolverError> {
    pair.check_dims()?;
    let (w, h) = (pair.width(), pair.height());
    let ch = pair.vis1.channels();
    let n = w * h;
    assert_eq!(u.len(), n);
    assert_eq!(v.len(), n);

    let (v1x, v1y) = central_diff(pair.vis1);
    let (v2x, v2y) = central_diff(pair.vis2);

    let (mut iz, ix, iy, oob) = warp_raster_with_grad(pair.vis2, u, v);
    let (mut ixz, ixx, ixy, _) = warp_raster_with_grad(&v2x, u, v);
    let (mut iyz, iyx, iyy, _) = warp_raster_with_grad(&v2y, u, v);
    for i in 0..n * ch {
        iz[i] -= pair.vis1.data()[i];
        ixz[i] -= v1x.data()[i];
        iyz[i] -= v1y.data()[i];
    }

    let (nz, nx, ny) = match (pair.nir1, pair.nir2) {
        (Some(n1), Some(n2)) => {
            let (mut nz, nx, ny, _) = warp_raster_with_grad(n2, u, v);
            for i in 0..n {
                nz[i] -= n1.data()[i];
            }
            (nz, nx, ny)
        }
        _ => (Vec::new(), Vec::new(), Vec::new()),
    };

    Ok(Linearization {
        width: w,
        height: h,
        channels: ch,
        oob,
        iz,
        ix,
        iy,
        ixz,
        ixx,
        ixy,
        iyz,
        iyx,
        iyy,
        nz,
        nx,
        ny,
    })
}

/// Assemble the coupled linear system for the increment `(du, dv)` given a
/// linearization, the current flow and the current increment estimate (which
/// feeds the lagged `phi'` weights).
pub fn assemble_system(
    lin: &Linearization,
    u: &[f64],
    v: &[f64],
    du: &[f64],
    dv: &[f64],
    lambda: &WeightMap,
    params: &SolverParams,
) -> CoupledSystem {
    let (w, h, ch) = (lin.width, lin.height, lin.channels);
    let n = w * h;
    let eps = params.epsilon;
    let has_nir = !lin.nz.is_empty();

    // Lagged smoothness diffusivity at the current total flow w + dw.
    let mut diffusivity = vec![0.0; n];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (tu, tv) = (u[i] + du[i], v[i] + dv[i]);
            let (ux, uy, vx, vy) = if x + 1 < w && y + 1 < h {
                (
                    u[i + 1] + du[i + 1] - tu,
                    u[i + w] + du[i + w] - tu,
                    v[i + 1] + dv[i + 1] - tv,
                    v[i + w] + dv[i + w] - tv,
                )
            } else {
                let ux = if x + 1 < w { u[i + 1] + du[i + 1] - tu } else { 0.0 };
                let uy = if y + 1 < h { u[i + w] + du[i + w] - tu } else { 0.0 };
                let vx = if x + 1 < w { v[i + 1] + dv[i + 1] - tv } else { 0.0 };
                let vy = if y + 1 < h { v[i + w] + dv[i + w] - tv } else { 0.0 };
                (ux, uy, vx, vy)
            };
            diffusivity[i] = phi_prime(ux * ux + uy * uy + vx * vx + vy * vy, eps);
        }
    }

    let mut sys = CoupledSystem::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let lam = lambda.get(x, y);

            if !lin.oob[i] {
                // Data robustness weights from the current increment.
                let mut rv = 0.0;
                let mut rg = 0.0;
                for c in 0..ch {
                    let k = i * ch + c;
                    let r = lin.iz[k] + lin.ix[k] * du[i] + lin.iy[k] * dv[i];
                    rv += r * r;
                    let rx = lin.ixz[k] + lin.ixx[k] * du[i] + lin.ixy[k] * dv[i];
                    let ry = lin.iyz[k] + lin.iyx[k] * du[i] + lin.iyy[k] * dv[i];
                    rg += rx * rx + ry * ry;
                }
                let wv = (1.0 - lam) * phi_prime(rv, eps);
                let wg = (1.0 - lam) * params.theta * phi_prime(rg, eps);
                for c in 0..ch {
                    let k = i * ch + c;
                    sys.a11[i] += wv * lin.ix[k] * lin.ix[k]
                        + wg * (lin.ixx[k] * lin.ixx[k] + lin.iyx[k] * lin.iyx[k]);
                    sys.a12[i] += wv * lin.ix[k] * lin.iy[k]
                        + wg * (lin.ixx[k] * lin.ixy[k] + lin.iyx[k] * lin.iyy[k]);
                    sys.a22[i] += wv * lin.iy[k] * lin.iy[k]
                        + wg * (lin.ixy[k] * lin.ixy[k] + lin.iyy[k] * lin.iyy[k]);
                    sys.rhs_u[i] -= wv * lin.ix[k] * lin.iz[k]
                        + wg * (lin.ixx[k] * lin.ixz[k] + lin.iyx[k] * lin.iyz[k]);
                    sys.rhs_v[i] -= wv * lin.iy[k] * lin.iz[k]
                        + wg * (lin.ixy[k] * lin.ixz[k] + lin.iyy[k] * lin.iyz[k]);
                }
                if has_nir {
                    let r = lin.nz[i] + lin.nx[i] * du[i] + lin.ny[i] * dv[i];
                    let wn = lam * phi_prime(r * r, eps);
                    sys.a11[i] += wn * lin.nx[i] * lin.nx[i];
                    sys.a12[i] += wn * lin.nx[i] * lin.ny[i];
                    sys.a22[i] += wn * lin.ny[i] * lin.ny[i];
                    sys.rhs_u[i] -= wn * lin.nx[i] * lin.nz[i];
                    sys.rhs_v[i] -= wn * lin.ny[i] * lin.nz[i];
                }
            }

            // Smoothness couplings and the force exerted by the current flow.
            let mut add_edge = |j: usize, slot: &mut [f64]| {
                let g = params.gamma * 0.5 * (diffusivity[i] + diffusivity[j]);
                slot[i] = g;
                sys.rhs_u[i] += g * (u[j] - u[i]);
                sys.rhs_v[i] += g * (v[j] - v[i]);
            };
            if x + 1 < w {
                add_edge(i + 1, &mut sys.w_right);
            }
            if x > 0 {
                add_edge(i - 1, &mut sys.w_left);
            }
            if y > 0 {
                add_edge(i - w, &mut sys.w_up);
            }
            if y + 1 < h {
                add_edge(i + w, &mut sys.w_down);
            }
        }
    }
    sys
}

/// Warp, linearize and assemble the Euler-Lagrange system about `(u, v)`
/// with a zero increment. Convenience entry point for system-level checks.
pub fn build_level_system(
    pair: &LevelPair,
    u: &[f64],
    v: &[f64],
    params: &SolverParams,
) -> Result<CoupledSystem, SolverError> {
    let lin = linearize(pair, u, v)?;
    let zeros = vec![0.0; u.len()];
    Ok(assemble_system(&lin, u, v, &zeros, &zeros, pair.lambda, params))
}

/// Discrete energy of a flow estimate (f64 planes variant).
pub fn evaluate_energy_uv(
    pair: &LevelPair,
    u: &[f64],
    v: &[f64],
    params: &SolverParams,
) -> Result<EnergyBreakdown, SolverError> {
    pair.check_dims()?;
    let (w, h) = (pair.width(), pair.height());
    let ch = pair.vis1.channels();
    let n = w * h;
    let eps = params.epsilon;

    let (v1x, v1y) = central_diff(pair.vis1);
    let (v2x, v2y) = central_diff(pair.vis2);
    let (wv2, _) = warp_raster(pair.vis2, u, v);
    let (wv2x, _) = warp_raster(&v2x, u, v);
    let (wv2y, _) = warp_raster(&v2y, u, v);
    let warped_nir = match (pair.nir1, pair.nir2) {
        (Some(_), Some(n2)) => Some(warp_raster(n2, u, v).0),
        _ => None,
    };

    let mut e_visible = 0.0;
    let mut e_nir = 0.0;
    let mut e_smooth = 0.0;
    let mut e_total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut sv = 0.0;
            let mut sg = 0.0;
            for c in 0..ch {
                let k = i * ch + c;
                let d = wv2.data()[k] - pair.vis1.data()[k];
                sv += d * d;
                let dgx = wv2x.data()[k] - v1x.data()[k];
                let dgy = wv2y.data()[k] - v1y.data()[k];
                sg += dgx * dgx + dgy * dgy;
            }
            let pv = phi(sv, eps) + params.theta * phi(sg, eps);
            e_visible += pv;

            let pn = match (&warped_nir, pair.nir1) {
                (Some(wn), Some(n1)) => {
                    let d = wn.data()[i] - n1.data()[i];
                    phi(d * d, eps)
                }
                _ => 0.0,
            };
            e_nir += pn;

            let ux = if x + 1 < w { u[i + 1] - u[i] } else { 0.0 };
            let uy = if y + 1 < h { u[i + w] - u[i] } else { 0.0 };
            let vx = if x + 1 < w { v[i + 1] - v[i] } else { 0.0 };
            let vy = if y + 1 < h { v[i + w] - v[i] } else { 0.0 };
            let ps = phi(ux * ux + uy * uy + vx * vx + vy * vy, eps);
            e_smooth += ps;

            let lam = pair.lambda.get(x, y);
            e_total += (1.0 - lam) * pv + lam * pn + params.gamma * ps;
        }
    }
    let _ = n;
    Ok(EnergyBreakdown {
        e_visible,
        e_nir,
        e_smooth,
        e_total,
    })
}

/// Discrete energy of a flow estimate.
pub fn evaluate_energy(
    i1: &MultispectralImage,
    i2: &MultispectralImage,
    flow: &FlowField,
    lambda: &WeightMap,
    params: &SolverParams,
) -> Result<EnergyBreakdown, SolverError> {
    if flow.width() != i1.width() || flow.height() != i1.height() {
        return Err(SolverError::DimensionMismatch(
            i1.width(),
            i1.height(),
            flow.width(),
            flow.height(),
        ));
    }
    let pair = LevelPair {
        vis1: &i1.visible,
        nir1: i1.nir.as_ref(),
        vis2: &i2.visible,
        nir2: i2.nir.as_ref(),
        lambda,
    };
    let u: Vec<f64> = flow.u_plane().iter().map(|&x| x as f64).collect();
    let v: Vec<f64> = flow.v_plane().iter().map(|&x| x as f64).collect();
    evaluate_energy_uv(&pair, &u, &v, params)
}

/// Run the nested fixed-point iterations at one pyramid level, updating the
/// flow in place. Returns the energies measured before the first warp and
/// after each outer iteration.
pub fn solve_level(
    pair: &LevelPair,
    u: &mut [f64],
    v: &mut [f64],
    params: &SolverParams,
) -> Result<Vec<EnergyBreakdown>, SolverError> {
    pair.check_dims()?;
    let n = pair.width() * pair.height();
    assert_eq!(u.len(), n);
    assert_eq!(v.len(), n);

    let mut energies = Vec::with_capacity(params.outer_iters + 1);
    energies.push(evaluate_energy_uv(pair, u, v, params)?);

    let mut du = vec![0.0; n];
    let mut dv = vec![0.0; n];
    for _outer in 0..params.outer_iters {
        let lin = linearize(pair, u, v)?;
        du.fill(0.0);
        dv.fill(0.0);
        for _inner in 0..params.inner_iters {
            let sys = assemble_system(&lin, u, v, &du, &dv, pair.lambda, params);
            sor_solve(
                &sys,
                &mut du,
                &mut dv,
                params.sor_omega,
                params.sor_iters,
                params.sor_tol,
                params.sweep_order(),
            )?;
        }
        for i in 0..n {
            u[i] += du[i];
            v[i] += dv[i];
        }
        energies.push(evaluate_energy_uv(pair, u, v, params)?);
    }
    Ok(energies)
}

/// Build the weight map for a mode at the given frame resolution.
fn lambda_for_mode(
    i1: &MultispectralImage,
    params: &SolverParams,
) -> Result<WeightMap, SolverError> {
    let (w, h) = (i1.width(), i1.height());
    Ok(match params.mode {
        ChannelMode::DetailAware => {
            let nir = i1.nir.as_ref().ok_or(SolverError::MissingNir("detail_aware"))?;
            compute_lambda(
                &i1.visible,
                nir,
                params.lambda_steepness,
                params.lambda_midpoint,
            )?
        }
        ChannelMode::Fixed(l) => WeightMap::constant(w, h, l),
        ChannelMode::RgbOnly => WeightMap::constant(w, h, 0.0),
        ChannelMode::NirOnly => WeightMap::constant(w, h, 1.0),
    })
}

/// Estimate the dense flow from frame 1 to frame 2.
///
/// Builds the weight map for the configured mode, constructs image pyramids
/// and runs [`solve_level`] coarsest to finest, rescaling the flow between
/// levels. The result has no unknown pixels.
pub fn compute_flow(
    i1: &MultispectralImage,
    i2: &MultispectralImage,
    params: &SolverParams,
) -> Result<FlowResult, SolverError> {
    params.validate()?;
    if i1.width() != i2.width() || i1.height() != i2.height() {
        return Err(SolverError::DimensionMismatch(
            i1.width(),
            i1.height(),
            i2.width(),
            i2.height(),
        ));
    }
    if params.mode.needs_nir() && (i1.nir.is_none() || i2.nir.is_none()) {
        return Err(SolverError::MissingNir(params.mode.name()));
    }

    let lambda_full = lambda_for_mode(i1, params)?;
    let recompute = if matches!(params.mode, ChannelMode::DetailAware) && params.lambda_per_level {
        Some((params.lambda_steepness, params.lambda_midpoint))
    } else {
        None
    };
    let pyr1 = build_pyramid(
        i1,
        &lambda_full,
        params.pyramid_factor,
        params.min_level_size,
        recompute,
    )?;
    let pyr2 = build_pyramid(
        i2,
        &lambda_full,
        params.pyramid_factor,
        params.min_level_size,
        None,
    )?;

    let coarsest = pyr1.n_levels() - 1;
    let mut u = vec![0.0; pyr1.levels[coarsest].width() * pyr1.levels[coarsest].height()];
    let mut v = u.clone();
    let mut trace = Vec::new();
    for level in (0..=coarsest).rev() {
        let l1 = &pyr1.levels[level];
        let l2 = &pyr2.levels[level];
        let (w, h) = (l1.width(), l1.height());
        if level < coarsest {
            let prev = flow_from_planes(pyr1.levels[level + 1].width(), pyr1.levels[level + 1].height(), &u, &v);
            let scaled = rescale_flow(&prev, w, h);
            u = scaled.u_plane().iter().map(|&x| x as f64).collect();
            v = scaled.v_plane().iter().map(|&x| x as f64).collect();
        }
        let pair = LevelPair::from_levels(l1, l2);
        let energies = solve_level(&pair, &mut u, &mut v, params)?;
        trace.extend(energies.into_iter().enumerate().map(|(k, energy)| EnergyRecord {
            level,
            width: w,
            height: h,
            outer_iter: k,
            energy,
        }));
    }

    let flow = flow_from_planes(i1.width(), i1.height(), &u, &v);
    Ok(FlowResult {
        flow,
        trace,
        lambda: lambda_full,
    })
}

fn flow_from_planes(width: usize, height: usize, u: &[f64], v: &[f64]) -> FlowField {
    FlowField::from_components(
        width,
        height,
        u.iter().map(|&x| x as f32).collect(),
        v.iter().map(|&x| x as f32).collect(),
    )
}

#[cfg(test)]
mod tests;
