//! Successive over-relaxation for the coupled five-point-stencil systems
//! produced by the flow linearization.
//!
//! Each grid pixel carries two unknowns (du, dv) coupled by a local 2x2
//! block and four nonnegative neighbor weights. The row for `du` at pixel p
//! reads
//!
//! ```text
//! (a11 + S) du_p - sum_q w_pq du_q + a12 dv_p = rhs_u
//! ```
//!
//! with `S` the sum of neighbor weights, and symmetrically for `dv`.
//! Sweeps use a red-black ordering so each half-sweep is data-parallel and
//! the result is deterministic; a sequential mode exists for debugging.

use rayon::prelude::*;

use super::SolverError;

/// Coupled 2-unknown five-point-stencil linear system over a grid.
#[derive(Debug, Clone)]
pub struct CoupledSystem {
    pub width: usize,
    pub height: usize,
    pub a11: Vec<f64>,
    pub a12: Vec<f64>,
    pub a22: Vec<f64>,
    pub rhs_u: Vec<f64>,
    pub rhs_v: Vec<f64>,
    /// Neighbor couplings; `w_right[p]` ties p to its +x neighbor, etc.
    /// Entries for neighbors outside the grid must be zero.
    pub w_right: Vec<f64>,
    pub w_left: Vec<f64>,
    pub w_up: Vec<f64>,
    pub w_down: Vec<f64>,
}

impl CoupledSystem {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            a11: vec![0.0; n],
            a12: vec![0.0; n],
            a22: vec![0.0; n],
            rhs_u: vec![0.0; n],
            rhs_v: vec![0.0; n],
            w_right: vec![0.0; n],
            w_left: vec![0.0; n],
            w_up: vec![0.0; n],
            w_down: vec![0.0; n],
        }
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    fn all_finite(&self) -> bool {
        [
            &self.a11, &self.a12, &self.a22, &self.rhs_u, &self.rhs_v, &self.w_right,
            &self.w_left, &self.w_up, &self.w_down,
        ]
        .iter()
        .all(|v| v.iter().all(|x| x.is_finite()))
    }

    #[inline]
    fn neighbor_sum(&self, i: usize) -> f64 {
        self.w_right[i] + self.w_left[i] + self.w_up[i] + self.w_down[i]
    }

    /// Residual of both equation rows at every pixel, as the L2 norm.
    pub fn residual_norm(&self, du: &[f64], dv: &[f64]) -> f64 {
        let mut acc = 0.0;
        for y in 0..self.height {
            for x in 0..self.width {
                let i = y * self.width + x;
                let (nu, nv) = self.neighbor_terms(du, dv, x, y);
                let s = self.neighbor_sum(i);
                let ru = self.rhs_u[i] - ((self.a11[i] + s) * du[i] - nu + self.a12[i] * dv[i]);
                let rv = self.rhs_v[i] - ((self.a22[i] + s) * dv[i] - nv + self.a12[i] * du[i]);
                acc += ru * ru + rv * rv;
            }
        }
        acc.sqrt()
    }

    #[inline]
    fn neighbor_terms(&self, du: &[f64], dv: &[f64], x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        let mut nu = 0.0;
        let mut nv = 0.0;
        if x + 1 < self.width {
            nu += self.w_right[i] * du[i + 1];
            nv += self.w_right[i] * dv[i + 1];
        }
        if x > 0 {
            nu += self.w_left[i] * du[i - 1];
            nv += self.w_left[i] * dv[i - 1];
        }
        if y > 0 {
            nu += self.w_up[i] * du[i - self.width];
            nv += self.w_up[i] * dv[i - self.width];
        }
        if y + 1 < self.height {
            nu += self.w_down[i] * du[i + self.width];
            nv += self.w_down[i] * dv[i + self.width];
        }
        (nu, nv)
    }

    /// Dense assembly of the full (2n x 2n) matrix and rhs, row-major with
    /// unknown ordering (du_0, dv_0, du_1, dv_1, ...). Intended for small
    /// instances and oracle checks.
    pub fn to_dense(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        let n = self.n_pixels();
        let mut a = vec![vec![0.0; 2 * n]; 2 * n];
        let mut b = vec![0.0; 2 * n];
        for y in 0..self.height {
            for x in 0..self.width {
                let i = y * self.width + x;
                let s = self.neighbor_sum(i);
                a[2 * i][2 * i] = self.a11[i] + s;
                a[2 * i][2 * i + 1] = self.a12[i];
                a[2 * i + 1][2 * i + 1] = self.a22[i] + s;
                a[2 * i + 1][2 * i] = self.a12[i];
                b[2 * i] = self.rhs_u[i];
                b[2 * i + 1] = self.rhs_v[i];
                let mut couple = |j: usize, w: f64| {
                    a[2 * i][2 * j] -= w;
                    a[2 * i + 1][2 * j + 1] -= w;
                };
                if x + 1 < self.width {
                    couple(i + 1, self.w_right[i]);
                }
                if x > 0 {
                    couple(i - 1, self.w_left[i]);
                }
                if y > 0 {
                    couple(i - self.width, self.w_up[i]);
                }
                if y + 1 < self.height {
                    couple(i + self.width, self.w_down[i]);
                }
            }
        }
        (a, b)
    }
}

/// Relaxation sweep ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepOrder {
    /// Two data-parallel half-sweeps over the (x+y) parity classes.
    RedBlack,
    /// Plain row-major Gauss-Seidel ordering, for debugging.
    Sequential,
}

/// Solve the coupled system in place, starting from the given `du`, `dv`.
///
/// Iterates until the residual L2 norm drops to `tol` times the initial
/// residual or `max_iters` sweeps have run. Returns the number of sweeps.
pub fn sor_solve(
    system: &CoupledSystem,
    du: &mut [f64],
    dv: &mut [f64],
    omega: f64,
    max_iters: usize,
    tol: f64,
    order: SweepOrder,
) -> Result<usize, SolverError> {
    if !(omega > 0.0 && omega < 2.0) {
        return Err(SolverError::BadRelaxation(omega));
    }
    if !system.all_finite() {
        return Err(SolverError::NonFiniteCoefficients);
    }
    assert_eq!(du.len(), system.n_pixels());
    assert_eq!(dv.len(), system.n_pixels());

    let initial = system.residual_norm(du, dv);
    if initial == 0.0 {
        return Ok(0);
    }
    let target = tol * initial;
    for sweep in 1..=max_iters {
        match order {
            SweepOrder::RedBlack => {
                half_sweep(system, du, dv, omega, 0);
                half_sweep(system, du, dv, omega, 1);
            }
            SweepOrder::Sequential => {
                for y in 0..system.height {
                    for x in 0..system.width {
                        relax_pixel(system, du, dv, x, y, omega);
                    }
                }
            }
        }
        if system.residual_norm(du, dv) <= target {
            return Ok(sweep);
        }
    }
    Ok(max_iters)
}

#[inline]
fn relax_pixel(system: &CoupledSystem, du: &mut [f64], dv: &mut [f64], x: usize, y: usize, omega: f64) {
    let i = y * system.width + x;
    let (nu, nv) = system.neighbor_terms(du, dv, x, y);
    let s = system.neighbor_sum(i);
    let diag_u = system.a11[i] + s;
    let diag_v = system.a22[i] + s;
    // Diagonals are strictly positive whenever the smoothness weight is
    // active; fall back to leaving the pixel untouched if a row is empty.
    if diag_u > 0.0 {
        let gs = (system.rhs_u[i] + nu - system.a12[i] * dv[i]) / diag_u;
        du[i] = (1.0 - omega) * du[i] + omega * gs;
    }
    if diag_v > 0.0 {
        let gs = (system.rhs_v[i] + nv - system.a12[i] * du[i]) / diag_v;
        dv[i] = (1.0 - omega) * dv[i] + omega * gs;
    }
}

/// Relax every pixel of one parity class. Pixels of equal parity never
/// neighbor each other in the five-point stencil, so the class updates in
/// parallel without data races and the result is order-independent.
fn half_sweep(system: &CoupledSystem, du: &mut [f64], dv: &mut [f64], omega: f64, parity: usize) {
    let width = system.width;
    let du_ptr = SendPtr(du.as_mut_ptr());
    let dv_ptr = SendPtr(dv.as_mut_ptr());
    let du_len = du.len();
    (0..system.height).into_par_iter().for_each(|y| {
        // Rebuild slices inside the closure; rows of one parity class touch
        // only same-row and adjacent-row pixels of the other class.
        let du_all = unsafe { std::slice::from_raw_parts_mut(du_ptr.get(), du_len) };
        let dv_all = unsafe { std::slice::from_raw_parts_mut(dv_ptr.get(), du_len) };
        let x0 = (parity + y) % 2;
        let mut x = x0;
        while x < width {
            relax_pixel(system, du_all, dv_all, x, y, omega);
            x += 2;
        }
    });
}

#[derive(Clone, Copy)]
struct SendPtr(*mut f64);

impl SendPtr {
    fn get(self) -> *mut f64 {
        self.0
    }
}

unsafe impl Send for SendPtr {}
unsafe impl Sync for SendPtr {}
