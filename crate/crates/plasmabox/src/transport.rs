//! Time steppers for the advection parts of the guiding-center and
//! drift-kinetic models.
//!
//! Two interchangeable update families share the reconstruction kernels:
//!
//! - backward semi-Lagrangian (`sl_*`): trace the characteristic foot with a
//!   midpoint predictor-corrector and interpolate the old solution there
//!   with the Hermite-WENO kernel. No CFL restriction; not conservative.
//! - conservative finite differences (`fd_*`): flux-form right-hand sides
//!   from the fifth-order interface reconstruction, integrated with RK4.
//!   Interface fluxes telescope, so interior mass is conserved exactly on
//!   periodic grids; on embedded domains the flux through any interface
//!   that is not between two interior nodes is zero, which realizes the
//!   no-penetration boundary (the E×B drift is tangential where φ = 0) and
//!   keeps the interior sum telescoping.
//!
//! The mixed driver for the 4D model does semi-Lagrangian steps in the
//! smooth phase and latches over to the conservative scheme once the
//! per-step mass imbalance exceeds `h³` ([`check_switch`]).

use crate::elliptic::{gradient, GradientFields};
use crate::geometry::EmbeddedDomain;
use crate::grid::{Axis, Field};
use crate::hweno::{
    self, derivative_4th, flux_minus, flux_plus, sl_interpolate, SlKernelInput, FLUX_PAD,
};
use crate::{Error, Result};
use rayon::prelude::*;
use std::sync::Arc;

/// Advection speed along one line.
#[derive(Debug, Clone, Copy)]
pub enum Speed<'a> {
    Constant(f64),
    /// One value per node of the line.
    Nodal(&'a [f64]),
}

impl Speed<'_> {
    /// Evaluate at an arbitrary coordinate (linear interpolation for nodal
    /// data; periodic wrap or clamped at bounded ends).
    fn eval(&self, axis: &Axis, x: f64) -> f64 {
        match self {
            Speed::Constant(a) => *a,
            Speed::Nodal(v) => {
                let n = axis.n;
                let dx = axis.spacing();
                if axis.periodic {
                    let len = axis.extent();
                    let mut s = (x - axis.min) / dx;
                    s -= (s / n as f64).floor() * n as f64;
                    let _ = len;
                    let i0 = s.floor() as usize % n;
                    let t = s - s.floor();
                    v[i0] * (1.0 - t) + v[(i0 + 1) % n] * t
                } else {
                    let s = ((x - axis.min) / dx).clamp(0.0, (n - 1) as f64);
                    let i0 = (s.floor() as usize).min(n - 2);
                    let t = s - i0 as f64;
                    v[i0] * (1.0 - t) + v[i0 + 1] * t
                }
            }
        }
    }

    fn max_abs(&self) -> f64 {
        match self {
            Speed::Constant(a) => a.abs(),
            Speed::Nodal(v) => v.iter().fold(0.0f64, |m, x| m.max(x.abs())),
        }
    }
}

/// Exterior data supplied to a 1D sweep on a bounded axis.
#[derive(Debug, Clone, Copy)]
pub enum BoundaryFill1D {
    Periodic,
    /// Constant inflow values beyond each end of a bounded axis.
    Fill { left: f64, right: f64 },
}

/// Flux splitting at interfaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FluxSplit {
    /// Upwind by the sign of the interface speed `(a_i + a_{i+1})/2`.
    #[default]
    Upwind,
    /// Lax-Friedrichs with the line-wide maximum speed.
    LaxFriedrichs,
}

fn pad_line(line: &[f64], fill: BoundaryFill1D, pad: usize) -> Vec<f64> {
    let n = line.len();
    let mut p = Vec::with_capacity(n + 2 * pad);
    match fill {
        BoundaryFill1D::Periodic => {
            for k in 0..pad {
                p.push(line[(n - pad + k) % n]);
            }
            p.extend_from_slice(line);
            for k in 0..pad {
                p.push(line[k % n]);
            }
        }
        BoundaryFill1D::Fill { left, right } => {
            p.extend(std::iter::repeat(left).take(pad));
            p.extend_from_slice(line);
            p.extend(std::iter::repeat(right).take(pad));
        }
    }
    p
}

/// Backward semi-Lagrangian update of one line over `dt`.
///
/// The characteristic foot of each node is found with the midpoint
/// predictor-corrector `X* = x - dt a(x)`, `X = x - dt a((x + X*)/2)`
/// (speeds frozen in time over the split step) and the old line is
/// interpolated there. Feet beyond a bounded axis evaluate to the inflow
/// fill value.
pub fn sl_advect_1d(
    line: &[f64],
    speed: Speed,
    dt: f64,
    axis: &Axis,
    fill: BoundaryFill1D,
) -> Result<Vec<f64>> {
    let n = axis.n;
    assert_eq!(line.len(), n, "line/axis length mismatch");
    let dx = axis.spacing();
    let padded = pad_line(line, fill, 2);
    let mut deriv = vec![0.0; n];
    derivative_4th(&padded, 2, dx, &mut deriv);

    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let x = axis.coord(i);
        let xs = x - dt * speed.eval(axis, x);
        let foot = x - dt * speed.eval(axis, 0.5 * (x + xs));
        *o = if axis.periodic {
            let mut s = (foot - axis.min) / dx;
            s -= (s / n as f64).floor() * n as f64;
            let i0 = (s.floor() as usize) % n;
            let theta = s - s.floor();
            let i1 = (i0 + 1) % n;
            sl_interpolate(&SlKernelInput {
                f_left: line[i0],
                f_right: line[i1],
                fp_left: deriv[i0],
                fp_right: deriv[i1],
                dx,
                theta,
            })
        } else if foot < axis.min || foot > axis.max {
            let overshoot = (foot - axis.max).max(axis.min - foot);
            if overshoot > axis.extent() {
                return Err(Error::Config(format!(
                    "characteristic foot {foot:.3e} is more than a domain length outside \
                     [{:.3e}, {:.3e}]; reduce dt",
                    axis.min, axis.max
                )));
            }
            match fill {
                BoundaryFill1D::Fill { left, right } => {
                    if foot < axis.min {
                        left
                    } else {
                        right
                    }
                }
                BoundaryFill1D::Periodic => unreachable!("bounded axis with periodic fill"),
            }
        } else {
            let s = (foot - axis.min) / dx;
            let i0 = (s.floor() as usize).min(n - 2);
            let theta = s - i0 as f64;
            sl_interpolate(&SlKernelInput {
                f_left: line[i0],
                f_right: line[i0 + 1],
                fp_left: deriv[i0],
                fp_right: deriv[i0 + 1],
                dx,
                theta,
            })
        };
    }
    Ok(out)
}

/// Conservative flux-difference right-hand side `-∂(a f)/∂x` on one line.
///
/// `padded` holds the line with [`FLUX_PAD`] exterior values per side;
/// `iface_speed[k]` is the speed at interface `k - 1/2` (there are n+1
/// interfaces); `active[k]`, when given, zeroes the flux at inactive
/// interfaces (embedded boundaries).
pub fn fd_rhs_padded(
    padded: &[f64],
    iface_speed: &[f64],
    active: Option<&[bool]>,
    dx: f64,
    split: FluxSplit,
    out: &mut [f64],
) {
    let n = out.len();
    assert_eq!(padded.len(), n + 2 * FLUX_PAD, "padding mismatch");
    assert_eq!(iface_speed.len(), n + 1, "need n + 1 interface speeds");
    let alpha = match split {
        FluxSplit::Upwind => 0.0,
        FluxSplit::LaxFriedrichs => iface_speed.iter().fold(0.0f64, |m, a| m.max(a.abs())),
    };
    let mut fluxes = vec![0.0; n + 1];
    for (k, fx) in fluxes.iter_mut().enumerate() {
        if let Some(act) = active {
            if !act[k] {
                continue;
            }
        }
        let a = iface_speed[k];
        // interface k sits between nodes k-1 and k
        let minus = flux_minus(&padded[FLUX_PAD + k - 5..FLUX_PAD + k + 4]);
        let plus = flux_plus(&padded[FLUX_PAD + k - 4..FLUX_PAD + k + 5]);
        *fx = match split {
            FluxSplit::Upwind => {
                if a >= 0.0 {
                    a * minus
                } else {
                    a * plus
                }
            }
            FluxSplit::LaxFriedrichs => 0.5 * (a * (minus + plus) - alpha * (plus - minus)),
        };
    }
    for i in 0..n {
        out[i] = -(fluxes[i + 1] - fluxes[i]) / dx;
    }
}

/// Classical four-stage RK4 step of `y' = rhs(y)`.
pub fn rk4_step_vec(y: &[f64], dt: f64, rhs: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let k1 = rhs(y);
    let y2: Vec<f64> = y.iter().zip(&k1).map(|(a, b)| a + 0.5 * dt * b).collect();
    let k2 = rhs(&y2);
    let y3: Vec<f64> = y.iter().zip(&k2).map(|(a, b)| a + 0.5 * dt * b).collect();
    let k3 = rhs(&y3);
    let y4: Vec<f64> = y.iter().zip(&k3).map(|(a, b)| a + dt * b).collect();
    let k4 = rhs(&y4);
    y.iter()
        .enumerate()
        .map(|(i, &a)| a + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// CFL check for the conservative scheme: errors when
/// `dt > cfl · min(spacing / max|speed|)` over the given axes.
pub fn check_cfl(dt: f64, cfl: f64, axes: &[(f64, f64)]) -> Result<()> {
    for &(spacing, max_speed) in axes {
        if max_speed == 0.0 {
            continue;
        }
        let limit = cfl * spacing / max_speed;
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "dt = {dt:.4e} violates the CFL bound {limit:.4e} \
                 (spacing {spacing:.3e}, max speed {max_speed:.3e}); reduce dt"
            )));
        }
    }
    Ok(())
}

/// FD update of one line over `dt` with per-line RK4 (speed frozen).
pub fn fd_advect_1d(
    line: &[f64],
    speed: Speed,
    dt: f64,
    axis: &Axis,
    fill: BoundaryFill1D,
    split: FluxSplit,
) -> Vec<f64> {
    let n = axis.n;
    let dx = axis.spacing();
    let iface: Vec<f64> = match speed {
        Speed::Constant(a) => vec![a; n + 1],
        Speed::Nodal(v) => {
            let mut s = Vec::with_capacity(n + 1);
            for k in 0..=n {
                let a = if k == 0 {
                    if axis.periodic {
                        0.5 * (v[n - 1] + v[0])
                    } else {
                        v[0]
                    }
                } else if k == n {
                    if axis.periodic {
                        0.5 * (v[n - 1] + v[0])
                    } else {
                        v[n - 1]
                    }
                } else {
                    0.5 * (v[k - 1] + v[k])
                };
                s.push(a);
            }
            s
        }
    };
    rk4_step_vec(line, dt, |y| {
        let padded = pad_line(y, fill, FLUX_PAD);
        let mut out = vec![0.0; n];
        fd_rhs_padded(&padded, &iface, None, dx, split, &mut out);
        out
    })
}

// ---------------------------------------------------------------------------
// 2D plane advection
// ---------------------------------------------------------------------------

/// Topology of a 2D plane sweep.
pub enum PlaneTopology<'a> {
    /// Both axes periodic; every interface carries flux.
    Periodic,
    /// Embedded domain: non-interior nodes in the exterior band hold
    /// equilibrium fill values and boundary-crossing fluxes vanish.
    Embedded {
        domain: &'a EmbeddedDomain,
        band: &'a [bool],
        /// Equilibrium values on the full bounding grid.
        fill: &'a [f64],
    },
}

/// Immutable per-plane sweep data shared by the FD and SL plane steppers.
pub struct PlaneAdvector<'a> {
    pub ax: &'a Axis,
    pub ay: &'a Axis,
    pub topo: PlaneTopology<'a>,
    pub split: FluxSplit,
}

impl PlaneAdvector<'_> {
    fn nx(&self) -> usize {
        self.ax.n
    }
    fn ny(&self) -> usize {
        self.ay.n
    }

    /// Overwrite band and far-exterior values with the equilibrium fill so
    /// reconstruction windows and foot interpolation read consistent data.
    fn enforce_fill(&self, plane: &mut [f64]) {
        if let PlaneTopology::Embedded { domain, fill, .. } = &self.topo {
            for (k, v) in plane.iter_mut().enumerate() {
                if !domain.is_interior(k / self.ny(), k % self.ny()) {
                    *v = fill[k];
                }
            }
        }
    }

    /// Conservative RHS of `-∇·(U f)` per direction on the plane.
    fn fd_plane_rhs(&self, plane: &[f64], ux: &[f64], uy: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.nx(), self.ny());
        let (dx, dy) = (self.ax.spacing(), self.ay.spacing());
        let mut rhs = vec![0.0; nx * ny];
        let periodic = matches!(self.topo, PlaneTopology::Periodic);

        // sweep along x (stride ny), then along y (contiguous)
        let mut line = vec![0.0; nx.max(ny)];
        let mut speeds = vec![0.0; nx.max(ny)];
        let mut out = vec![0.0; nx.max(ny)];

        for j in 0..ny {
            for i in 0..nx {
                line[i] = plane[i * ny + j];
                speeds[i] = ux[i * ny + j];
            }
            let (padded, iface, active) = self.line_setup(&line[..nx], &speeds[..nx], j, true);
            fd_rhs_padded(
                &padded,
                &iface,
                active.as_deref(),
                dx,
                self.split,
                &mut out[..nx],
            );
            for i in 0..nx {
                rhs[i * ny + j] = out[i];
            }
            let _ = periodic;
        }
        for i in 0..nx {
            let row = &plane[i * ny..(i + 1) * ny];
            let srow: Vec<f64> = (0..ny).map(|j| uy[i * ny + j]).collect();
            let (padded, iface, active) = self.line_setup(row, &srow, i, false);
            fd_rhs_padded(
                &padded,
                &iface,
                active.as_deref(),
                dy,
                self.split,
                &mut out[..ny],
            );
            for j in 0..ny {
                rhs[i * ny + j] += out[j];
            }
        }
        // non-interior nodes never evolve
        if let PlaneTopology::Embedded { domain, .. } = &self.topo {
            for (k, v) in rhs.iter_mut().enumerate() {
                if !domain.is_interior(k / ny, k % ny) {
                    *v = 0.0;
                }
            }
        }
        rhs
    }

    /// Padded values, interface speeds, and the active-interface mask for
    /// one line. `along_x` selects the sweep direction; `other` is the
    /// fixed cross index.
    fn line_setup(
        &self,
        line: &[f64],
        speeds: &[f64],
        other: usize,
        along_x: bool,
    ) -> (Vec<f64>, Vec<f64>, Option<Vec<bool>>) {
        let n = line.len();
        match &self.topo {
            PlaneTopology::Periodic => {
                let padded = pad_line(line, BoundaryFill1D::Periodic, FLUX_PAD);
                let mut iface = Vec::with_capacity(n + 1);
                for k in 0..=n {
                    let a = 0.5 * (speeds[(k + n - 1) % n] + speeds[k % n]);
                    iface.push(a);
                }
                (padded, iface, None)
            }
            PlaneTopology::Embedded { domain, fill, .. } => {
                // pad with clamped equilibrium continuation
                let mut padded = Vec::with_capacity(n + 2 * FLUX_PAD);
                let fill_at = |idx: usize| {
                    let k = if along_x {
                        idx * domain.ny() + other
                    } else {
                        other * domain.ny() + idx
                    };
                    fill[k]
                };
                for _ in 0..FLUX_PAD {
                    padded.push(fill_at(0));
                }
                padded.extend_from_slice(line);
                for _ in 0..FLUX_PAD {
                    padded.push(fill_at(n - 1));
                }
                let mut iface = Vec::with_capacity(n + 1);
                let mut active = Vec::with_capacity(n + 1);
                let interior = |idx: isize| -> bool {
                    if idx < 0 || idx as usize >= n {
                        return false;
                    }
                    let (i, j) = if along_x {
                        (idx as usize, other)
                    } else {
                        (other, idx as usize)
                    };
                    domain.is_interior(i, j)
                };
                for k in 0..=n {
                    let a = if k == 0 {
                        speeds[0]
                    } else if k == n {
                        speeds[n - 1]
                    } else {
                        0.5 * (speeds[k - 1] + speeds[k])
                    };
                    iface.push(a);
                    // flux crosses the embedded boundary unless both sides
                    // are interior; those interfaces carry no transport
                    active.push(interior(k as isize - 1) && interior(k as isize));
                }
                (padded, iface, Some(active))
            }
        }
    }

    /// One conservative RK4 step of the plane.
    pub fn fd_step(&self, plane: &mut Vec<f64>, ux: &[f64], uy: &[f64], dt: f64) {
        self.enforce_fill(plane);
        let next = rk4_step_vec(plane, dt, |y| {
            let mut work = y.to_vec();
            self.enforce_fill(&mut work);
            self.fd_plane_rhs(&work, ux, uy)
        });
        *plane = next;
        self.enforce_fill(plane);
    }

    /// One backward semi-Lagrangian step of the plane with true 2D foot
    /// tracing and tensor-product Hermite-WENO interpolation.
    pub fn sl_step(&self, plane: &mut Vec<f64>, ux: &[f64], uy: &[f64], dt: f64) {
        let (nx, ny) = (self.nx(), self.ny());
        let (dx, dy) = (self.ax.spacing(), self.ay.spacing());
        self.enforce_fill(plane);
        let f = plane.clone();

        // nodal derivative tables: fx, fy, fxy over the whole plane
        let fx = self.plane_derivative(&f, true);
        let fy = self.plane_derivative(&f, false);
        let fxy = self.plane_derivative(&fy, true);

        let eval_u = |u: &[f64], x: f64, y: f64| self.bilinear(u, x, y);

        let mut next = f.clone();
        for i in 0..nx {
            for j in 0..ny {
                if let PlaneTopology::Embedded { domain, .. } = &self.topo {
                    if !domain.is_interior(i, j) {
                        continue;
                    }
                }
                let x = self.ax.coord(i);
                let y = self.ay.coord(j);
                let (uxp, uyp) = (eval_u(ux, x, y), eval_u(uy, x, y));
                let (xs, ys) = (x - dt * uxp, y - dt * uyp);
                let (xm, ym) = (0.5 * (x + xs), 0.5 * (y + ys));
                let foot_x = x - dt * eval_u(ux, xm, ym);
                let foot_y = y - dt * eval_u(uy, xm, ym);

                if let PlaneTopology::Embedded { domain, fill, .. } = &self.topo {
                    if !domain.inside([foot_x, foot_y]) {
                        // inflow: the foot carries equilibrium data
                        next[i * ny + j] = self.bilinear(fill, foot_x, foot_y);
                        continue;
                    }
                }
                next[i * ny + j] = self.tensor_hweno(
                    &f, &fx, &fy, &fxy, foot_x, foot_y, dx, dy,
                );
            }
        }
        *plane = next;
    }

    /// Fourth-order nodal derivative of a plane along x or y with the
    /// topology's padding rules.
    fn plane_derivative(&self, f: &[f64], along_x: bool) -> Vec<f64> {
        let (nx, ny) = (self.nx(), self.ny());
        let n = if along_x { nx } else { ny };
        let d = if along_x {
            self.ax.spacing()
        } else {
            self.ay.spacing()
        };
        let mut out = vec![0.0; nx * ny];
        let lines = if along_x { ny } else { nx };
        let mut buf = vec![0.0; n];
        let mut dbuf = vec![0.0; n];
        for l in 0..lines {
            for k in 0..n {
                let idx = if along_x { k * ny + l } else { l * ny + k };
                buf[k] = f[idx];
            }
            let padded = match &self.topo {
                PlaneTopology::Periodic => pad_line(&buf, BoundaryFill1D::Periodic, 2),
                PlaneTopology::Embedded { .. } => pad_line(
                    &buf,
                    BoundaryFill1D::Fill {
                        left: buf[0],
                        right: buf[n - 1],
                    },
                    2,
                ),
            };
            derivative_4th(&padded, 2, d, &mut dbuf);
            for k in 0..n {
                let idx = if along_x { k * ny + l } else { l * ny + k };
                out[idx] = dbuf[k];
            }
        }
        out
    }

    /// Bilinear plane interpolation with topology-aware wrapping/clamping.
    fn bilinear(&self, f: &[f64], x: f64, y: f64) -> f64 {
        let (nx, ny) = (self.nx(), self.ny());
        let periodic = matches!(self.topo, PlaneTopology::Periodic);
        let locate = |axis: &Axis, v: f64| -> (usize, usize, f64) {
            let n = axis.n;
            let s = (v - axis.min) / axis.spacing();
            if periodic {
                let mut s = s;
                s -= (s / n as f64).floor() * n as f64;
                let i0 = (s.floor() as usize) % n;
                (i0, (i0 + 1) % n, s - s.floor())
            } else {
                let s = s.clamp(0.0, (n - 1) as f64);
                let i0 = (s.floor() as usize).min(n - 2);
                (i0, i0 + 1, s - i0 as f64)
            }
        };
        let (i0, i1, tx) = locate(self.ax, x);
        let (j0, j1, ty) = locate(self.ay, y);
        let v00 = f[i0 * ny + j0];
        let v10 = f[i1 * ny + j0];
        let v01 = f[i0 * ny + j1];
        let v11 = f[i1 * ny + j1];
        let _ = nx;
        v00 * (1.0 - tx) * (1.0 - ty)
            + v10 * tx * (1.0 - ty)
            + v01 * (1.0 - tx) * ty
            + v11 * tx * ty
    }

    /// Tensor-product Hermite-WENO evaluation at an off-grid point: the 1D
    /// kernel along x on the two bracketing rows (values and y-derivatives
    /// separately), then along y.
    #[allow(clippy::too_many_arguments)]
    fn tensor_hweno(
        &self,
        f: &[f64],
        fx: &[f64],
        fy: &[f64],
        fxy: &[f64],
        x: f64,
        y: f64,
        dx: f64,
        dy: f64,
    ) -> f64 {
        let (nx, ny) = (self.nx(), self.ny());
        let periodic = matches!(self.topo, PlaneTopology::Periodic);
        let locate = |axis: &Axis, v: f64| -> (usize, usize, f64) {
            let n = axis.n;
            let s = (v - axis.min) / axis.spacing();
            if periodic {
                let mut s = s;
                s -= (s / n as f64).floor() * n as f64;
                let i0 = (s.floor() as usize) % n;
                (i0, (i0 + 1) % n, s - s.floor())
            } else {
                let s = s.clamp(0.0, (n - 1) as f64);
                let i0 = (s.floor() as usize).min(n - 2);
                (i0, i0 + 1, s - i0 as f64)
            }
        };
        let (i0, i1, theta_x) = locate(self.ax, x);
        let (j0, j1, theta_y) = locate(self.ay, y);
        let _ = nx;
        let h1 = |a: f64, b: f64, pa: f64, pb: f64, d: f64, t: f64| {
            sl_interpolate(&SlKernelInput {
                f_left: a,
                f_right: b,
                fp_left: pa,
                fp_right: pb,
                dx: d,
                theta: t,
            })
        };
        // interpolate values along x on rows j0 and j1
        let a0 = h1(
            f[i0 * ny + j0],
            f[i1 * ny + j0],
            fx[i0 * ny + j0],
            fx[i1 * ny + j0],
            dx,
            theta_x,
        );
        let a1 = h1(
            f[i0 * ny + j1],
            f[i1 * ny + j1],
            fx[i0 * ny + j1],
            fx[i1 * ny + j1],
            dx,
            theta_x,
        );
        // interpolate y-derivatives along x on the same rows
        let b0 = h1(
            fy[i0 * ny + j0],
            fy[i1 * ny + j0],
            fxy[i0 * ny + j0],
            fxy[i1 * ny + j0],
            dx,
            theta_x,
        );
        let b1 = h1(
            fy[i0 * ny + j1],
            fy[i1 * ny + j1],
            fxy[i0 * ny + j1],
            fxy[i1 * ny + j1],
            dx,
            theta_x,
        );
        h1(a0, a1, b0, b1, dy, theta_y)
    }
}

// ---------------------------------------------------------------------------
// Mixed-method bookkeeping
// ---------------------------------------------------------------------------

/// Advection scheme selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Sl,
    Fd,
    Mixed,
}

/// Phase of a mixed run; transitions are one-way.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    LinearSl,
    NonlinearFd,
}

impl Phase {
    pub fn label(&self) -> &'static str {
        match self {
            Phase::LinearSl => "sl",
            Phase::NonlinearFd => "fd",
        }
    }
}

/// Mass-criterion switch: true when the per-step mass imbalance exceeds
/// `h³`, `h` being the smallest spacing among all axes. Strict inequality.
pub fn check_switch(prev_mass: f64, mass: f64, h_min: f64) -> bool {
    (mass - prev_mass).abs() > h_min * h_min * h_min
}

/// Time-stepping state of a mixed semi-Lagrangian / finite-difference run.
#[derive(Debug, Clone)]
pub struct StepperState {
    pub time: f64,
    pub phase: Phase,
    pub dt_sl: f64,
    pub dt_fd: f64,
    /// Mass after the previous step, for the switch criterion.
    pub prev_mass: Option<f64>,
    /// Time at which the switch latched, once it has.
    pub switch_time: Option<f64>,
}

impl StepperState {
    pub fn new(method: Method, dt_fd: f64, dt_sl: f64) -> Self {
        let phase = match method {
            Method::Fd => Phase::NonlinearFd,
            Method::Sl | Method::Mixed => Phase::LinearSl,
        };
        StepperState {
            time: 0.0,
            phase,
            dt_sl,
            dt_fd,
            prev_mass: None,
            switch_time: None,
        }
    }

    pub fn dt(&self) -> f64 {
        match self.phase {
            Phase::LinearSl => self.dt_sl,
            Phase::NonlinearFd => self.dt_fd,
        }
    }

    /// Record the post-step mass; in mixed mode this may latch the phase
    /// from semi-Lagrangian to conservative. Returns true when the latch
    /// fires on this call.
    pub fn observe_mass(&mut self, mass: f64, h_min: f64, method: Method) -> bool {
        let mut switched = false;
        if method == Method::Mixed && self.phase == Phase::LinearSl {
            if let Some(prev) = self.prev_mass {
                if check_switch(prev, mass, h_min) {
                    self.phase = Phase::NonlinearFd;
                    self.switch_time = Some(self.time);
                    switched = true;
                }
            }
        }
        self.prev_mass = Some(mass);
        switched
    }
}

// ---------------------------------------------------------------------------
// Drift-kinetic Strang stepper
// ---------------------------------------------------------------------------

/// Nodal velocity data for one drift-kinetic step, frozen at `time`.
pub struct VelocityField {
    /// `-∂φ/∂y` on the 3D `(x, y, z)` grid.
    pub ux: Field,
    /// `∂φ/∂x` on the 3D grid.
    pub uy: Field,
    /// `-∂φ/∂z` on the 3D grid.
    pub epar: Field,
    pub time: f64,
}

impl VelocityField {
    /// Differentiate a 3D potential; B = ẑ with unit magnitude, so the
    /// drift is the rotated gradient.
    pub fn from_potential(phi: &Field, domain: &EmbeddedDomain, time: f64) -> Result<Self> {
        let GradientFields { ux, uy, epar } = gradient(phi, domain)?;
        let epar = epar.ok_or_else(|| {
            Error::Config("drift-kinetic velocities need a 3D potential".into())
        })?;
        Ok(VelocityField {
            ux,
            uy,
            epar,
            time,
        })
    }
}

/// Shared pointer for disjoint parallel line writes. Safety rests on the
/// sweep structure: every task owns a distinct (offset, stride) line.
#[derive(Copy, Clone)]
struct SharedMut(*mut f64);
unsafe impl Send for SharedMut {}
unsafe impl Sync for SharedMut {}

/// Strang-split step of the 4D distribution `f(x, y, z, v)`:
/// half v-advection, half z-advection, full perpendicular E×B advection,
/// half z, half v. Velocities are frozen over the step.
pub fn strang_step_dk(
    f: &mut Field,
    vel: &VelocityField,
    domain: &EmbeddedDomain,
    band: &[bool],
    f_eq: &Field,
    dt: f64,
    phase: Phase,
    split: FluxSplit,
) -> Result<()> {
    advect_v(f, vel, domain, 0.5 * dt, phase, split)?;
    advect_z(f, domain, 0.5 * dt, phase, split)?;
    advect_plane(f, vel, domain, band, f_eq, dt, phase, split)?;
    advect_z(f, domain, 0.5 * dt, phase, split)?;
    advect_v(f, vel, domain, 0.5 * dt, phase, split)?;
    Ok(())
}

/// v∥-advection at speed `E∥(x, y, z)`: contiguous lines, bounded axis,
/// vanishing inflow (the equilibrium tail at |v| = v_max is negligible).
fn advect_v(
    f: &mut Field,
    vel: &VelocityField,
    domain: &EmbeddedDomain,
    dt: f64,
    phase: Phase,
    split: FluxSplit,
) -> Result<()> {
    let g = f.grid().clone();
    let (ny, nz, nv) = (g.axis(1).n, g.axis(2).n, g.axis(3).n);
    let axis = g.axis(3).clone();
    let fill = BoundaryFill1D::Fill {
        left: 0.0,
        right: 0.0,
    };
    let epar = vel.epar.data();
    let results: Result<Vec<()>> = f
        .data_mut()
        .par_chunks_mut(nv)
        .enumerate()
        .map(|(line_idx, line)| {
            // line index = (i*ny + j)*nz + iz
            let iz = line_idx % nz;
            let ij = line_idx / nz;
            let (i, j) = (ij / ny, ij % ny);
            if !domain.is_interior(i, j) {
                return Ok(());
            }
            let speed = epar[(i * ny + j) * nz + iz];
            let new = match phase {
                Phase::LinearSl => {
                    sl_advect_1d(line, Speed::Constant(speed), dt, &axis, fill)?
                }
                Phase::NonlinearFd => {
                    fd_advect_1d(line, Speed::Constant(speed), dt, &axis, fill, split)
                }
            };
            line.copy_from_slice(&new);
            Ok(())
        })
        .collect();
    results.map(|_| ())
}

/// z-advection at speed `v∥`: periodic strided lines, constant speed per
/// line.
fn advect_z(
    f: &mut Field,
    domain: &EmbeddedDomain,
    dt: f64,
    phase: Phase,
    split: FluxSplit,
) -> Result<()> {
    let g = f.grid().clone();
    let (ny, nz, nv) = (g.axis(1).n, g.axis(2).n, g.axis(3).n);
    let nx = g.axis(0).n;
    let axis = g.axis(2).clone();
    let v_coords: Vec<f64> = g.axis(3).coords();
    let ptr = SharedMut(f.data_mut().as_mut_ptr());

    let tasks: Vec<(usize, usize, usize)> = (0..nx)
        .flat_map(|i| (0..ny).map(move |j| (i, j)))
        .filter(|&(i, j)| domain.is_interior(i, j))
        .flat_map(|(i, j)| (0..nv).map(move |iv| (i, j, iv)))
        .collect();

    let results: Result<Vec<()>> = tasks
        .par_iter()
        .map(|&(i, j, iv)| {
            let base = ((i * ny + j) * nz) * nv + iv;
            let mut line = vec![0.0; nz];
            let p = ptr; // each task reads/writes only its own strided line
            for iz in 0..nz {
                line[iz] = unsafe { *p.0.add(base + iz * nv) };
            }
            let speed = v_coords[iv];
            let new = match phase {
                Phase::LinearSl => sl_advect_1d(
                    &line,
                    Speed::Constant(speed),
                    dt,
                    &axis,
                    BoundaryFill1D::Periodic,
                )?,
                Phase::NonlinearFd => fd_advect_1d(
                    &line,
                    Speed::Constant(speed),
                    dt,
                    &axis,
                    BoundaryFill1D::Periodic,
                    split,
                ),
            };
            for iz in 0..nz {
                unsafe {
                    *p.0.add(base + iz * nv) = new[iz];
                }
            }
            Ok(())
        })
        .collect();
    results.map(|_| ())
}

/// Perpendicular E×B advection: one 2D plane per (z, v) pair, velocities
/// shared across v at fixed z.
#[allow(clippy::too_many_arguments)]
fn advect_plane(
    f: &mut Field,
    vel: &VelocityField,
    domain: &EmbeddedDomain,
    band: &[bool],
    f_eq: &Field,
    dt: f64,
    phase: Phase,
    split: FluxSplit,
) -> Result<()> {
    let g = f.grid().clone();
    let (nx, ny, nz, nv) = (g.axis(0).n, g.axis(1).n, g.axis(2).n, g.axis(3).n);
    let ax = g.axis(0).clone();
    let ay = g.axis(1).clone();
    let ptr = SharedMut(f.data_mut().as_mut_ptr());
    let f_eq_data = f_eq.data();
    let ux3 = vel.ux.data();
    let uy3 = vel.uy.data();

    let tasks: Vec<(usize, usize)> = (0..nz)
        .flat_map(|iz| (0..nv).map(move |iv| (iz, iv)))
        .collect();

    let results: Result<Vec<()>> = tasks
        .par_iter()
        .map(|&(iz, iv)| {
            let p = ptr; // planes at distinct (iz, iv) are disjoint
            let mut plane = vec![0.0; nx * ny];
            let mut fill = vec![0.0; nx * ny];
            let mut ux = vec![0.0; nx * ny];
            let mut uy = vec![0.0; nx * ny];
            for i in 0..nx {
                for j in 0..ny {
                    let k4 = ((i * ny + j) * nz + iz) * nv + iv;
                    let k3 = (i * ny + j) * nz + iz;
                    plane[i * ny + j] = unsafe { *p.0.add(k4) };
                    fill[i * ny + j] = f_eq_data[k4];
                    ux[i * ny + j] = ux3[k3];
                    uy[i * ny + j] = uy3[k3];
                }
            }
            let adv = PlaneAdvector {
                ax: &ax,
                ay: &ay,
                topo: PlaneTopology::Embedded {
                    domain,
                    band,
                    fill: &fill,
                },
                split,
            };
            match phase {
                Phase::LinearSl => adv.sl_step(&mut plane, &ux, &uy, dt),
                Phase::NonlinearFd => adv.fd_step(&mut plane, &ux, &uy, dt),
            }
            for i in 0..nx {
                for j in 0..ny {
                    let k4 = ((i * ny + j) * nz + iz) * nv + iv;
                    unsafe {
                        *p.0.add(k4) = plane[i * ny + j];
                    }
                }
            }
            Ok(())
        })
        .collect();
    results.map(|_| ())
}

// ---------------------------------------------------------------------------
