//! Hermite-WENO reconstruction kernels.
//!
//! Two 1D kernels share the same idea — blend candidate polynomials built
//! from point values and derivative data with weights driven by smoothness
//! indicators, so that smooth data gets the full-order combination and
//! discontinuous data falls back to the least oscillatory candidate:
//!
//! - [`sl_interpolate`]: third-order Hermite interpolation at an off-grid
//!   point, used by the backward semi-Lagrangian update;
//! - [`flux_minus`] / [`flux_plus`]: fifth-order interface reconstruction
//!   whose flux differences feed the conservative finite-difference scheme.
//!
//! All kernels are pure and allocation-free; sweeping them over the lines
//! of a field is the transport module's job.

/// Regularization in the nonlinear weights, an absolute constant.
pub const WENO_EPS: f64 = 1e-6;

/// Point-value reach of one interface reconstruction: `flux_minus` for the
/// interface i+1/2 reads u[i-4..=i+4]. Line buffers must be padded by
/// [`FLUX_PAD`] values on each side.
pub const FLUX_WINDOW: usize = 9;

/// Exterior padding required per line end for a full flux sweep: the
/// mirrored (plus) reconstruction at the last interface reaches one node
/// further than the window half-width.
pub const FLUX_PAD: usize = 5;

/// Fourth-order centred first derivative on a padded line.
///
/// `line` holds `out.len() + 2 * pad` values with `pad >= 2`; entry `i` of
/// `out` receives the derivative at `line[pad + i]`. The caller supplies
/// the padding (periodic wrap or boundary fill).
pub fn derivative_4th(line: &[f64], pad: usize, dx: f64, out: &mut [f64]) {
    assert!(pad >= 2, "derivative stencil needs 2 halo values per side");
    assert_eq!(line.len(), out.len() + 2 * pad, "padded line length mismatch");
    let c = 1.0 / (12.0 * dx);
    for (k, o) in out.iter_mut().enumerate() {
        let i = pad + k;
        *o = c * (line[i - 2] - 8.0 * line[i - 1] + 8.0 * line[i + 1] - line[i + 2]);
    }
}

/// Convenience wrapper: derivative of a periodic line (no halo supplied).
pub fn derivative_4th_periodic(line: &[f64], dx: f64) -> Vec<f64> {
    let n = line.len();
    let mut padded = Vec::with_capacity(n + 4);
    padded.extend_from_slice(&line[n - 2..]);
    padded.extend_from_slice(line);
    padded.extend_from_slice(&line[..2]);
    let mut out = vec![0.0; n];
    derivative_4th(&padded, 2, dx, &mut out);
    out
}

/// Inputs of the semi-Lagrangian interpolation on one cell `[x_i, x_{i+1}]`.
///
/// `theta` is the local coordinate of the evaluation point,
/// `x = x_i + theta * dx`, with `0 <= theta <= 1`. The derivative entries
/// are nodal first-derivative approximations (usually [`derivative_4th`]).
#[derive(Debug, Clone, Copy)]
pub struct SlKernelInput {
    pub f_left: f64,
    pub f_right: f64,
    pub fp_left: f64,
    pub fp_right: f64,
    pub dx: f64,
    pub theta: f64,
}

/// WENO weights of the two quadratic candidates at `theta`.
pub fn sl_weights(input: &SlKernelInput) -> (f64, f64) {
    let df = input.f_right - input.f_left;
    let dev_l = df - input.dx * input.fp_left;
    let dev_r = input.dx * input.fp_right - df;
    let beta_l = df * df + 13.0 / 3.0 * dev_l * dev_l;
    let beta_r = df * df + 13.0 / 3.0 * dev_r * dev_r;
    let c_l = 1.0 - input.theta;
    let c_r = input.theta;
    let alpha_l = c_l / ((WENO_EPS + beta_l) * (WENO_EPS + beta_l));
    let alpha_r = c_r / ((WENO_EPS + beta_r) * (WENO_EPS + beta_r));
    let w_l = alpha_l / (alpha_l + alpha_r);
    (w_l, 1.0 - w_l)
}

/// Weighted Hermite interpolation `H₃(x_i + theta dx)`.
///
/// Each candidate is the quadratic matching both endpoint values plus one
/// endpoint derivative; the blend reproduces the cubic Hermite interpolant
/// on smooth data and drops the oscillatory side otherwise. Exact at
/// `theta = 0` and `theta = 1`.
pub fn sl_interpolate(input: &SlKernelInput) -> f64 {
    let df = input.f_right - input.f_left;
    let t = input.theta;
    let quad = t * (t - 1.0); // (x-x_i)(x-x_{i+1}) / dx²
    let h_l = input.f_left + df * t + (df - input.dx * input.fp_left) * quad;
    let h_r = input.f_left + df * t + (input.dx * input.fp_right - df) * quad;
    let (w_l, w_r) = sl_weights(input);
    w_l * h_l + w_r * h_r
}

/// Sixth-order interface interpolation used as derivative data of the
/// primitive; `u` holds the six values centred on the interface.
#[inline]
fn g_prime(u: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), 6);
    ((u[5] + u[0]) - 8.0 * (u[4] + u[1]) + 37.0 * (u[3] + u[2])) / 60.0
}

/// Smoothness indicators of the three cubic candidates on `[x_i, x_{i+1}]`.
fn flux_betas(w: &[f64]) -> (f64, f64, f64) {
    let gp_lo = g_prime(&w[0..6]); // interface i-3/2
    let gp_hi = g_prime(&w[3..9]); // interface i+3/2
    let l1 = w[4] - w[3];
    let l2 = -3.0 * w[3] + w[4] + 2.0 * gp_lo;
    let beta_l = l1 * l1 + 3.0 * l1 * l2 + 75.0 / 16.0 * l2 * l2;
    let c1 = w[4] - w[3];
    let c2 = w[3] - 2.0 * w[4] + w[5];
    let beta_c = c1 * c1 + 2.0 * c1 * c2 + 25.0 / 12.0 * c2 * c2;
    let r1 = w[5] - w[4];
    let r2 = w[4] - 3.0 * w[5] + 2.0 * gp_hi;
    let beta_r = r1 * r1 + 39.0 / 16.0 * r2 * r2;
    (beta_l, beta_c, beta_r)
}

/// Nonlinear weights of the three flux candidates (left, centre, right).
pub fn flux_weights(w: &[f64]) -> [f64; 3] {
    assert_eq!(w.len(), FLUX_WINDOW, "flux window must hold 9 values");
    let (beta_l, beta_c, beta_r) = flux_betas(w);
    let a_l = (1.0 / 9.0) / ((WENO_EPS + beta_l) * (WENO_EPS + beta_l));
    let a_c = (4.0 / 9.0) / ((WENO_EPS + beta_c) * (WENO_EPS + beta_c));
    let a_r = (4.0 / 9.0) / ((WENO_EPS + beta_r) * (WENO_EPS + beta_r));
    let s = a_l + a_c + a_r;
    [a_l / s, a_c / s, a_r / s]
}

/// Left-biased interface reconstruction `f⁻_{i+1/2}`.
///
/// `w` holds the nine point values `u_{i-4} .. u_{i+4}`; the cell owning
/// the interface from the left is `w[4]`.
pub fn flux_minus(w: &[f64]) -> f64 {
    assert_eq!(w.len(), FLUX_WINDOW, "flux window must hold 9 values");
    let gp_lo = g_prime(&w[0..6]);
    let gp_hi = g_prime(&w[3..9]);
    let h_l = -2.0 * w[3] + 2.0 * w[4] + gp_lo;
    let h_c = (-w[3] + 5.0 * w[4] + 2.0 * w[5]) / 6.0;
    let h_r = (w[4] + 5.0 * w[5] - 2.0 * gp_hi) / 4.0;
    let [w_l, w_c, w_r] = flux_weights(w);
    w_l * h_l + w_c * h_c + w_r * h_r
}

/// Right-biased interface reconstruction `f⁺_{i+1/2}`, the mirror image of
/// [`flux_minus`] about the interface. `w` holds `u_{i-3} .. u_{i+5}`; the
/// reconstruction is evaluated on the reversed window so the mirror
/// symmetry holds bit for bit.
pub fn flux_plus(w: &[f64]) -> f64 {
    assert_eq!(w.len(), FLUX_WINDOW, "flux window must hold 9 values");
    let mut rev = [0.0; FLUX_WINDOW];
    for (k, r) in rev.iter_mut().enumerate() {
        *r = w[FLUX_WINDOW - 1 - k];
    }
    flux_minus(&rev)
}
