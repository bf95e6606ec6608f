//! Embedded 2D domains inside a Cartesian bounding grid.
//!
//! A [`DomainShape`] is an implicit region (disk, tokamak-like D-shape, or
//! generic polygon). [`classify`] splits the bounding grid's nodes into
//! interior, ghost (first exterior layer touching the interior through a
//! 4-neighbor) and far-exterior. [`build_ghost_stencils`] equips every ghost
//! with the data the elliptic solver needs to eliminate it: the foot point
//! on the boundary, the inward unit normal, two auxiliary points spaced
//! `h = min(Δx, Δy)` along the normal, quadratic extrapolation weights, and
//! per-arm interpolation stencils (9-point biquadratic, falling back to
//! 4-point bilinear or a single node where the geometry is too tight).

use crate::grid::{pairwise_sum, Field, Grid};
use crate::{Error, Result};
use std::io::Write;
use std::sync::Arc;

/// Closed boundary resolution used for inside tests and projection seeds.
const POLYLINE_SAMPLES: usize = 1 << 14;

/// Implicit 2D region.
#[derive(Debug, Clone)]
pub enum DomainShape {
    Disk { center: [f64; 2], radius: f64 },
    /// The D-shaped cross-section; all mapping constants are fixed.
    DShape,
    /// Simple closed polygon; orientation is normalized internally.
    Polygon { vertices: Vec<[f64; 2]> },
}

/// The D-shape curvilinear mapping `(ξ1, ξ2) → (x, y)`.
pub mod dshape {
    /// Horizontal offset of the section.
    pub const X_CENTER: f64 = 1.7;
    /// Radius coefficient: `R(ξ1) = 0.074 (2 ξ1 - 1) + 0.536`.
    pub const R_SLOPE: f64 = 0.074;
    pub const R_OFFSET: f64 = 0.536;
    /// Triangularity parameter entering through `asin(0.416)`.
    pub const TRIANGULARITY: f64 = 0.416;
    /// Vertical elongation.
    pub const ELONGATION: f64 = 1.66;
    /// Valid range of the radial coordinate: `-231/74 <= ξ1 <= 1`.
    pub const XI1_MIN: f64 = -231.0 / 74.0;
    pub const XI1_MAX: f64 = 1.0;

    use std::f64::consts::PI;

    fn radius(xi1: f64) -> f64 {
        R_SLOPE * (2.0 * xi1 - 1.0) + R_OFFSET
    }

    /// Physical coordinates of `(ξ1, ξ2)`.
    pub fn map(xi1: f64, xi2: f64) -> [f64; 2] {
        let r = radius(xi1);
        let ang = 2.0 * PI * xi2 + TRIANGULARITY.asin() * (2.0 * PI * xi2).sin();
        [X_CENTER + r * ang.cos(), ELONGATION * r * (2.0 * PI * xi2).sin()]
    }

    /// Jacobian of [`map`], columns `∂/∂ξ1` and `∂/∂ξ2`.
    pub fn jacobian(xi1: f64, xi2: f64) -> [[f64; 2]; 2] {
        let r = radius(xi1);
        let s = (2.0 * PI * xi2).sin();
        let c = (2.0 * PI * xi2).cos();
        let ang = 2.0 * PI * xi2 + TRIANGULARITY.asin() * s;
        let dang = 2.0 * PI * (1.0 + TRIANGULARITY.asin() * c);
        [
            [2.0 * R_SLOPE * ang.cos(), -r * ang.sin() * dang],
            [ELONGATION * 2.0 * R_SLOPE * s, ELONGATION * r * 2.0 * PI * c],
        ]
    }

    /// Boundary curve `ξ1 = 1`.
    pub fn boundary(xi2: f64) -> [f64; 2] {
        map(XI1_MAX, xi2)
    }

    /// First derivative of [`boundary`] with respect to `ξ2`.
    pub fn boundary_deriv(xi2: f64) -> [f64; 2] {
        let j = jacobian(XI1_MAX, xi2);
        [j[0][1], j[1][1]]
    }

    /// Second derivative of [`boundary`] with respect to `ξ2`.
    pub fn boundary_deriv2(xi2: f64) -> [f64; 2] {
        let r = radius(XI1_MAX);
        let s = (2.0 * PI * xi2).sin();
        let c = (2.0 * PI * xi2).cos();
        let a = TRIANGULARITY.asin();
        let ang = 2.0 * PI * xi2 + a * s;
        let dang = 2.0 * PI * (1.0 + a * c);
        let d2ang = -a * (2.0 * PI) * (2.0 * PI) * s;
        [
            -r * (ang.cos() * dang * dang + ang.sin() * d2ang),
            -ELONGATION * r * (2.0 * PI) * (2.0 * PI) * s,
        ]
    }
}

/// Node classification on the bounding grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeClass {
    Interior,
    Ghost,
    Exterior,
}

/// Interpolation stencil quality for a ghost arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StencilKind {
    /// 9 points, biquadratic; reproduces quadratics.
    Q2,
    /// 4 points, bilinear; reproduces affine functions.
    Q1,
    /// Single nearest interior node; reproduces constants.
    Q0,
}

/// Interpolation stencil evaluating a field at one arm point.
#[derive(Debug, Clone)]
pub struct ArmStencil {
    pub point: [f64; 2],
    pub kind: StencilKind,
    pub nodes: Vec<[usize; 2]>,
    pub weights: Vec<f64>,
}

impl ArmStencil {
    /// Apply the stencil to a field on the bounding grid.
    pub fn apply(&self, field: &Field) -> f64 {
        let grid = field.grid();
        let nx_stride = grid.strides()[0];
        let data = field.data();
        let mut terms: Vec<f64> = Vec::with_capacity(self.nodes.len());
        for (idx, &w) in self.nodes.iter().zip(&self.weights) {
            terms.push(w * data[idx[0] * nx_stride + idx[1]]);
        }
        pairwise_sum(&terms)
    }
}

/// One first-layer exterior node with its boundary extrapolation data.
#[derive(Debug, Clone)]
pub struct GhostPoint {
    pub index: [usize; 2],
    /// Closest boundary point to the ghost node.
    pub boundary_point: [f64; 2],
    /// Inward unit normal at `boundary_point`.
    pub normal: [f64; 2],
    /// Arm spacing along the normal, `min(Δx, Δy)`.
    pub h: f64,
    /// Quadratic extrapolation weights for the ghost value from
    /// `(boundary, x_h, x_2h)`.
    pub extrap_weights: [f64; 3],
    pub arm_h: ArmStencil,
    pub arm_2h: ArmStencil,
}

impl GhostPoint {
    /// Interior-node weights of the full extrapolation, arm stencils folded
    /// through the normal weights. The boundary datum keeps weight
    /// `extrap_weights[0]`, so all weights together sum to one.
    pub fn composed_weights(&self) -> Vec<([usize; 2], f64)> {
        let mut out: Vec<([usize; 2], f64)> = Vec::new();
        let mut add = |nodes: &[[usize; 2]], weights: &[f64], scale: f64| {
            for (n, &w) in nodes.iter().zip(weights) {
                if let Some(e) = out.iter_mut().find(|(m, _)| m == n) {
                    e.1 += scale * w;
                } else {
                    out.push((*n, scale * w));
                }
            }
        };
        add(&self.arm_h.nodes, &self.arm_h.weights, self.extrap_weights[1]);
        add(&self.arm_2h.nodes, &self.arm_2h.weights, self.extrap_weights[2]);
        out
    }

    /// Extrapolated ghost value given the interior field and the Dirichlet
    /// datum at the boundary point.
    pub fn extrapolate(&self, field: &Field, boundary_value: f64) -> f64 {
        self.extrap_weights[0] * boundary_value
            + self.extrap_weights[1] * self.arm_h.apply(field)
            + self.extrap_weights[2] * self.arm_2h.apply(field)
    }
}

/// An implicit region embedded in a 2D Cartesian bounding grid.
#[derive(Debug, Clone)]
pub struct EmbeddedDomain {
    pub shape: DomainShape,
    pub grid: Arc<Grid>,
    /// Per-node classification, row-major `(i, j) → i * ny + j`.
    pub mask: Vec<NodeClass>,
    pub ghosts: Vec<GhostPoint>,
    /// Node index → position in `ghosts`, when the node is a ghost.
    ghost_of: Vec<Option<u32>>,
    geom: ShapeGeometry,
}

impl EmbeddedDomain {
    pub fn nx(&self) -> usize {
        self.grid.axis(0).n
    }

    pub fn ny(&self) -> usize {
        self.grid.axis(1).n
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> usize {
        i * self.ny() + j
    }

    #[inline]
    pub fn class(&self, i: usize, j: usize) -> NodeClass {
        self.mask[self.node(i, j)]
    }

    #[inline]
    pub fn is_interior(&self, i: usize, j: usize) -> bool {
        self.class(i, j) == NodeClass::Interior
    }

    pub fn ghost_at(&self, i: usize, j: usize) -> Option<&GhostPoint> {
        self.ghost_of[self.node(i, j)].map(|k| &self.ghosts[k as usize])
    }

    /// Coordinates of node `(i, j)`.
    pub fn coords(&self, i: usize, j: usize) -> [f64; 2] {
        [self.grid.axis(0).coord(i), self.grid.axis(1).coord(j)]
    }

    pub fn interior_count(&self) -> usize {
        self.mask
            .iter()
            .filter(|c| **c == NodeClass::Interior)
            .count()
    }

    /// Interior node multi-indices in row-major order.
    pub fn interior_nodes(&self) -> Vec<[usize; 2]> {
        let (nx, ny) = (self.nx(), self.ny());
        let mut out = Vec::new();
        for i in 0..nx {
            for j in 0..ny {
                if self.is_interior(i, j) {
                    out.push([i, j]);
                }
            }
        }
        out
    }

    /// True inside test of the continuous shape (not the node mask).
    pub fn inside(&self, p: [f64; 2]) -> bool {
        self.geom.inside(p)
    }

    /// Project an exterior point onto the boundary; see
    /// [`project_to_boundary`].
    pub fn project(&self, p: [f64; 2]) -> Result<([f64; 2], [f64; 2])> {
        self.geom.project(p)
    }

    /// Exterior nodes (ghosts included) within `depth` dilation steps of the
    /// interior, 8-neighborhood. Transport sweeps fill these with
    /// equilibrium data so reconstruction windows close.
    pub fn exterior_band(&self, depth: usize) -> Vec<bool> {
        let (nx, ny) = (self.nx(), self.ny());
        let mut reach: Vec<bool> = self
            .mask
            .iter()
            .map(|c| *c == NodeClass::Interior)
            .collect();
        for _ in 0..depth {
            let prev = reach.clone();
            for i in 0..nx {
                for j in 0..ny {
                    if prev[i * ny + j] {
                        continue;
                    }
                    let lo_i = i.saturating_sub(1);
                    let hi_i = (i + 1).min(nx - 1);
                    let lo_j = j.saturating_sub(1);
                    let hi_j = (j + 1).min(ny - 1);
                    'scan: for ii in lo_i..=hi_i {
                        for jj in lo_j..=hi_j {
                            if prev[ii * ny + jj] {
                                reach[i * ny + j] = true;
                                break 'scan;
                            }
                        }
                    }
                }
            }
        }
        for (r, c) in reach.iter_mut().zip(&self.mask) {
            if *c == NodeClass::Interior {
                *r = false;
            }
        }
        reach
    }

    /// Masked rectangle-rule integral over interior nodes.
    pub fn interior_integral(&self, field: &Field) -> f64 {
        self.interior_weighted_integral(field, |v| v)
    }

    /// Masked rectangle-rule integral of `w(f)` over interior nodes.
    pub fn interior_weighted_integral(&self, field: &Field, w: impl Fn(f64) -> f64) -> f64 {
        debug_assert_eq!(field.grid().len(), self.grid.len());
        let cell = self.grid.axis(0).spacing() * self.grid.axis(1).spacing();
        let data = field.data();
        let terms: Vec<f64> = self
            .mask
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == NodeClass::Interior)
            .map(|(k, _)| w(data[k]))
            .collect();
        pairwise_sum(&terms) * cell
    }

    /// Fill ghost nodes of `field` by normal extrapolation with Dirichlet
    /// datum `g` at the boundary foot; other nodes are untouched.
    pub fn fill_ghosts(&self, field: &mut Field, g: impl Fn([f64; 2]) -> f64) {
        let snapshot = field.clone();
        for ghost in &self.ghosts {
            let v = ghost.extrapolate(&snapshot, g(ghost.boundary_point));
            let k = self.node(ghost.index[0], ghost.index[1]);
            field.data_mut()[k] = v;
        }
    }

    /// Debug dump: node classes plus ghost records, CSV.
    pub fn dump_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "i,j,class")?;
        for i in 0..self.nx() {
            for j in 0..self.ny() {
                let c = match self.class(i, j) {
                    NodeClass::Interior => "interior",
                    NodeClass::Ghost => "ghost",
                    NodeClass::Exterior => "exterior",
                };
                writeln!(w, "{i},{j},{c}")?;
            }
        }
        writeln!(w, "ghost_i,ghost_j,xp_x,xp_y,n_x,n_y,w_p,w_h,w_2h")?;
        for g in &self.ghosts {
            writeln!(
                w,
                "{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                g.index[0],
                g.index[1],
                g.boundary_point[0],
                g.boundary_point[1],
                g.normal[0],
                g.normal[1],
                g.extrap_weights[0],
                g.extrap_weights[1],
                g.extrap_weights[2]
            )?;
        }
        Ok(())
    }
}

/// Continuous geometry backing a shape: inside tests and projections.
#[derive(Debug, Clone)]
struct ShapeGeometry {
    shape: DomainShape,
    /// Dense closed boundary polyline for DShape/Polygon; empty for disks.
    polyline: Vec<[f64; 2]>,
}

impl ShapeGeometry {
    fn new(shape: &DomainShape) -> Result<Self> {
        let polyline = match shape {
            DomainShape::Disk { .. } => Vec::new(),
            DomainShape::DShape => (0..POLYLINE_SAMPLES)
                .map(|k| dshape::boundary(k as f64 / POLYLINE_SAMPLES as f64))
                .collect(),
            DomainShape::Polygon { vertices } => {
                if vertices.len() < 3 {
                    return Err(Error::Geometry(
                        "polygon needs at least 3 vertices".into(),
                    ));
                }
                let mut v = vertices.clone();
                if signed_area(&v) < 0.0 {
                    v.reverse(); // normalize to counterclockwise
                }
                v
            }
        };
        Ok(ShapeGeometry {
            shape: shape.clone(),
            polyline,
        })
    }

    fn bbox(&self) -> ([f64; 2], [f64; 2]) {
        match &self.shape {
            DomainShape::Disk { center, radius } => (
                [center[0] - radius, center[1] - radius],
                [center[0] + radius, center[1] + radius],
            ),
            _ => {
                let mut lo = [f64::INFINITY; 2];
                let mut hi = [f64::NEG_INFINITY; 2];
                for p in &self.polyline {
                    for k in 0..2 {
                        lo[k] = lo[k].min(p[k]);
                        hi[k] = hi[k].max(p[k]);
                    }
                }
                (lo, hi)
            }
        }
    }

    fn inside(&self, p: [f64; 2]) -> bool {
        match &self.shape {
            DomainShape::Disk { center, radius } => {
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                dx * dx + dy * dy < radius * radius
            }
            _ => winding_number(&self.polyline, p) != 0,
        }
    }

    /// Closest boundary point and inward unit normal.
    fn project(&self, p: [f64; 2]) -> Result<([f64; 2], [f64; 2])> {
        match &self.shape {
            DomainShape::Disk { center, radius } => {
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                let d = (dx * dx + dy * dy).sqrt();
                if d == 0.0 {
                    return Err(Error::Geometry(
                        "projection from the disk center is ambiguous".into(),
                    ));
                }
                let xp = [center[0] + radius * dx / d, center[1] + radius * dy / d];
                Ok((xp, [-dx / d, -dy / d]))
            }
            DomainShape::DShape => self.project_dshape(p),
            DomainShape::Polygon { .. } => Ok(self.project_polygon(p)),
        }
    }

    fn project_dshape(&self, p: [f64; 2]) -> Result<([f64; 2], [f64; 2])> {
        // polyline seed: first sample at minimal distance (lowest ξ2 on ties)
        let n = self.polyline.len();
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (k, q) in self.polyline.iter().enumerate() {
            let d = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        let mut t = best as f64 / n as f64;
        // Newton on g(t) = (P(t) - p) · P'(t) = 0
        let mut converged = false;
        for _ in 0..50 {
            let q = dshape::boundary(t);
            let dq = dshape::boundary_deriv(t);
            let d2q = dshape::boundary_deriv2(t);
            let rx = q[0] - p[0];
            let ry = q[1] - p[1];
            let g = rx * dq[0] + ry * dq[1];
            let gp = dq[0] * dq[0] + dq[1] * dq[1] + rx * d2q[0] + ry * d2q[1];
            if gp == 0.0 {
                break;
            }
            let step = g / gp;
            t -= step;
            t -= t.floor(); // wrap to [0, 1)
            if step.abs() < 1e-14 {
                converged = true;
                break;
            }
        }
        if !converged {
            // accept on residual size: near-tangential seeds can stall on
            // the step criterion while already sitting at the minimum
            let q = dshape::boundary(t);
            let dq = dshape::boundary_deriv(t);
            let g = (q[0] - p[0]) * dq[0] + (q[1] - p[1]) * dq[1];
            let scale = (dq[0] * dq[0] + dq[1] * dq[1]).sqrt();
            if g.abs() > 1e-9 * scale.max(1.0) {
                return Err(Error::Geometry(format!(
                    "boundary projection did not converge for ({}, {}): residual {g:.3e}",
                    p[0], p[1]
                )));
            }
        }
        let q = dshape::boundary(t);
        let dq = dshape::boundary_deriv(t);
        let norm = (dq[0] * dq[0] + dq[1] * dq[1]).sqrt();
        // boundary runs counterclockwise, so inward is the left normal
        Ok((q, [-dq[1] / norm, dq[0] / norm]))
    }

    fn project_polygon(&self, p: [f64; 2]) -> ([f64; 2], [f64; 2]) {
        let v = &self.polyline;
        let n = v.len();
        let mut best_d = f64::INFINITY;
        let mut best_q = [0.0; 2];
        let mut best_edge = 0usize;
        let mut best_interior_hit = false;
        for e in 0..n {
            let a = v[e];
            let b = v[(e + 1) % n];
            let ex = b[0] - a[0];
            let ey = b[1] - a[1];
            let len2 = ex * ex + ey * ey;
            let s = if len2 == 0.0 {
                0.0
            } else {
                (((p[0] - a[0]) * ex + (p[1] - a[1]) * ey) / len2).clamp(0.0, 1.0)
            };
            let q = [a[0] + s * ex, a[1] + s * ey];
            let d = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
            if d < best_d {
                best_d = d;
                best_q = q;
                best_edge = e;
                best_interior_hit = s > 0.0 && s < 1.0;
            }
        }
        if best_interior_hit {
            let a = v[best_edge];
            let b = v[(best_edge + 1) % n];
            let ex = b[0] - a[0];
            let ey = b[1] - a[1];
            let norm = (ex * ex + ey * ey).sqrt();
            // counterclockwise orientation: left normal points inward
            (best_q, [-ey / norm, ex / norm])
        } else {
            // corner hit: the inward direction points back toward the
            // projected point, flipped when p itself is inside
            let dx = p[0] - best_q[0];
            let dy = p[1] - best_q[1];
            let norm = (dx * dx + dy * dy).sqrt().max(1e-300);
            let sign = if self.inside(p) { 1.0 } else { -1.0 };
            (best_q, [sign * dx / norm, sign * dy / norm])
        }
    }
}

/// Twice the signed area of a closed polygon (positive when CCW).
fn signed_area(v: &[[f64; 2]]) -> f64 {
    let n = v.len();
    let mut s = 0.0;
    for k in 0..n {
        let a = v[k];
        let b = v[(k + 1) % n];
        s += a[0] * b[1] - b[0] * a[1];
    }
    s
}

/// Winding number of a closed polyline around `p` (Sunday's algorithm).
fn winding_number(v: &[[f64; 2]], p: [f64; 2]) -> i32 {
    let n = v.len();
    let mut wn = 0i32;
    for k in 0..n {
        let a = v[k];
        let b = v[(k + 1) % n];
        let is_left = (b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1]);
        if a[1] <= p[1] {
            if b[1] > p[1] && is_left > 0.0 {
                wn += 1;
            }
        } else if b[1] <= p[1] && is_left < 0.0 {
            wn -= 1;
        }
    }
    wn
}

/// Classify every node of a 2D bounding grid against `shape`.
///
/// The grid box must strictly contain the shape. Every exterior node with
/// an interior 4-neighbor is classified [`NodeClass::Ghost`]; stencil data
/// is attached later by [`build_ghost_stencils`].
pub fn classify(shape: &DomainShape, grid: &Arc<Grid>) -> Result<EmbeddedDomain> {
    if grid.dim() != 2 {
        return Err(Error::Config(format!(
            "embedded domains need a 2D grid, got {}D",
            grid.dim()
        )));
    }
    let geom = ShapeGeometry::new(shape)?;
    let (lo, hi) = geom.bbox();
    let (ax, ay) = (grid.axis(0), grid.axis(1));
    if lo[0] <= ax.min || hi[0] >= ax.max || lo[1] <= ay.min || hi[1] >= ay.max {
        return Err(Error::Geometry(format!(
            "shape bbox [{:.3},{:.3}]x[{:.3},{:.3}] not strictly inside grid box \
             [{:.3},{:.3}]x[{:.3},{:.3}]",
            lo[0], hi[0], lo[1], hi[1], ax.min, ax.max, ay.min, ay.max
        )));
    }
    let (nx, ny) = (ax.n, ay.n);
    let mut mask = vec![NodeClass::Exterior; nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            if geom.inside([ax.coord(i), ay.coord(j)]) {
                mask[i * ny + j] = NodeClass::Interior;
            }
        }
    }
    // first exterior layer touching the interior through a 4-neighbor
    for i in 0..nx {
        for j in 0..ny {
            if mask[i * ny + j] != NodeClass::Exterior {
                continue;
            }
            let mut touches = false;
            if i > 0 {
                touches |= mask[(i - 1) * ny + j] == NodeClass::Interior;
            }
            if i + 1 < nx {
                touches |= mask[(i + 1) * ny + j] == NodeClass::Interior;
            }
            if j > 0 {
                touches |= mask[i * ny + j - 1] == NodeClass::Interior;
            }
            if j + 1 < ny {
                touches |= mask[i * ny + j + 1] == NodeClass::Interior;
            }
            if touches {
                mask[i * ny + j] = NodeClass::Ghost;
            }
        }
    }
    let interior: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter(|(_, c)| **c == NodeClass::Interior)
        .map(|(k, _)| k)
        .collect();
    if interior.is_empty() {
        return Err(Error::Geometry(
            "no interior nodes; grid too coarse for the shape".into(),
        ));
    }
    // interior must be 4-connected or the elliptic systems decouple
    let mut seen = vec![false; nx * ny];
    let mut stack = vec![interior[0]];
    seen[interior[0]] = true;
    let mut count = 0usize;
    while let Some(k) = stack.pop() {
        count += 1;
        let (i, j) = (k / ny, k % ny);
        let mut push = |kk: usize, stack: &mut Vec<usize>, seen: &mut Vec<bool>| {
            if !seen[kk] && mask[kk] == NodeClass::Interior {
                seen[kk] = true;
                stack.push(kk);
            }
        };
        if i > 0 {
            push((i - 1) * ny + j, &mut stack, &mut seen);
        }
        if i + 1 < nx {
            push((i + 1) * ny + j, &mut stack, &mut seen);
        }
        if j > 0 {
            push(k - 1, &mut stack, &mut seen);
        }
        if j + 1 < ny {
            push(k + 1, &mut stack, &mut seen);
        }
    }
    if count != interior.len() {
        return Err(Error::Geometry(format!(
            "interior is not 4-connected ({count} of {} reachable)",
            interior.len()
        )));
    }
    Ok(EmbeddedDomain {
        shape: shape.clone(),
        grid: grid.clone(),
        mask,
        ghosts: Vec::new(),
        ghost_of: vec![None; nx * ny],
        geom,
    })
}

/// Closest boundary point of `shape` to `x_g` plus the inward unit normal
/// there. Free-standing convenience; [`EmbeddedDomain::project`] reuses the
/// cached boundary polyline instead.
pub fn project_to_boundary(shape: &DomainShape, x_g: [f64; 2]) -> Result<([f64; 2], [f64; 2])> {
    ShapeGeometry::new(shape)?.project(x_g)
}

/// Quadratic extrapolation weights for the ghost value at distance `d`
/// outside the boundary, from data at the boundary point and at `h`, `2h`
/// along the inward normal.
pub fn extrapolation_weights(d: f64, h: f64) -> [f64; 3] {
    let w_p = (d + h) * (d + 2.0 * h) / (2.0 * h * h);
    let w_h = -d * (d + 2.0 * h) / (h * h);
    let w_2h = d * (d + h) / (2.0 * h * h);
    [w_p, w_h, w_2h]
}

/// Attach projection data and interpolation stencils to every ghost of a
/// classified domain.
pub fn build_ghost_stencils(mut domain: EmbeddedDomain) -> Result<EmbeddedDomain> {
    let (dx, dy) = (
        domain.grid.axis(0).spacing(),
        domain.grid.axis(1).spacing(),
    );
    let h = dx.min(dy);
    let (nx, ny) = (domain.nx(), domain.ny());
    let mut ghosts = Vec::new();
    let mut ghost_of = vec![None; nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            if domain.class(i, j) != NodeClass::Ghost {
                continue;
            }
            let x_g = domain.coords(i, j);
            let (x_p, n) = domain.geom.project(x_g)?;
            let d = ((x_g[0] - x_p[0]).powi(2) + (x_g[1] - x_p[1]).powi(2)).sqrt();
            let x_h = [x_p[0] + h * n[0], x_p[1] + h * n[1]];
            let x_2h = [x_p[0] + 2.0 * h * n[0], x_p[1] + 2.0 * h * n[1]];
            let arm_h = build_arm_stencil(&domain, x_h, n)?;
            let arm_2h = build_arm_stencil(&domain, x_2h, n)?;
            ghost_of[i * ny + j] = Some(ghosts.len() as u32);
            ghosts.push(GhostPoint {
                index: [i, j],
                boundary_point: x_p,
                normal: n,
                h,
                extrap_weights: extrapolation_weights(d, h),
                arm_h,
                arm_2h,
            });
        }
    }
    domain.ghosts = ghosts;
    domain.ghost_of = ghost_of;
    Ok(domain)
}

/// Classify and equip a domain in one call.
pub fn embed(shape: &DomainShape, grid: &Arc<Grid>) -> Result<EmbeddedDomain> {
    build_ghost_stencils(classify(shape, grid)?)
}

/// 1D Lagrange weights for evaluation at `x` from the given nodes.
fn lagrange_weights(nodes: &[f64], x: f64) -> Vec<f64> {
    let m = nodes.len();
    let mut w = vec![1.0; m];
    for k in 0..m {
        for l in 0..m {
            if l != k {
                w[k] *= (x - nodes[l]) / (nodes[k] - nodes[l]);
            }
        }
    }
    w
}

/// Build the interpolation stencil for one arm point: biquadratic from
/// three grid lines crossed by the normal with the three nearest interior
/// nodes on each, degrading to bilinear (2x2) and finally to the single
/// nearest interior node.
fn build_arm_stencil(
    domain: &EmbeddedDomain,
    point: [f64; 2],
    normal: [f64; 2],
) -> Result<ArmStencil> {
    // Arm points outside the interior make the Q2 stencil extrapolate; go
    // straight to the low-order fallbacks there.
    if domain.geom.inside(point) {
        if let Some((nodes, weights)) = try_tensor_stencil(domain, point, normal, 3) {
            return Ok(ArmStencil {
                point,
                kind: StencilKind::Q2,
                nodes,
                weights,
            });
        }
    }
    if let Some((nodes, weights)) = try_tensor_stencil(domain, point, normal, 2) {
        return Ok(ArmStencil {
            point,
            kind: StencilKind::Q1,
            nodes,
            weights,
        });
    }
    // nearest interior node
    let (nx, ny) = (domain.nx(), domain.ny());
    let mut best: Option<([usize; 2], f64)> = None;
    for i in 0..nx {
        for j in 0..ny {
            if !domain.is_interior(i, j) {
                continue;
            }
            let c = domain.coords(i, j);
            let d = (c[0] - point[0]).powi(2) + (c[1] - point[1]).powi(2);
            if best.map(|(_, bd)| d < bd).unwrap_or(true) {
                best = Some(([i, j], d));
            }
        }
    }
    match best {
        Some((idx, _)) => Ok(ArmStencil {
            point,
            kind: StencilKind::Q0,
            nodes: vec![idx],
            weights: vec![1.0],
        }),
        None => Err(Error::Geometry(
            "no interior node available for ghost arm; domain too thin for this grid".into(),
        )),
    }
}

/// Tensor stencil of `m` lines x `m` nodes per line (m = 3 for Q2, 2 for
/// Q1). Lines run perpendicular to the dominant normal component, starting
/// from the first grid line strictly inward of the arm point.
#[allow(clippy::type_complexity)]
fn try_tensor_stencil(
    domain: &EmbeddedDomain,
    point: [f64; 2],
    normal: [f64; 2],
    m: usize,
) -> Option<(Vec<[usize; 2]>, Vec<f64>)> {
    let (ax, ay) = (domain.grid.axis(0), domain.grid.axis(1));
    // crossed lines are perpendicular to the dominant normal direction:
    // mostly-vertical normals cross horizontal lines y = y_j and vice versa
    let vertical_normal = normal[1].abs() >= normal[0].abs();
    let (line_axis, node_axis) = if vertical_normal { (ay, ax) } else { (ax, ay) };
    let p_line = if vertical_normal { point[1] } else { point[0] };
    let p_node = if vertical_normal { point[0] } else { point[1] };
    let n_line = if vertical_normal { normal[1] } else { normal[0] };
    let n_node = if vertical_normal { normal[0] } else { normal[1] };

    let dl = line_axis.spacing();
    let step: isize = if n_line > 0.0 { 1 } else { -1 };
    // first line index strictly on the inward side of the arm point
    let frac = (p_line - line_axis.min) / dl;
    let first: isize = if n_line > 0.0 {
        frac.floor() as isize + 1
    } else {
        frac.ceil() as isize - 1
    };

    let mut line_coords = Vec::with_capacity(m);
    let mut line_nodes: Vec<Vec<usize>> = Vec::with_capacity(m);
    let mut line_wts: Vec<Vec<f64>> = Vec::with_capacity(m);
    for l in 0..m as isize {
        let li = first + step * l;
        if li < 0 || li as usize >= line_axis.n {
            return None;
        }
        let li = li as usize;
        let y_l = line_axis.coord(li);
        // crossing of the normal ray with this line
        let x_star = p_node + n_node * (y_l - p_line) / n_line;
        // nearest interior nodes on the line; ties resolved by lower index
        let mut cand: Vec<(f64, usize)> = (0..node_axis.n)
            .filter(|&k| {
                let (i, j) = if vertical_normal { (k, li) } else { (li, k) };
                domain.is_interior(i, j)
            })
            .map(|k| ((node_axis.coord(k) - x_star).abs(), k))
            .collect();
        if cand.len() < m {
            return None;
        }
        cand.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut chosen: Vec<usize> = cand[..m].iter().map(|c| c.1).collect();
        chosen.sort_unstable();
        let coords: Vec<f64> = chosen.iter().map(|&k| node_axis.coord(k)).collect();
        line_coords.push(y_l);
        line_wts.push(lagrange_weights(&coords, p_node));
        line_nodes.push(chosen);
    }
    let across = lagrange_weights(&line_coords, p_line);
    let mut nodes = Vec::with_capacity(m * m);
    let mut weights = Vec::with_capacity(m * m);
    for l in 0..m {
        let li = (first + step * l as isize) as usize;
        for (k, &node_k) in line_nodes[l].iter().enumerate() {
            let idx = if vertical_normal {
                [node_k, li]
            } else {
                [li, node_k]
            };
            nodes.push(idx);
            weights.push(across[l] * line_wts[l][k]);
        }
    }
    Some((nodes, weights))
}
