//! Uniform Cartesian meshes in 1–4 dimensions and dense node-centered fields.
//!
//! Values live at nodes, not cell centers. A periodic axis omits the
//! duplicate endpoint, so its spacing is `(max - min) / n`; a bounded axis
//! includes both endpoints and has spacing `(max - min) / (n - 1)`.
//!
//! Storage is row-major with the last axis contiguous. The 4D distribution
//! function is laid out as `(x, y, z, v∥)` so that v-advection sweeps run
//! on contiguous memory; perpendicular sweeps use strided line views.

mod snapshot;

pub use snapshot::{read_snapshot, write_snapshot, SnapshotMeta};

use crate::{Error, Result};
use std::sync::Arc;

/// One uniform mesh axis.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    /// Node count; every reconstruction stencil in this crate needs at
    /// least 5 points per line.
    pub n: usize,
    pub periodic: bool,
}

impl Axis {
    /// Bounded axis including both endpoints.
    pub fn bounded(min: f64, max: f64, n: usize) -> Result<Self> {
        Self::new(min, max, n, false)
    }

    /// Periodic axis; the node at `max` is identified with the one at `min`.
    pub fn periodic(min: f64, max: f64, n: usize) -> Result<Self> {
        Self::new(min, max, n, true)
    }

    fn new(min: f64, max: f64, n: usize, periodic: bool) -> Result<Self> {
        if n < 5 {
            return Err(Error::Config(format!(
                "axis needs at least 5 nodes, got {n}"
            )));
        }
        if !(max - min).is_finite() || max <= min {
            return Err(Error::Config(format!(
                "axis extent [{min}, {max}] is empty or not finite"
            )));
        }
        Ok(Axis {
            min,
            max,
            n,
            periodic,
        })
    }

    /// Mesh spacing; positive by construction.
    pub fn spacing(&self) -> f64 {
        if self.periodic {
            (self.max - self.min) / self.n as f64
        } else {
            (self.max - self.min) / (self.n - 1) as f64
        }
    }

    /// Coordinate of node `i`.
    pub fn coord(&self, i: usize) -> f64 {
        self.min + i as f64 * self.spacing()
    }

    /// Domain length `max - min`.
    pub fn extent(&self) -> f64 {
        self.max - self.min
    }

    /// All node coordinates.
    pub fn coords(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.coord(i)).collect()
    }
}

/// Ordered list of 1–4 axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    axes: Vec<Axis>,
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Arc<Self>> {
        if axes.is_empty() || axes.len() > 4 {
            return Err(Error::Config(format!(
                "grid must have 1 to 4 axes, got {}",
                axes.len()
            )));
        }
        Ok(Arc::new(Grid { axes }))
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axis(&self, k: usize) -> &Axis {
        &self.axes[k]
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.n).collect()
    }

    /// Total node count.
    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major strides, last axis contiguous.
    pub fn strides(&self) -> Vec<usize> {
        let d = self.dim();
        let mut s = vec![1usize; d];
        for k in (0..d.saturating_sub(1)).rev() {
            s[k] = s[k + 1] * self.axes[k + 1].n;
        }
        s
    }

    /// Flat index of a multi-index; panics on rank mismatch, errors on range.
    pub fn flat_index(&self, idx: &[usize]) -> Result<usize> {
        assert_eq!(idx.len(), self.dim(), "multi-index rank mismatch");
        let strides = self.strides();
        let mut flat = 0;
        for (k, (&i, s)) in idx.iter().zip(&strides).enumerate() {
            if i >= self.axes[k].n {
                return Err(Error::Index(format!(
                    "index {i} out of range on axis {k} (n = {})",
                    self.axes[k].n
                )));
            }
            flat += i * s;
        }
        Ok(flat)
    }

    /// Smallest spacing over all axes.
    pub fn min_spacing(&self) -> f64 {
        self.axes
            .iter()
            .map(|a| a.spacing())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Dense node-valued scalar field over a [`Grid`].
#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<Grid>,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.len();
        Field {
            grid,
            data: vec![0.0; n],
        }
    }

    pub fn constant(grid: Arc<Grid>, value: f64) -> Self {
        let n = grid.len();
        Field {
            grid,
            data: vec![value; n],
        }
    }

    /// Build from a function of node coordinates.
    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Self {
        let d = grid.dim();
        let shape = grid.shape();
        let n = grid.len();
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; d];
        let mut x = vec![0.0f64; d];
        for _ in 0..n {
            for k in 0..d {
                x[k] = grid.axis(k).coord(idx[k]);
            }
            data.push(f(&x));
            // odometer increment, last axis fastest
            for k in (0..d).rev() {
                idx[k] += 1;
                if idx[k] < shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Field { grid, data }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn at(&self, idx: &[usize]) -> Result<f64> {
        Ok(self.data[self.grid.flat_index(idx)?])
    }

    pub fn set(&mut self, idx: &[usize], v: f64) -> Result<()> {
        let k = self.grid.flat_index(idx)?;
        self.data[k] = v;
        Ok(())
    }

    /// True when both fields live on the same mesh.
    pub fn same_grid(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid == other.grid
    }

    /// Number of 1D lines along `axis`.
    pub fn n_lines(&self, axis: usize) -> usize {
        self.grid.len() / self.grid.axis(axis).n
    }

    /// Start offset and stride of the line along `axis` selected by `fixed`,
    /// the indices of the remaining axes in axis order.
    pub fn line_span(&self, axis: usize, fixed: &[usize]) -> Result<(usize, usize)> {
        let d = self.grid.dim();
        if axis >= d {
            return Err(Error::Index(format!("axis {axis} out of range, dim {d}")));
        }
        if fixed.len() != d - 1 {
            return Err(Error::Index(format!(
                "expected {} fixed indices, got {}",
                d - 1,
                fixed.len()
            )));
        }
        let strides = self.grid.strides();
        let mut offset = 0;
        let mut f = fixed.iter();
        for k in 0..d {
            if k == axis {
                continue;
            }
            let &i = f.next().unwrap();
            if i >= self.grid.axis(k).n {
                return Err(Error::Index(format!(
                    "fixed index {i} out of range on axis {k} (n = {})",
                    self.grid.axis(k).n
                )));
            }
            offset += i * strides[k];
        }
        Ok((offset, strides[axis]))
    }

    /// Copy the 1D slice along `axis` at `fixed` into `out`.
    pub fn read_line(&self, axis: usize, fixed: &[usize], out: &mut [f64]) -> Result<()> {
        let n = self.grid.axis(axis).n;
        assert_eq!(out.len(), n, "line buffer length mismatch");
        let (offset, stride) = self.line_span(axis, fixed)?;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.data[offset + i * stride];
        }
        Ok(())
    }

    /// Write the 1D slice along `axis` at `fixed` from `vals`.
    pub fn write_line(&mut self, axis: usize, fixed: &[usize], vals: &[f64]) -> Result<()> {
        let n = self.grid.axis(axis).n;
        assert_eq!(vals.len(), n, "line buffer length mismatch");
        let (offset, stride) = self.line_span(axis, fixed)?;
        for (i, &v) in vals.iter().enumerate() {
            self.data[offset + i * stride] = v;
        }
        Ok(())
    }

    /// Per-axis trapezoid/rectangle integral of the field; rectangle rule on
    /// periodic axes (exact for constants), trapezoid on bounded axes.
    /// `weights`, when given, overrides the rule per axis.
    pub fn reduce_integral(&self, weights: Option<&[Vec<f64>]>) -> f64 {
        let d = self.grid.dim();
        let mut w: Vec<Vec<f64>> = Vec::with_capacity(d);
        for k in 0..d {
            let ax = self.grid.axis(k);
            let wk = match weights.and_then(|ws| ws.get(k)) {
                Some(custom) => {
                    assert_eq!(custom.len(), ax.n, "weight length mismatch on axis {k}");
                    custom.clone()
                }
                None => default_axis_weights(ax),
            };
            w.push(wk);
        }
        let measure: f64 = (0..d).map(|k| self.grid.axis(k).spacing()).product();
        // Contract one axis at a time, innermost first; every reduction is a
        // fixed-tree pairwise sum so results are identical run to run.
        let mut cur = self.data.clone();
        for k in (0..d).rev() {
            let n = w[k].len();
            let lines = cur.len() / n;
            let mut next = Vec::with_capacity(lines);
            let mut scratch = vec![0.0f64; n];
            for l in 0..lines {
                for i in 0..n {
                    scratch[i] = cur[l * n + i] * w[k][i];
                }
                next.push(pairwise_sum(&scratch));
            }
            cur = next;
        }
        debug_assert_eq!(cur.len(), 1);
        cur[0] * measure
    }

    /// Largest absolute value.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    /// (min, max) over all nodes.
    pub fn min_max(&self) -> (f64, f64) {
        self.data.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), &v| (lo.min(v), hi.max(v)),
        )
    }

    /// True when every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Quadrature weights for one axis: rectangle when periodic, trapezoid when
/// bounded.
pub fn default_axis_weights(ax: &Axis) -> Vec<f64> {
    let mut w = vec![1.0; ax.n];
    if !ax.periodic {
        w[0] = 0.5;
        w[ax.n - 1] = 0.5;
    }
    w
}

/// Fixed-tree pairwise summation. Deterministic for a given input slice, and
/// much better conditioned than a running sum on long arrays.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        2 => v[0] + v[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid2(nx: usize, ny: usize) -> Arc<Grid> {
        Grid::new(vec![
            Axis::bounded(0.0, 1.0, nx).unwrap(),
            Axis::bounded(0.0, 1.0, ny).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn axis_rejects_small_n() {
        assert!(Axis::bounded(0.0, 1.0, 4).is_err());
        assert!(Axis::periodic(0.0, 1.0, 5).is_ok());
    }

    #[test]
    fn axis_spacing_conventions() {
        let b = Axis::bounded(0.0, 1.0, 11).unwrap();
        assert!((b.spacing() - 0.1).abs() < 1e-15);
        assert!((b.coord(10) - 1.0).abs() < 1e-15);
        let p = Axis::periodic(0.0, 1.0, 10).unwrap();
        assert!((p.spacing() - 0.1).abs() < 1e-15);
        // periodic axis omits the duplicate endpoint
        assert!((p.coord(9) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn grid_rank_limits() {
        let a = Axis::bounded(0.0, 1.0, 5).unwrap();
        assert!(Grid::new(vec![]).is_err());
        assert!(Grid::new(vec![a.clone(); 5]).is_err());
        assert!(Grid::new(vec![a; 4]).is_ok());
    }

    #[test]
    fn line_view_2d_matches_direct_indexing() {
        // f(i, j) = i + 10 j, line along axis 0 at j = 2
        let g = grid2(6, 5);
        let mut f = Field::zeros(g.clone());
        for i in 0..6 {
            for j in 0..5 {
                f.set(&[i, j], (i + 10 * j) as f64).unwrap();
            }
        }
        let mut line = vec![0.0; 6];
        f.read_line(0, &[2], &mut line).unwrap();
        assert_eq!(line, vec![20.0, 21.0, 22.0, 23.0, 24.0, 25.0]);
    }

    #[test]
    fn line_view_1d_is_whole_array() {
        let g = Grid::new(vec![Axis::bounded(0.0, 1.0, 7).unwrap()]).unwrap();
        let f = Field::from_fn(g, |x| x[0]);
        let mut line = vec![0.0; 7];
        f.read_line(0, &[], &mut line).unwrap();
        assert_eq!(line, f.data());
    }

    #[test]
    fn line_view_4d_constant_field() {
        let a = Axis::bounded(0.0, 1.0, 5).unwrap();
        let g = Grid::new(vec![a.clone(), a.clone(), a.clone(), a]).unwrap();
        let f = Field::constant(g, 1.0);
        for axis in 0..4 {
            let mut line = vec![0.0; 5];
            f.read_line(axis, &[1, 2, 3], &mut line).unwrap();
            assert!(line.iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn line_view_round_trip_is_identity() {
        let g = grid2(6, 5);
        let mut f = Field::from_fn(g, |x| (x[0] * 7.0).sin() + x[1]);
        let before = f.data().to_vec();
        let mut line = vec![0.0; 5];
        f.read_line(1, &[3], &mut line).unwrap();
        f.write_line(1, &[3], &line).unwrap();
        assert_eq!(f.data(), &before[..]);
    }

    #[test]
    fn line_view_rejects_out_of_range() {
        let g = grid2(6, 5);
        let f = Field::zeros(g);
        let mut line = vec![0.0; 6];
        assert!(f.read_line(0, &[7], &mut line).is_err());
        assert!(f.line_span(2, &[0]).is_err());
    }

    #[test]
    fn integral_constant_on_periodic_axis() {
        let g = Grid::new(vec![Axis::periodic(0.0, 1.0, 10).unwrap()]).unwrap();
        let f = Field::constant(g, 1.0);
        assert!((f.reduce_integral(None) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn integral_sine_on_periodic_axis() {
        let g = Grid::new(vec![Axis::periodic(0.0, 1.0, 64).unwrap()]).unwrap();
        let f = Field::from_fn(g, |x| (2.0 * std::f64::consts::PI * x[0]).sin());
        assert!(f.reduce_integral(None).abs() < 1e-14);
    }

    #[test]
    fn integral_linear_on_bounded_axis() {
        // ∫₀¹ x dx = 1/2, trapezoid is exact for linear data
        let g = Grid::new(vec![Axis::bounded(0.0, 1.0, 101).unwrap()]).unwrap();
        let f = Field::from_fn(g, |x| x[0]);
        assert!((f.reduce_integral(None) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn integral_is_linear_functional() {
        let g = grid2(17, 23);
        let f = Field::from_fn(g.clone(), |x| (3.1 * x[0]).cos() + x[1] * x[1]);
        let h = Field::from_fn(g.clone(), |x| (x[0] - 0.3) * (x[1] + 0.2));
        let (alpha, beta) = (1.7, -0.4);
        let mut combo = Field::zeros(g);
        for (c, (&a, &b)) in combo
            .data_mut()
            .iter_mut()
            .zip(f.data().iter().zip(h.data()))
        {
            *c = alpha * a + beta * b;
        }
        let lhs = combo.reduce_integral(None);
        let rhs = alpha * f.reduce_integral(None) + beta * h.reduce_integral(None);
        assert!((lhs - rhs).abs() < 1e-13 * (1.0 + rhs.abs()));
    }

    #[test]
    fn pairwise_sum_matches_exact_on_integers() {
        let v: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 500500.0);
    }
}
