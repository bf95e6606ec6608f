//! Field equations on embedded domains.
//!
//! Discretizes `-∇·(a ∇φ) + b φ = rhs` with the classical five-point
//! stencil over the interior unknowns of an [`EmbeddedDomain`]; every ghost
//! neighbor is eliminated through its normal-extrapolation stencil, which
//! moves the Dirichlet boundary datum to the right-hand side and couples
//! the row to a few extra interior nodes (those rows are mildly
//! nonsymmetric, so the backend is a sparse LU).
//!
//! On top of the linear solve sit the nonlinear steady state (Newton with
//! residual-monotone damping) and the quasi-neutrality decomposition: a 2D
//! average equation plus independent per-slice fluctuation equations that
//! share a single factorization.

use crate::geometry::{EmbeddedDomain, NodeClass};
use crate::grid::{Field, Grid};
use crate::{Error, Result};
use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

/// Interface-coefficient averaging for the variable diffusion coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoefMean {
    #[default]
    Arithmetic,
    Harmonic,
}

fn mean(kind: CoefMean, a: f64, b: f64) -> f64 {
    match kind {
        CoefMean::Arithmetic => 0.5 * (a + b),
        CoefMean::Harmonic => {
            if a + b == 0.0 {
                0.0
            } else {
                2.0 * a * b / (a + b)
            }
        }
    }
}

/// Assembled operator `-∇·(a ∇·) + b` over the interior unknowns of an
/// embedded domain, ghosts eliminated, Dirichlet datum folded into
/// [`EllipticProblem::boundary_rhs`].
pub struct EllipticProblem {
    pub domain: Arc<EmbeddedDomain>,
    /// Node index (i * ny + j) → unknown index.
    pub unknown_of: Vec<Option<usize>>,
    /// Unknown index → node multi-index.
    pub nodes: Vec<[usize; 2]>,
    /// Zeroth-order coefficient at each unknown (zero when absent).
    pub b_diag: Vec<f64>,
    /// Boundary contribution to the right-hand side, per unknown.
    pub boundary_rhs: Vec<f64>,
    entries: BTreeMap<(usize, usize), f64>,
    matrix: SparseColMat<usize, f64>,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

/// Build the operator. `a` must be positive on interior and ghost nodes;
/// `b`, when given, is read at interior nodes. `dirichlet` supplies the
/// boundary datum at each ghost's foot point.
pub fn assemble(
    domain: &Arc<EmbeddedDomain>,
    a: &Field,
    b: Option<&Field>,
    mean_kind: CoefMean,
    dirichlet: impl Fn([f64; 2]) -> f64,
) -> Result<EllipticProblem> {
    let (nx, ny) = (domain.nx(), domain.ny());
    let dx = domain.grid.axis(0).spacing();
    let dy = domain.grid.axis(1).spacing();
    let (cx, cy) = (1.0 / (dx * dx), 1.0 / (dy * dy));

    let mut unknown_of = vec![None; nx * ny];
    let mut nodes = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            if domain.is_interior(i, j) {
                unknown_of[i * ny + j] = Some(nodes.len());
                nodes.push([i, j]);
            }
        }
    }
    let n = nodes.len();

    let a_at = |i: usize, j: usize| -> Result<f64> {
        let v = a.data()[i * ny + j];
        if !(v > 0.0) {
            return Err(Error::Config(format!(
                "diffusion coefficient must be positive, a({i},{j}) = {v}"
            )));
        }
        Ok(v)
    };

    let mut entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut boundary_rhs = vec![0.0; n];
    let mut b_diag = vec![0.0; n];

    for (row, &[i, j]) in nodes.iter().enumerate() {
        let a_c = a_at(i, j)?;
        if let Some(bf) = b {
            b_diag[row] = bf.data()[i * ny + j];
        }
        *entries.entry((row, row)).or_insert(0.0) += b_diag[row];
        // the four faces: (di, dj, face coefficient)
        let faces: [(isize, isize, f64); 4] = [
            (1, 0, cx),
            (-1, 0, cx),
            (0, 1, cy),
            (0, -1, cy),
        ];
        for (di, dj, c) in faces {
            let ni = i as isize + di;
            let nj = j as isize + dj;
            // bounding box strictly contains the shape, so neighbors of
            // interior nodes stay on the grid
            let (ni, nj) = (ni as usize, nj as usize);
            let coef = c * mean(mean_kind, a_c, a_at(ni, nj)?);
            *entries.entry((row, row)).or_insert(0.0) += coef;
            match domain.class(ni, nj) {
                NodeClass::Interior => {
                    let col = unknown_of[ni * ny + nj].unwrap();
                    *entries.entry((row, col)).or_insert(0.0) -= coef;
                }
                NodeClass::Ghost => {
                    let ghost = domain.ghost_at(ni, nj).ok_or_else(|| {
                        Error::Geometry(format!(
                            "ghost ({ni},{nj}) lacks stencil data; build_ghost_stencils not run"
                        ))
                    })?;
                    for (idx, w) in ghost.composed_weights() {
                        let col = unknown_of[idx[0] * ny + idx[1]].ok_or_else(|| {
                            Error::Geometry("ghost stencil references non-interior node".into())
                        })?;
                        *entries.entry((row, col)).or_insert(0.0) -= coef * w;
                    }
                    boundary_rhs[row] +=
                        coef * ghost.extrap_weights[0] * dirichlet(ghost.boundary_point);
                }
                NodeClass::Exterior => {
                    return Err(Error::Geometry(format!(
                        "interior node ({i},{j}) has far-exterior neighbor ({ni},{nj})"
                    )));
                }
            }
        }
    }

    let (matrix, lu) = factor(&entries, n)?;
    Ok(EllipticProblem {
        domain: domain.clone(),
        unknown_of,
        nodes,
        b_diag,
        boundary_rhs,
        entries,
        matrix,
        lu,
    })
}

#[allow(clippy::type_complexity)]
fn factor(
    entries: &BTreeMap<(usize, usize), f64>,
    n: usize,
) -> Result<(
    SparseColMat<usize, f64>,
    faer::sparse::linalg::solvers::Lu<usize, f64>,
)> {
    let triplets: Vec<Triplet<usize, usize, f64>> = entries
        .iter()
        .map(|(&(r, c), &v)| Triplet::new(r, c, v))
        .collect();
    let matrix = SparseColMat::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| Error::Solver(format!("sparse assembly failed: {e:?}")))?;
    let lu = matrix
        .sp_lu()
        .map_err(|e| Error::Solver(format!("sparse LU factorization failed: {e:?}")))?;
    Ok((matrix, lu))
}

impl EllipticProblem {
    pub fn n_unknowns(&self) -> usize {
        self.nodes.len()
    }

    /// Matrix entry lookup (assembled value, zero when absent).
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.entries.get(&(row, col)).copied().unwrap_or(0.0)
    }

    /// Unknown index of an interior node.
    pub fn unknown(&self, i: usize, j: usize) -> Option<usize> {
        self.unknown_of[i * self.domain.ny() + j]
    }

    /// Apply the assembled operator to an interior-unknown vector.
    pub fn apply_operator(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_unknowns());
        let mut y = vec![0.0; x.len()];
        for (&(r, c), &v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }

    /// Gather a bounding-grid field's interior values into unknown order.
    pub fn gather(&self, field: &Field) -> Vec<f64> {
        let ny = self.domain.ny();
        self.nodes
            .iter()
            .map(|&[i, j]| field.data()[i * ny + j])
            .collect()
    }

    /// Scatter unknown values onto the bounding grid: interior filled,
    /// ghosts extrapolated with the given Dirichlet datum, rest zero.
    pub fn scatter(&self, x: &[f64], dirichlet: impl Fn([f64; 2]) -> f64) -> Field {
        let ny = self.domain.ny();
        let mut field = Field::zeros(self.domain.grid.clone());
        for (k, &[i, j]) in self.nodes.iter().enumerate() {
            field.data_mut()[i * ny + j] = x[k];
        }
        self.domain.fill_ghosts(&mut field, dirichlet);
        field
    }

    /// Direct solve of the assembled system for one interior-unknown
    /// right-hand side (boundary contribution already included by the
    /// caller or via [`solve_linear`]).
    pub fn solve_vec(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(rhs.len(), self.n_unknowns());
        let b = Mat::from_fn(rhs.len(), 1, |r, _| rhs[r]);
        let x = self.lu.solve(&b);
        let sol: Vec<f64> = (0..rhs.len()).map(|r| x[(r, 0)]).collect();
        // factorization is exact up to rounding; this guards against
        // pathological conditioning rather than iteration failure
        let res = self.residual_norm(&sol, rhs);
        let scale = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale > 0.0 && res > 1e-10 * scale {
            return Err(Error::Solver(format!(
                "linear solve residual {res:.3e} exceeds tolerance (rhs scale {scale:.3e})"
            )));
        }
        Ok(sol)
    }

    /// Euclidean norm of `A x - rhs`.
    pub fn residual_norm(&self, x: &[f64], rhs: &[f64]) -> f64 {
        let ax = self.apply_operator(x);
        ax.iter()
            .zip(rhs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Solve with a diagonal shift: `(A + diag) x = rhs`. Used by Newton,
    /// where the shift is the linearized reaction term.
    pub fn solve_shifted(&self, diag: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(diag.len(), self.n_unknowns());
        let mut entries = self.entries.clone();
        for (k, &d) in diag.iter().enumerate() {
            *entries.entry((k, k)).or_insert(0.0) += d;
        }
        let (_, lu) = factor(&entries, self.n_unknowns())?;
        let b = Mat::from_fn(rhs.len(), 1, |r, _| rhs[r]);
        let x = lu.solve(&b);
        Ok((0..rhs.len()).map(|r| x[(r, 0)]).collect())
    }

    /// Coordinate-format text export `(row, col, value)` for cross-checking
    /// against independent implementations.
    pub fn export_matrix(&self, w: &mut impl Write) -> Result<()> {
        for (&(r, c), &v) in &self.entries {
            writeln!(w, "{r} {c} {v:.17e}")?;
        }
        Ok(())
    }
}

/// Solve `-∇·(a∇φ) + bφ = rhs` for a bounding-grid rhs field; returns the
/// potential on the bounding grid (ghosts extrapolated, far exterior zero).
pub fn solve_linear(
    problem: &EllipticProblem,
    rhs: &Field,
    dirichlet: impl Fn([f64; 2]) -> f64,
) -> Result<Field> {
    let mut r = problem.gather(rhs);
    for (k, br) in problem.boundary_rhs.iter().enumerate() {
        r[k] += br;
    }
    let x = problem.solve_vec(&r)?;
    Ok(problem.scatter(&x, dirichlet))
}

/// Newton solve of the steady nonlinear problem
/// `-∇·(a∇φ) = (e^{-φ} - 1) - ρ₀` with zero Dirichlet data.
///
/// Damped full-step Newton: the step is halved (up to 30 times) until the
/// max-norm residual does not increase. Returns the potential (ghosts
/// extrapolated) together with the residual history.
pub fn solve_newton_steady(
    domain: &Arc<EmbeddedDomain>,
    a: &Field,
    rho0: f64,
    initial_guess: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(Field, Vec<f64>)> {
    let problem = assemble(domain, a, None, CoefMean::Arithmetic, |_| 0.0)?;
    let n = problem.n_unknowns();
    let mut phi = vec![initial_guess; n];

    let res_vec = |p: &EllipticProblem, phi: &[f64]| -> Vec<f64> {
        let ax = p.apply_operator(phi);
        ax.iter()
            .zip(phi)
            .map(|(axk, &ph)| axk - ((-ph).exp() - 1.0 - rho0))
            .collect()
    };
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));

    let mut f = res_vec(&problem, &phi);
    let mut history = vec![inf(&f)];
    for _ in 0..max_iter {
        if history.last().copied().unwrap() <= tol {
            let field = problem.scatter(&phi, |_| 0.0);
            return Ok((field, history));
        }
        let jac_diag: Vec<f64> = phi.iter().map(|&p| (-p).exp()).collect();
        let neg_f: Vec<f64> = f.iter().map(|v| -v).collect();
        let delta = problem.solve_shifted(&jac_diag, &neg_f)?;
        // residual-monotone damping
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = phi
                .iter()
                .zip(&delta)
                .map(|(&p, &d)| p + lambda * d)
                .collect();
            let ft = res_vec(&problem, &trial);
            if inf(&ft) <= history.last().copied().unwrap() {
                phi = trial;
                f = ft;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::Solver(format!(
                "Newton line search stalled at residual {:.3e}; history {:?}",
                history.last().unwrap(),
                history
            )));
        }
        history.push(inf(&f));
    }
    if history.last().copied().unwrap() <= tol {
        let field = problem.scatter(&phi, |_| 0.0);
        return Ok((field, history));
    }
    Err(Error::Solver(format!(
        "Newton did not reach {tol:.1e} in {max_iter} iterations; residual history {history:?}"
    )))
}

/// Quasi-neutrality solver: one 2D average equation plus independent
/// fluctuation equations per z-slice, all sharing two factorizations.
pub struct QnSolver {
    /// Average equation `-∇·(a∇φ̄) = ρ̄ - ρ₀`.
    pub avg: EllipticProblem,
    /// Fluctuation equation `-∇·(a∇φ') + b φ' = ρ - ρ̄` per slice.
    pub fluct: EllipticProblem,
}

impl QnSolver {
    /// `a = ρ₀/B` (with B ≡ 1) and `b = ρ₀/T_e`, both on the bounding grid.
    pub fn new(domain: &Arc<EmbeddedDomain>, a: &Field, b: &Field) -> Result<Self> {
        let avg = assemble(domain, a, None, CoefMean::Arithmetic, |_| 0.0)?;
        let fluct = assemble(domain, a, Some(b), CoefMean::Arithmetic, |_| 0.0)?;
        Ok(QnSolver { avg, fluct })
    }

    /// Solve for the 3D potential given the ion density `rho` on an
    /// `(x, y, z)` grid (z periodic) and the 2D reference profile `rho0`.
    /// Returns the full potential `φ = φ̄ + φ'` slice by slice.
    pub fn solve(&self, rho: &Field, rho0: &Field) -> Result<Field> {
        let g3 = rho.grid().clone();
        if g3.dim() != 3 {
            return Err(Error::Config("quasi-neutrality needs a 3D density".into()));
        }
        let nz = g3.axis(2).n;
        let nxy = g3.axis(0).n * g3.axis(1).n;
        let n = self.avg.n_unknowns();
        let ny = self.avg.domain.ny();

        // z-average of the density, interior unknowns only
        let mut rho_bar = vec![0.0; n];
        for (k, &[i, j]) in self.avg.nodes.iter().enumerate() {
            let mut s = 0.0;
            for iz in 0..nz {
                s += rho.data()[(i * ny + j) * nz + iz];
            }
            rho_bar[k] = s / nz as f64;
        }
        let rho0_u = self.avg.gather(rho0);

        let avg_rhs: Vec<f64> = rho_bar
            .iter()
            .zip(&rho0_u)
            .map(|(rb, r0)| rb - r0)
            .collect();
        let phi_bar = self.avg.solve_vec(&avg_rhs)?;

        // independent per-slice fluctuation solves against one factorization
        let mut phi = Field::zeros(g3);
        let slices: Vec<Vec<f64>> = (0..nz)
            .map(|iz| {
                let rhs: Vec<f64> = self
                    .fluct
                    .nodes
                    .iter()
                    .enumerate()
                    .map(|(k, &[i, j])| rho.data()[(i * ny + j) * nz + iz] - rho_bar[k])
                    .collect();
                self.fluct.solve_vec(&rhs)
            })
            .collect::<Result<_>>()?;
        for iz in 0..nz {
            for (k, &[i, j]) in self.fluct.nodes.iter().enumerate() {
                phi.data_mut()[(i * ny + j) * nz + iz] = phi_bar[k] + slices[iz][k];
            }
        }
        // extrapolate ghosts slice by slice so gradients can close stencils
        let mut slice = Field::zeros(self.avg.domain.grid.clone());
        for iz in 0..nz {
            for k in 0..nxy {
                slice.data_mut()[k] = phi.data()[k * nz + iz];
            }
            self.avg.domain.fill_ghosts(&mut slice, |_| 0.0);
            for k in 0..nxy {
                phi.data_mut()[k * nz + iz] = slice.data()[k];
            }
        }
        Ok(phi)
    }

    /// Max-norm of the z-average of the fluctuation part of `phi`,
    /// normalized by the max-norm of `phi`. Diagnostic of the decomposition.
    pub fn fluctuation_mean_norm(&self, phi: &Field) -> f64 {
        let g3 = phi.grid();
        let nz = g3.axis(2).n;
        let ny = self.avg.domain.ny();
        let scale = phi.max_abs().max(1e-300);
        let mut worst = 0.0f64;
        for &[i, j] in &self.avg.nodes {
            let base = (i * ny + j) * nz;
            let mean: f64 = (0..nz).map(|iz| phi.data()[base + iz]).sum::<f64>() / nz as f64;
            // the z-average of φ is φ̄, so subtracting it isolates mean(φ')
            let mut phibar_contrib = 0.0;
            for iz in 0..nz {
                phibar_contrib += phi.data()[base + iz];
            }
            phibar_contrib /= nz as f64;
            worst = worst.max((mean - phibar_contrib).abs());
        }
        worst / scale
    }

    /// Relative max-norm residual of the full 3D discrete operator applied
    /// to `phi` against the density data: checks
    /// `-∇·(a∇φ) + b (φ - φ̄) = ρ - ρ₀` slice by slice.
    pub fn residual_3d(&self, phi: &Field, rho: &Field, rho0: &Field) -> f64 {
        let g3 = phi.grid();
        let nz = g3.axis(2).n;
        let ny = self.avg.domain.ny();
        let n = self.fluct.n_unknowns();
        let rho0_u = self.fluct.gather(rho0);

        // z-average of phi on unknowns
        let mut phi_mean = vec![0.0; n];
        for (k, &[i, j]) in self.fluct.nodes.iter().enumerate() {
            let base = (i * ny + j) * nz;
            phi_mean[k] = (0..nz).map(|iz| phi.data()[base + iz]).sum::<f64>() / nz as f64;
        }

        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for iz in 0..nz {
            let phi_z: Vec<f64> = self
                .fluct
                .nodes
                .iter()
                .map(|&[i, j]| phi.data()[(i * ny + j) * nz + iz])
                .collect();
            // fluct matrix applies -∇·(a∇·) + b; remove b·φ̄ to get the
            // full operator -∇·(a∇φ) + b(φ - φ̄)
            let ax = self.fluct.apply_operator(&phi_z);
            for k in 0..n {
                let lhs = ax[k] - self.fluct.b_diag[k] * phi_mean[k];
                let rhs = rho.data()[(self.fluct.nodes[k][0] * ny + self.fluct.nodes[k][1]) * nz
                    + iz]
                    - rho0_u[k];
                worst = worst.max((lhs - rhs).abs());
                scale = scale.max(rhs.abs());
            }
        }
        worst / scale.max(1e-300)
    }
}

/// Nodal gradient data derived from a potential.
pub struct GradientFields {
    /// `-∂φ/∂y`, the x-component of the E×B drift (B = ẑ, B = 1).
    pub ux: Field,
    /// `∂φ/∂x`, the y-component of the drift.
    pub uy: Field,
    /// `-∂φ/∂z` on 3D potentials (periodic fourth-order differences).
    pub epar: Option<Field>,
}

/// Differentiate a potential on the bounding grid of `domain`.
///
/// Fourth-order central differences wherever the five-point-wide stencil
/// stays in interior ∪ ghost, second-order central in the remaining layer
/// next to the boundary. The potential must already carry extrapolated
/// ghost values. Non-interior nodes get zero velocity.
pub fn gradient(phi: &Field, domain: &EmbeddedDomain) -> Result<GradientFields> {
    let g = phi.grid().clone();
    match g.dim() {
        2 => {
            let (ux, uy) = plane_gradient(phi.data(), domain, 1, 0)?;
            Ok(GradientFields {
                ux: wrap(g.clone(), ux),
                uy: wrap(g, uy),
                epar: None,
            })
        }
        3 => {
            let nz = g.axis(2).n;
            let nxy = g.axis(0).n * g.axis(1).n;
            let mut ux = vec![0.0; phi.data().len()];
            let mut uy = vec![0.0; phi.data().len()];
            let mut slice = vec![0.0; nxy];
            for iz in 0..nz {
                for k in 0..nxy {
                    slice[k] = phi.data()[k * nz + iz];
                }
                let (sx, sy) = plane_gradient(&slice, domain, 1, 0)?;
                for k in 0..nxy {
                    ux[k * nz + iz] = sx[k];
                    uy[k * nz + iz] = sy[k];
                }
            }
            // E∥ = -∂φ/∂z, fourth order, periodic in z
            let dz = g.axis(2).spacing();
            let mut epar = vec![0.0; phi.data().len()];
            for k in 0..nxy {
                let base = k * nz;
                for iz in 0..nz {
                    let m2 = phi.data()[base + (iz + nz - 2) % nz];
                    let m1 = phi.data()[base + (iz + nz - 1) % nz];
                    let p1 = phi.data()[base + (iz + 1) % nz];
                    let p2 = phi.data()[base + (iz + 2) % nz];
                    epar[base + iz] = -(m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * dz);
                }
            }
            Ok(GradientFields {
                ux: wrap(g.clone(), ux),
                uy: wrap(g.clone(), uy),
                epar: Some(wrap(g, epar)),
            })
        }
        d => Err(Error::Config(format!("gradient expects 2D or 3D, got {d}D"))),
    }
}

fn wrap(grid: Arc<Grid>, data: Vec<f64>) -> Field {
    let mut f = Field::zeros(grid);
    f.data_mut().copy_from_slice(&data);
    f
}

/// One 2D slice: returns `(-∂φ/∂y, ∂φ/∂x)` at interior nodes.
fn plane_gradient(
    phi: &[f64],
    domain: &EmbeddedDomain,
    _dy_axis: usize,
    _dx_axis: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (nx, ny) = (domain.nx(), domain.ny());
    let dx = domain.grid.axis(0).spacing();
    let dy = domain.grid.axis(1).spacing();
    let avail = |i: isize, j: isize| -> bool {
        if i < 0 || j < 0 || i as usize >= nx || j as usize >= ny {
            return false;
        }
        domain.class(i as usize, j as usize) != NodeClass::Exterior
    };
    let mut ux = vec![0.0; nx * ny];
    let mut uy = vec![0.0; nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            if !domain.is_interior(i, j) {
                continue;
            }
            let (si, sj) = (i as isize, j as isize);
            let dphidx = if avail(si - 2, sj) && avail(si + 2, sj) && avail(si - 1, sj)
                && avail(si + 1, sj)
            {
                (phi[(i - 2) * ny + j] - 8.0 * phi[(i - 1) * ny + j]
                    + 8.0 * phi[(i + 1) * ny + j]
                    - phi[(i + 2) * ny + j])
                    / (12.0 * dx)
            } else if avail(si - 1, sj) && avail(si + 1, sj) {
                (phi[(i + 1) * ny + j] - phi[(i - 1) * ny + j]) / (2.0 * dx)
            } else {
                return Err(Error::Geometry(format!(
                    "gradient stencil starved at interior node ({i},{j})"
                )));
            };
            let dphidy = if avail(si, sj - 2) && avail(si, sj + 2) && avail(si, sj - 1)
                && avail(si, sj + 1)
            {
                (phi[i * ny + j - 2] - 8.0 * phi[i * ny + j - 1] + 8.0 * phi[i * ny + j + 1]
                    - phi[i * ny + j + 2])
                    / (12.0 * dy)
            } else if avail(si, sj - 1) && avail(si, sj + 1) {
                (phi[i * ny + j + 1] - phi[i * ny + j - 1]) / (2.0 * dy)
            } else {
                return Err(Error::Geometry(format!(
                    "gradient stencil starved at interior node ({i},{j})"
                )));
            };
            ux[i * ny + j] = -dphidy;
            uy[i * ny + j] = dphidx;
        }
    }
    Ok((ux, uy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{embed, DomainShape};
    use crate::grid::Axis;

    fn disk_domain(n: usize) -> Arc<EmbeddedDomain> {
        let g = Grid::new(vec![
            Axis::bounded(-1.3, 1.3, n).unwrap(),
            Axis::bounded(-1.3, 1.3, n).unwrap(),
        ])
        .unwrap();
        Arc::new(
            embed(
                &DomainShape::Disk {
                    center: [0.0, 0.0],
                    radius: 1.0,
                },
                &g,
            )
            .unwrap(),
        )
    }

    #[test]
    fn interior_row_is_standard_five_point() {
        let domain = disk_domain(27); // Δx = Δy = 0.1
        let a = Field::constant(domain.grid.clone(), 1.0);
        let p = assemble(&domain, &a, None, CoefMean::Arithmetic, |_| 0.0).unwrap();
        // centre node: all four neighbors interior
        let (ic, jc) = (13, 13);
        let row = p.unknown(ic, jc).unwrap();
        let h2 = 0.1 * 0.1;
        assert!((p.entry(row, row) - 4.0 / h2).abs() < 1e-9);
        for (ni, nj) in [(ic + 1, jc), (ic - 1, jc), (ic, jc + 1), (ic, jc - 1)] {
            let col = p.unknown(ni, nj).unwrap();
            assert!((p.entry(row, col) + 1.0 / h2).abs() < 1e-9);
        }
        // pure Laplacian rows away from the boundary sum to zero
        let mut row_sum = 0.0;
        for col in 0..p.n_unknowns() {
            row_sum += p.entry(row, col);
        }
        assert!(row_sum.abs() < 1e-9);
    }

    #[test]
    fn zero_rhs_gives_zero_solution() {
        let domain = disk_domain(21);
        let a = Field::constant(domain.grid.clone(), 1.0);
        let p = assemble(&domain, &a, None, CoefMean::Arithmetic, |_| 0.0).unwrap();
        assert!(p.boundary_rhs.iter().all(|&v| v == 0.0));
        let rhs = Field::zeros(domain.grid.clone());
        let phi = solve_linear(&p, &rhs, |_| 0.0).unwrap();
        assert!(phi.max_abs() < 1e-14);
    }

    #[test]
    fn rejects_nonpositive_coefficient() {
        let domain = disk_domain(21);
        let a = Field::zeros(domain.grid.clone());
        assert!(assemble(&domain, &a, None, CoefMean::Arithmetic, |_| 0.0).is_err());
    }

    /// Dense Gaussian elimination with partial pivoting, test-local oracle
    /// for the sparse LU backend.
    fn dense_solve(n: usize, p: &EllipticProblem, rhs: &[f64]) -> Vec<f64> {
        let mut m = vec![vec![0.0f64; n + 1]; n];
        for r in 0..n {
            for c in 0..n {
                m[r][c] = p.entry(r, c);
            }
            m[r][n] = rhs[r];
        }
        for k in 0..n {
            let piv = (k..n).max_by(|&a, &b| m[a][k].abs().partial_cmp(&m[b][k].abs()).unwrap())
                .unwrap();
            m.swap(k, piv);
            for r in k + 1..n {
                let f = m[r][k] / m[k][k];
                for c in k..=n {
                    m[r][c] -= f * m[k][c];
                }
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let mut s = m[r][n];
            for c in r + 1..n {
                s -= m[r][c] * x[c];
            }
            x[r] = s / m[r][r];
        }
        x
    }

    #[test]
    fn solve_matches_dense_elimination_oracle() {
        let domain = disk_domain(17);
        let a = Field::from_fn(domain.grid.clone(), |x| 1.0 + 0.3 * x[0] + 0.1 * x[1] * x[1]);
        let p = assemble(&domain, &a, None, CoefMean::Arithmetic, |_| 0.0).unwrap();
        let n = p.n_unknowns();
        let rhs: Vec<f64> = (0..n).map(|k| ((k * 37 % 11) as f64 - 5.0) * 0.17).collect();
        let fast = p.solve_vec(&rhs).unwrap();
        let slow = dense_solve(n, &p, &rhs);
        let scale = slow.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (f, s) in fast.iter().zip(&slow) {
            assert!((f - s).abs() < 1e-10 * scale.max(1.0), "{f} vs {s}");
        }
    }

    #[test]
    fn harmonic_mean_also_solves() {
        let domain = disk_domain(17);
        let a = Field::from_fn(domain.grid.clone(), |x| 2.0 + x[0]);
        let p = assemble(&domain, &a, Some(&Field::constant(domain.grid.clone(), 0.5)),
            CoefMean::Harmonic, |_| 0.0).unwrap();
        let rhs = Field::constant(domain.grid.clone(), 1.0);
        let phi = solve_linear(&p, &rhs, |_| 0.0).unwrap();
        assert!(phi.all_finite());
        assert!(phi.max_abs() > 0.0);
    }

    #[test]
    fn disk_poisson_reproduces_quadratic_solution() {
        // -Δφ = 1 on the unit disk, exact φ = (1 - r²)/4: both the interior
        // stencil and the Q2 ghost extrapolation reproduce quadratics, so
        // the discrete solution is exact up to round-off
        for n in [41usize, 81] {
            let domain = disk_domain(n);
            let a = Field::constant(domain.grid.clone(), 1.0);
            let p = assemble(&domain, &a, None, CoefMean::Arithmetic, |_| 0.0).unwrap();
            let rhs = Field::constant(domain.grid.clone(), 1.0);
            let phi = solve_linear(&p, &rhs, |_| 0.0).unwrap();
            let mut err = 0.0f64;
            for &[i, j] in &p.nodes {
                let [x, y] = domain.coords(i, j);
                let exact = (1.0 - x * x - y * y) / 4.0;
                err = err.max((phi.data()[i * domain.ny() + j] - exact).abs());
            }
            assert!(err < 1e-12, "n={n}: error {err}");
        }
    }

    #[test]
    fn disk_poisson_converges_at_second_order_on_quartic() {
        // quartic solution φ = (1 - r²)²/16, rhs = (1 - 2r²)/2: not in the
        // stencil's reproduction class, so a genuine order emerges
        let mut errs = Vec::new();
        for n in [41usize, 81] {
            let domain = disk_domain(n);
            let a = Field::constant(domain.grid.clone(), 1.0);
            let p = assemble(&domain, &a, None, CoefMean::Arithmetic, |_| 0.0).unwrap();
            let rhs = Field::from_fn(domain.grid.clone(), |x| {
                (1.0 - 2.0 * (x[0] * x[0] + x[1] * x[1])) / 2.0
            });
            let phi = solve_linear(&p, &rhs, |_| 0.0).unwrap();
            let mut err = 0.0f64;
            for &[i, j] in &p.nodes {
                let [x, y] = domain.coords(i, j);
                let exact = (1.0 - x * x - y * y).powi(2) / 16.0;
                err = err.max((phi.data()[i * domain.ny() + j] - exact).abs());
            }
            errs.push(err);
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order >= 1.8, "order {order}, errors {errs:?}");
    }

    #[test]
    fn discrete_maximum_principle_on_disk() {
        // b ≥ 0, rhs ≤ 0, zero boundary data ⟹ φ ≤ 0 inside
        let domain = disk_domain(33);
        let a = Field::constant(domain.grid.clone(), 1.0);
        let p = assemble(&domain, &a, None, CoefMean::Arithmetic, |_| 0.0).unwrap();
        let rhs = Field::constant(domain.grid.clone(), -1.0);
        let phi = solve_linear(&p, &rhs, |_| 0.0).unwrap();
        for &[i, j] in &p.nodes {
            assert!(phi.data()[i * domain.ny() + j] <= 1e-12);
        }
    }

    #[test]
    fn newton_linear_mode_converges_in_one_step() {
        // with the nonlinearity absent the problem is linear; one Newton
        // step must reach the tolerance
        let domain = disk_domain(21);
        let a = Field::constant(domain.grid.clone(), 1.0);
        let p = assemble(&domain, &a, None, CoefMean::Arithmetic, |_| 0.0).unwrap();
        let n = p.n_unknowns();
        let target: Vec<f64> = (0..n).map(|k| (k as f64 * 0.01).sin()).collect();
        let rhs = p.apply_operator(&target);
        let zero_shift = vec![0.0; n];
        let x = p.solve_shifted(&zero_shift, &rhs).unwrap();
        let err: f64 = x.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10);
    }

    #[test]
    fn newton_steady_state_on_disk() {
        let domain = disk_domain(41);
        let a = Field::constant(domain.grid.clone(), 1.0);
        let (phi, history) = solve_newton_steady(&domain, &a, 1.0, 0.0, 1e-10, 50).unwrap();
        assert!(history.len() <= 20, "took {} iterations", history.len());
        assert!(*history.last().unwrap() <= 1e-10);
        // density e^{-φ} - 1 must be positive inside (φ < 0)
        for &[i, j] in &domain.interior_nodes() {
            let v = phi.data()[i * domain.ny() + j];
            assert!(v < 0.0, "φ({i},{j}) = {v}");
        }
        // superlinear tail: once inside the basin the residual collapses
        let k = history.len();
        assert!(history[k - 1] < 1e-6 * history[k - 2].max(1e-30) || history[k - 1] < 1e-12);
    }

    #[test]
    fn newton_initial_guess_independence() {
        // the steady state is unique: φ ≡ 0 and φ ≡ -0.1 seeds agree
        let domain = disk_domain(31);
        let a = Field::constant(domain.grid.clone(), 1.0);
        let (phi_a, _) = solve_newton_steady(&domain, &a, 1.0, 0.0, 1e-12, 50).unwrap();
        let (phi_b, _) = solve_newton_steady(&domain, &a, 1.0, -0.1, 1e-12, 50).unwrap();
        for (x, y) in phi_a.data().iter().zip(phi_b.data()) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    fn grid3(nxy: usize, nz: usize) -> Arc<Grid> {
        Grid::new(vec![
            Axis::bounded(-1.3, 1.3, nxy).unwrap(),
            Axis::bounded(-1.3, 1.3, nxy).unwrap(),
            Axis::periodic(0.0, 2.0, nz).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn qn_z_independent_density_has_no_fluctuation() {
        let domain = disk_domain(21);
        let ones = Field::constant(domain.grid.clone(), 1.0);
        let qn = QnSolver::new(&domain, &ones, &ones).unwrap();
        let g3 = grid3(21, 6);
        let rho = Field::from_fn(g3.clone(), |x| 1.0 + 0.1 * (x[0] * x[0] + x[1]));
        let rho0 = Field::constant(domain.grid.clone(), 1.0);
        let phi = qn.solve(&rho, &rho0).unwrap();
        // every z-slice identical
        let nz = 6;
        let nxy = 21 * 21;
        for k in 0..nxy {
            for iz in 1..nz {
                assert!((phi.data()[k * nz + iz] - phi.data()[k * nz]).abs() < 1e-12);
            }
        }
        assert!(qn.residual_3d(&phi, &rho, &rho0) < 1e-10);
    }

    #[test]
    fn qn_equilibrium_density_gives_zero_potential() {
        let domain = disk_domain(21);
        let ones = Field::constant(domain.grid.clone(), 1.0);
        let qn = QnSolver::new(&domain, &ones, &ones).unwrap();
        let g3 = grid3(21, 6);
        let rho = Field::constant(g3, 1.0);
        let rho0 = Field::constant(domain.grid.clone(), 1.0);
        let phi = qn.solve(&rho, &rho0).unwrap();
        assert!(phi.max_abs() < 1e-13);
    }

    #[test]
    fn qn_single_mode_stays_single_mode() {
        let domain = disk_domain(21);
        let ones = Field::constant(domain.grid.clone(), 1.0);
        let qn = QnSolver::new(&domain, &ones, &ones).unwrap();
        let g3 = grid3(21, 8);
        let lz = 2.0;
        let rho = Field::from_fn(g3.clone(), |x| {
            1.0 + 1e-3
                * (2.0 * std::f64::consts::PI * x[2] / lz).cos()
                * (1.0 - x[0] * x[0] - x[1] * x[1]).max(0.0)
        });
        let rho0 = Field::constant(domain.grid.clone(), 1.0);
        let phi = qn.solve(&rho, &rho0).unwrap();
        // discrete z-average of φ' vanishes: φ averages to φ̄ per column
        let nz = 8;
        let ny = domain.ny();
        for &[i, j] in &qn.avg.nodes {
            let base = (i * ny + j) * nz;
            let mean: f64 = (0..nz).map(|z| phi.data()[base + z]).sum::<f64>() / nz as f64;
            // the mode is mean-free, so φ̄ = 0 here and mean(φ) = mean(φ')
            assert!(mean.abs() < 1e-10 * phi.max_abs().max(1e-30));
        }
        assert!(qn.residual_3d(&phi, &rho, &rho0) < 1e-10);
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let domain = disk_domain(21);
        let phi = Field::constant(domain.grid.clone(), 3.7);
        let g = gradient(&phi, &domain).unwrap();
        assert!(g.ux.max_abs() < 1e-12 && g.uy.max_abs() < 1e-12);
    }

    #[test]
    fn gradient_quadratic_exact_away_from_boundary() {
        let domain = disk_domain(41);
        let phi = Field::from_fn(domain.grid.clone(), |x| x[0] * x[0] + x[1] * x[1]);
        let g = gradient(&phi, &domain).unwrap();
        let ny = domain.ny();
        for &[i, j] in &domain.interior_nodes() {
            let [x, y] = domain.coords(i, j);
            if x * x + y * y > 0.6 {
                continue; // away from the boundary layer
            }
            assert!((g.ux.data()[i * ny + j] + 2.0 * y).abs() < 1e-11);
            assert!((g.uy.data()[i * ny + j] - 2.0 * x).abs() < 1e-11);
        }
    }

    #[test]
    fn drift_velocity_is_discretely_divergence_free() {
        let domain = disk_domain(41);
        let phi = Field::from_fn(domain.grid.clone(), |x| {
            (2.1 * x[0]).sin() * (1.7 * x[1]).cos() + 0.3 * x[0] * x[1]
        });
        let g = gradient(&phi, &domain).unwrap();
        let ny = domain.ny();
        let h = domain.grid.axis(0).spacing();
        let d4 = |f: &[f64], k: usize, stride: usize| {
            (f[k - 2 * stride] - 8.0 * f[k - stride] + 8.0 * f[k + stride] - f[k + 2 * stride])
                / (12.0 * h)
        };
        for &[i, j] in &domain.interior_nodes() {
            let [x, y] = domain.coords(i, j);
            if x * x + y * y > 0.5 {
                continue;
            }
            // matching central differences: ∂x(-∂y φ) + ∂y(∂x φ) cancels
            let div = d4(g.ux.data(), i * ny + j, ny) + d4(g.uy.data(), i * ny + j, 1);
            assert!(div.abs() < 1e-10, "div = {div} at ({x},{y})");
        }
    }

    #[test]
    fn matrix_export_is_parseable() {
        let domain = disk_domain(17);
        let a = Field::constant(domain.grid.clone(), 1.0);
        let p = assemble(&domain, &a, None, CoefMean::Arithmetic, |_| 0.0).unwrap();
        let mut buf = Vec::new();
        p.export_matrix(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut rows = 0;
        for line in text.lines() {
            let parts: Vec<&str> = line.split_whitespace().collect();
            assert_eq!(parts.len(), 3);
            parts[0].parse::<usize>().unwrap();
            parts[1].parse::<usize>().unwrap();
            parts[2].parse::<f64>().unwrap();
            rows += 1;
        }
        assert!(rows >= 5 * p.n_unknowns() - 4 * 50);
    }
}
