//! Linear elasticity on the voxel grid: bilinear quads (2D, plane stress,
//! unit thickness) or trilinear hexes (3D), with power-law density
//! interpolation of the element stiffness. The stiffness operator is applied
//! matrix-free with an 8-color (4 in 2D) element sweep, so parallel
//! scatter-adds never race and every node accumulates its element
//! contributions in a fixed order regardless of thread count. The solver is
//! conjugate gradients with a Jacobi preconditioner.

use nalgebra::{DMatrix, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{GridDims, GridError, ScalarGrid};
use crate::parallel;

#[derive(Debug, Error)]
pub enum FeaError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid material: {0}")]
    BadMaterial(String),
    #[error("system is singular: {0} is unconstrained; add fixities")]
    Singular(String),
    #[error("solver did not converge within {iterations} iterations (relative residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("density grid {0:?} does not match the model grid {1:?}")]
    DimsMismatch([usize; 3], [usize; 3]),
    #[error("node {0:?} is outside the node lattice")]
    NodeOutOfRange([usize; 3]),
}

/// Isotropic material with the power-law (SIMP) density interpolation
/// `E(rho) = E * (rho_min + (1 - rho_min) * rho^p)`.
#[derive(Debug, Clone, Copy)]
pub struct MaterialModel {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub simp_penalty: f64,
    pub rho_min: f64,
}

impl MaterialModel {
    pub fn new(youngs_modulus: f64, poisson_ratio: f64, simp_penalty: f64, rho_min: f64) -> Result<Self, FeaError> {
        if !(youngs_modulus > 0.0) {
            return Err(FeaError::BadMaterial(format!("Young's modulus must be positive, got {youngs_modulus}")));
        }
        if !(poisson_ratio > 0.0 && poisson_ratio < 0.5) {
            return Err(FeaError::BadMaterial(format!("Poisson ratio must be in (0, 0.5), got {poisson_ratio}")));
        }
        if !(simp_penalty >= 1.0) {
            return Err(FeaError::BadMaterial(format!("penalization exponent must be >= 1, got {simp_penalty}")));
        }
        if !(rho_min > 0.0 && rho_min < 1.0) {
            return Err(FeaError::BadMaterial(format!("stiffness floor must be in (0, 1), got {rho_min}")));
        }
        Ok(Self { youngs_modulus, poisson_ratio, simp_penalty, rho_min })
    }

    /// Stiffness scale for a physical density.
    #[inline]
    pub fn stiffness_scale(&self, rho: f64) -> f64 {
        self.rho_min + (1.0 - self.rho_min) * rho.powf(self.simp_penalty)
    }
}

/// Nodal constraints and loads. Nodes are lattice corners `(i, j, k)` with
/// `0 <= i <= nx` etc; axes are 0 = x, 1 = y, 2 = z.
#[derive(Debug, Clone, Default)]
pub struct BoundaryConditions {
    pub fixed: Vec<([usize; 3], usize)>,
    pub loads: Vec<([usize; 3], usize, f64)>,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Relative residual target for the linear solve.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iterations: 50_000 }
    }
}

/// Outcome of a linear solve.
#[derive(Debug, Clone)]
pub struct FeaResult {
    /// Nodal displacements, `ndim` entries per node.
    pub displacements: Vec<f64>,
    /// `f . u`.
    pub compliance: f64,
    pub iterations: usize,
    /// Final relative residual.
    pub residual: f64,
}

/// Precomputed model: element stiffness for unit Young's modulus, boundary
/// conditions baked into a force vector and a fixed-dof mask.
pub struct FeaSolver {
    pub dims: GridDims,
    pub mat: MaterialModel,
    pub opts: SolverOptions,
    ndim: usize,
    nn: [usize; 3],
    k0: Vec<f64>,
    ke_dofs: usize,
    force: Vec<f64>,
    fixed: Vec<bool>,
    colors: Vec<Vec<usize>>,
}

impl FeaSolver {
    pub fn new(dims: GridDims, mat: MaterialModel, bc: &BoundaryConditions, opts: SolverOptions) -> Result<Self, FeaError> {
        let ndim = dims.dim() as usize;
        let nn = [dims.nx + 1, dims.ny + 1, if ndim == 2 { 1 } else { dims.nz + 1 }];
        let ke_dofs = if ndim == 2 { 8 } else { 24 };
        let k0 = if ndim == 2 {
            element_stiffness_2d(mat.poisson_ratio)
        } else {
            element_stiffness_3d(mat.poisson_ratio, dims.spacing)
        };
        let ndof = nn[0] * nn[1] * nn[2] * ndim;
        let mut force = vec![0.0; ndof];
        let mut fixed = vec![false; ndof];
        check_rigid_modes(bc, ndim)?;
        for &(node, axis) in &bc.fixed {
            fixed[dof_index(&nn, ndim, node, axis)?] = true;
        }
        for &(node, axis, magnitude) in &bc.loads {
            if !magnitude.is_finite() {
                return Err(FeaError::BadMaterial(format!("non-finite load {magnitude}")));
            }
            force[dof_index(&nn, ndim, node, axis)?] += magnitude;
        }
        for (f, &fx) in force.iter_mut().zip(fixed.iter()) {
            if fx {
                *f = 0.0;
            }
        }
        let ncolors = if ndim == 2 { 4 } else { 8 };
        let mut colors = vec![Vec::new(); ncolors];
        for k in 0..dims.nz {
            for j in 0..dims.ny {
                for i in 0..dims.nx {
                    let c = (i & 1) | ((j & 1) << 1) | ((k & 1) << 2);
                    colors[c].push(dims.index(i, j, k));
                }
            }
        }
        Ok(Self { dims, mat, opts, ndim, nn, k0, ke_dofs, force, fixed, colors })
    }

    pub fn ndof(&self) -> usize {
        self.force.len()
    }

    pub fn force(&self) -> &[f64] {
        &self.force
    }

    fn element_scales(&self, rho_tilde: &ScalarGrid) -> Result<Vec<f64>, FeaError> {
        if !rho_tilde.dims.same_shape(&self.dims) {
            return Err(FeaError::DimsMismatch(rho_tilde.dims.shape(), self.dims.shape()));
        }
        let e = self.mat.youngs_modulus;
        Ok(rho_tilde.values.iter().map(|&r| e * self.mat.stiffness_scale(r)).collect())
    }

    /// y = K(scale) x with fixed dofs projected out.
    pub fn apply(&self, scales: &[f64], x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().for_each(|v| *v = 0.0);
        let ptr = SendPtr(y.as_mut_ptr());
        for elems in &self.colors {
            elems.par_iter().for_each(|&e| {
                let coef = scales[e];
                let dofs = self.element_dofs(e);
                let n = self.ke_dofs;
                let mut xe = [0.0f64; 24];
                for (a, &dof) in dofs.iter().take(n).enumerate() {
                    xe[a] = if self.fixed[dof] { 0.0 } else { x[dof] };
                }
                let k0 = &self.k0;
                for a in 0..n {
                    let dof = dofs[a];
                    if self.fixed[dof] {
                        continue;
                    }
                    let row = &k0[a * n..(a + 1) * n];
                    let mut acc = 0.0;
                    for b in 0..n {
                        acc += row[b] * xe[b];
                    }
                    // Within a color no two elements share a node, so this
                    // scatter never races.
                    unsafe {
                        *ptr.get().add(dof) += coef * acc;
                    }
                }
            });
        }
    }

    fn element_dofs(&self, e: usize) -> [usize; 24] {
        let [i, j, k] = self.dims.coords(e);
        let mut dofs = [0usize; 24];
        let nn = self.nn;
        if self.ndim == 2 {
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            for (c, &(ci, cj)) in corners.iter().enumerate() {
                let node = ci + nn[0] * cj;
                dofs[2 * c] = 2 * node;
                dofs[2 * c + 1] = 2 * node + 1;
            }
        } else {
            let corners = [
                (i, j, k),
                (i + 1, j, k),
                (i + 1, j + 1, k),
                (i, j + 1, k),
                (i, j, k + 1),
                (i + 1, j, k + 1),
                (i + 1, j + 1, k + 1),
                (i, j + 1, k + 1),
            ];
            for (c, &(ci, cj, ck)) in corners.iter().enumerate() {
                let node = ci + nn[0] * (cj + nn[1] * ck);
                dofs[3 * c] = 3 * node;
                dofs[3 * c + 1] = 3 * node + 1;
                dofs[3 * c + 2] = 3 * node + 2;
            }
        }
        dofs
    }

    fn jacobi_diagonal(&self, scales: &[f64]) -> Vec<f64> {
        let mut diag = vec![0.0; self.ndof()];
        let n = self.ke_dofs;
        for e in 0..self.dims.len() {
            let dofs = self.element_dofs(e);
            let coef = scales[e];
            for a in 0..n {
                diag[dofs[a]] += coef * self.k0[a * n + a];
            }
        }
        for (d, &fx) in diag.iter_mut().zip(self.fixed.iter()) {
            if fx || *d == 0.0 {
                *d = 1.0;
            }
        }
        diag
    }

    /// Preconditioned CG for `K u = f`. A previous displacement field may be
    /// passed as a warm start.
    pub fn solve(&self, rho_tilde: &ScalarGrid, warm_start: Option<&[f64]>) -> Result<FeaResult, FeaError> {
        let scales = self.element_scales(rho_tilde)?;
        let ndof = self.ndof();
        let fnorm = parallel::chunked_dot(&self.force, &self.force).sqrt();
        if fnorm == 0.0 {
            return Ok(FeaResult { displacements: vec![0.0; ndof], compliance: 0.0, iterations: 0, residual: 0.0 });
        }
        let diag = self.jacobi_diagonal(&scales);
        let mut u = match warm_start {
            Some(w) if w.len() == ndof => w.to_vec(),
            _ => vec![0.0; ndof],
        };
        for (v, &fx) in u.iter_mut().zip(self.fixed.iter()) {
            if fx {
                *v = 0.0;
            }
        }
        let mut r = vec![0.0; ndof];
        self.apply(&scales, &u, &mut r);
        r.par_iter_mut().zip(self.force.par_iter()).for_each(|(ri, &fi)| *ri = fi - *ri);
        let mut z: Vec<f64> = r.par_iter().zip(diag.par_iter()).map(|(&ri, &di)| ri / di).collect();
        let mut p = z.clone();
        let mut rz = parallel::chunked_dot(&r, &z);
        let mut q = vec![0.0; ndof];
        let mut residual = parallel::chunked_dot(&r, &r).sqrt() / fnorm;
        let mut iterations = 0;
        while residual > self.opts.tolerance {
            if iterations >= self.opts.max_iterations {
                return Err(FeaError::NonConvergence { iterations, residual });
            }
            self.apply(&scales, &p, &mut q);
            let pq = parallel::chunked_dot(&p, &q);
            if !(pq > 0.0) {
                return Err(FeaError::NonConvergence { iterations, residual });
            }
            let alpha = rz / pq;
            u.par_iter_mut().zip(p.par_iter()).for_each(|(ui, &pi)| *ui += alpha * pi);
            r.par_iter_mut().zip(q.par_iter()).for_each(|(ri, &qi)| *ri -= alpha * qi);
            z.par_iter_mut()
                .zip(r.par_iter().zip(diag.par_iter()))
                .for_each(|(zi, (&ri, &di))| *zi = ri / di);
            let rz_new = parallel::chunked_dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            p.par_iter_mut().zip(z.par_iter()).for_each(|(pi, &zi)| *pi = zi + beta * *pi);
            residual = parallel::chunked_dot(&r, &r).sqrt() / fnorm;
            iterations += 1;
        }
        let compliance = parallel::chunked_dot(&self.force, &u);
        Ok(FeaResult { displacements: u, compliance, iterations, residual })
    }

    /// Per-element compliance gradient with respect to the physical density:
    /// `-p (1 - rho_min) rho^(p-1) * E * ue' k0 ue`, non-positive everywhere.
    pub fn compliance_sensitivity(&self, rho_tilde: &ScalarGrid, result: &FeaResult) -> Result<ScalarGrid, FeaError> {
        if !rho_tilde.dims.same_shape(&self.dims) {
            return Err(FeaError::DimsMismatch(rho_tilde.dims.shape(), self.dims.shape()));
        }
        let n = self.ke_dofs;
        let e0 = self.mat.youngs_modulus;
        let p = self.mat.simp_penalty;
        let rho_min = self.mat.rho_min;
        let u = &result.displacements;
        let values: Vec<f64> = (0..self.dims.len())
            .into_par_iter()
            .map(|e| {
                let dofs = self.element_dofs(e);
                let mut ue = [0.0f64; 24];
                for a in 0..n {
                    ue[a] = u[dofs[a]];
                }
                let mut quad = 0.0;
                for a in 0..n {
                    let row = &self.k0[a * n..(a + 1) * n];
                    let mut acc = 0.0;
                    for b in 0..n {
                        acc += row[b] * ue[b];
                    }
                    quad += ue[a] * acc;
                }
                let rho = rho_tilde.values[e];
                -p * (1.0 - rho_min) * rho.powf(p - 1.0) * e0 * quad
            })
            .collect();
        Ok(ScalarGrid::from_values(self.dims, values).expect("length matches dims"))
    }
}

struct SendPtr(*mut f64);
unsafe impl Send for SendPtr {}
unsafe impl Sync for SendPtr {}

impl SendPtr {
    #[inline]
    fn get(&self) -> *mut f64 {
        self.0
    }
}

fn dof_index(nn: &[usize; 3], ndim: usize, node: [usize; 3], axis: usize) -> Result<usize, FeaError> {
    if axis >= ndim || node[0] >= nn[0] || node[1] >= nn[1] || node[2] >= nn[2] {
        return Err(FeaError::NodeOutOfRange(node));
    }
    let id = node[0] + nn[0] * (node[1] + nn[1] * node[2]);
    Ok(id * ndim + axis)
}

fn check_rigid_modes(bc: &BoundaryConditions, ndim: usize) -> Result<(), FeaError> {
    if bc.fixed.is_empty() {
        return Err(FeaError::Singular("every rigid-body mode (no fixed dofs)".into()));
    }
    let axis_name = ["x", "y", "z"];
    for axis in 0..ndim {
        if !bc.fixed.iter().any(|&(_, a)| a == axis) {
            return Err(FeaError::Singular(format!("translation along {}", axis_name[axis])));
        }
    }
    let mut nodes: Vec<[usize; 3]> = bc.fixed.iter().map(|&(n, _)| n).collect();
    nodes.sort_unstable();
    nodes.dedup();
    if ndim == 2 && nodes.len() < 2 {
        return Err(FeaError::Singular("in-plane rotation about the single fixed node".into()));
    }
    if ndim == 3 {
        let collinear = nodes.len() < 3 || {
            let a = Vector3::new(nodes[0][0] as f64, nodes[0][1] as f64, nodes[0][2] as f64);
            let ab: Vec<Vector3<f64>> = nodes[1..]
                .iter()
                .map(|n| Vector3::new(n[0] as f64, n[1] as f64, n[2] as f64) - a)
                .collect();
            ab.iter().all(|v| v.cross(&ab[0]).norm() < 1e-12) || ab.iter().all(|v| v.norm() < 1e-12)
        };
        if collinear {
            return Err(FeaError::Singular("rotation about the line of fixed nodes".into()));
        }
    }
    Ok(())
}

/// 8x8 plane-stress stiffness of a square bilinear element for unit Young's
/// modulus and unit thickness (independent of element size).
fn element_stiffness_2d(nu: f64) -> Vec<f64> {
    let d = DMatrix::from_row_slice(
        3,
        3,
        &[1.0, nu, 0.0, nu, 1.0, 0.0, 0.0, 0.0, (1.0 - nu) / 2.0],
    ) / (1.0 - nu * nu);
    let xi = [-1.0f64 / f64::sqrt(3.0), 1.0 / f64::sqrt(3.0)];
    let corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    let h = 1.0; // cancels in plane stress; keep unit for clarity
    let mut ke = DMatrix::<f64>::zeros(8, 8);
    for &gx in &xi {
        for &gy in &xi {
            let mut b = DMatrix::<f64>::zeros(3, 8);
            for (c, &(cx, cy)) in corners.iter().enumerate() {
                // dN/dx = dN/dxi * 2/h for a square element of side h
                let dndx = 0.25 * cx * (1.0 + gy * cy) * 2.0 / h;
                let dndy = 0.25 * cy * (1.0 + gx * cx) * 2.0 / h;
                b[(0, 2 * c)] = dndx;
                b[(1, 2 * c + 1)] = dndy;
                b[(2, 2 * c)] = dndy;
                b[(2, 2 * c + 1)] = dndx;
            }
            let detj = h * h / 4.0;
            ke += b.transpose() * &d * b * detj;
        }
    }
    ke.transpose().as_slice().to_vec() // row-major
}

/// 24x24 stiffness of a cubic trilinear element of side `h` for unit Young's
/// modulus (scales linearly with h).
fn element_stiffness_3d(nu: f64, h: f64) -> Vec<f64> {
    let lam = nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mu = 1.0 / (2.0 * (1.0 + nu));
    let mut d = DMatrix::<f64>::zeros(6, 6);
    for i in 0..3 {
        for j in 0..3 {
            d[(i, j)] = lam;
        }
        d[(i, i)] = lam + 2.0 * mu;
        d[(i + 3, i + 3)] = mu;
    }
    let xi = [-1.0f64 / f64::sqrt(3.0), 1.0 / f64::sqrt(3.0)];
    let corners = [
        (-1.0, -1.0, -1.0),
        (1.0, -1.0, -1.0),
        (1.0, 1.0, -1.0),
        (-1.0, 1.0, -1.0),
        (-1.0, -1.0, 1.0),
        (1.0, -1.0, 1.0),
        (1.0, 1.0, 1.0),
        (-1.0, 1.0, 1.0),
    ];
    let mut ke = DMatrix::<f64>::zeros(24, 24);
    for &gx in &xi {
        for &gy in &xi {
            for &gz in &xi {
                let mut b = DMatrix::<f64>::zeros(6, 24);
                for (c, &(cx, cy, cz)) in corners.iter().enumerate() {
                    let dndx = 0.125 * cx * (1.0 + gy * cy) * (1.0 + gz * cz) * 2.0 / h;
                    let dndy = 0.125 * cy * (1.0 + gx * cx) * (1.0 + gz * cz) * 2.0 / h;
                    let dndz = 0.125 * cz * (1.0 + gx * cx) * (1.0 + gy * cy) * 2.0 / h;
                    let (ux, uy, uz) = (3 * c, 3 * c + 1, 3 * c + 2);
                    b[(0, ux)] = dndx;
                    b[(1, uy)] = dndy;
                    b[(2, uz)] = dndz;
                    b[(3, ux)] = dndy;
                    b[(3, uy)] = dndx;
                    b[(4, uy)] = dndz;
                    b[(4, uz)] = dndy;
                    b[(5, ux)] = dndz;
                    b[(5, uz)] = dndx;
                }
                let detj = h * h * h / 8.0;
                ke += b.transpose() * &d * b * detj;
            }
        }
    }
    ke.transpose().as_slice().to_vec() // row-major
}
