//! Uniform voxel grids of scalar values and the geometric primitives used to
//! build and transform them.
//!
//! A grid covers an axis-aligned box in world space. `origin` is the world
//! coordinate of the lower corner of voxel `(0, 0, 0)`; the center of voxel
//! `(i, j, k)` is `origin + (i + 0.5, j + 0.5, k + 0.5) * spacing`. Values are
//! stored x-fastest, then y, then z. A grid with `nz = 1` is a 2D field and
//! integrates with `spacing^2`.
//!
//! Two lattice conventions are used throughout the crate:
//! domain grids have `origin / spacing` integral, so voxel centers sit on the
//! half-integer lattice; tool grids have `origin / spacing` half-integral, so
//! the tool-local origin (the reference for sharp points) is itself a voxel
//! center. Keeping both classes fixed makes correlation outputs land exactly
//! on domain voxel centers and makes 90-degree rotations exact.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid dims mismatch: {0:?} vs {1:?}")]
    DimsMismatch([usize; 3], [usize; 3]),
    #[error("grid spacing mismatch: {0} vs {1}")]
    SpacingMismatch(f64, f64),
    #[error("degenerate primitive: {0}")]
    DegeneratePrimitive(String),
    #[error("invalid grid dims: {0}")]
    InvalidDims(String),
    #[error("rotation matrix is not a proper rotation (det {0}, orthogonality residual {1})")]
    NotARotation(f64, f64),
}

/// Voxel counts, spacing and world placement of a uniform grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridDims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Edge length of a voxel (isotropic).
    pub spacing: f64,
    /// World coordinate of the lower corner of voxel (0, 0, 0).
    pub origin: [f64; 3],
}

impl GridDims {
    pub fn new(nx: usize, ny: usize, nz: usize, spacing: f64, origin: [f64; 3]) -> Result<Self, GridError> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(GridError::InvalidDims(format!(
                "voxel counts must be positive, got {nx}x{ny}x{nz}"
            )));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(GridError::InvalidDims(format!("spacing must be positive, got {spacing}")));
        }
        if origin.iter().any(|c| !c.is_finite()) {
            return Err(GridError::InvalidDims(format!("origin must be finite, got {origin:?}")));
        }
        Ok(Self { nx, ny, nz, spacing, origin })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    /// True for planar grids (one voxel thick in z).
    pub fn is_2d(&self) -> bool {
        self.nz == 1
    }

    /// Spatial dimension: 2 or 3.
    pub fn dim(&self) -> u32 {
        if self.is_2d() {
            2
        } else {
            3
        }
    }

    /// Voxel measure: `spacing^2` in 2D, `spacing^3` in 3D.
    pub fn voxel_measure(&self) -> f64 {
        self.spacing.powi(self.dim() as i32)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny && k < self.nz);
        i + self.nx * (j + self.ny * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.nx;
        let j = (idx / self.nx) % self.ny;
        let k = idx / (self.nx * self.ny);
        [i, j, k]
    }

    /// World position of the center of voxel (i, j, k).
    #[inline]
    pub fn center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        Vector3::new(
            self.origin[0] + (i as f64 + 0.5) * self.spacing,
            self.origin[1] + (j as f64 + 0.5) * self.spacing,
            self.origin[2] + (k as f64 + 0.5) * self.spacing,
        )
    }

    /// Voxel indices of the cell containing a world point, or None if outside.
    #[inline]
    pub fn cell_of(&self, p: &Vector3<f64>) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        let n = self.shape();
        for a in 0..3 {
            let t = (p[a] - self.origin[a]) / self.spacing;
            if t < 0.0 || t >= n[a] as f64 {
                return None;
            }
            out[a] = t as usize;
        }
        Some(out)
    }

    /// World bounds of the grid box.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let max = [
            self.origin[0] + self.nx as f64 * self.spacing,
            self.origin[1] + self.ny as f64 * self.spacing,
            self.origin[2] + self.nz as f64 * self.spacing,
        ];
        (self.origin, max)
    }

    pub fn same_shape(&self, other: &GridDims) -> bool {
        self.shape() == other.shape()
    }
}

/// A scalar field sampled on a uniform voxel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    pub dims: GridDims,
    pub values: Vec<f64>,
}

impl ScalarGrid {
    pub fn zeros(dims: GridDims) -> Self {
        Self { values: vec![0.0; dims.len()], dims }
    }

    pub fn filled(dims: GridDims, value: f64) -> Self {
        Self { values: vec![value; dims.len()], dims }
    }

    pub fn from_values(dims: GridDims, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != dims.len() {
            return Err(GridError::InvalidDims(format!(
                "value buffer length {} does not match dims {:?}",
                values.len(),
                dims.shape()
            )));
        }
        Ok(Self { dims, values })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.dims.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let idx = self.dims.index(i, j, k);
        self.values[idx] = v;
    }

    /// Signed-index read; `fill` is returned outside the grid.
    #[inline]
    pub fn get_or(&self, i: i64, j: i64, k: i64, fill: f64) -> f64 {
        if i < 0 || j < 0 || k < 0 || i >= self.dims.nx as i64 || j >= self.dims.ny as i64 || k >= self.dims.nz as i64 {
            fill
        } else {
            self.values[self.dims.index(i as usize, j as usize, k as usize)]
        }
    }

    /// Sum of values times the voxel measure (area in 2D, volume in 3D).
    pub fn integrate(&self) -> f64 {
        let m = self.dims.voxel_measure();
        crate::parallel::chunked_sum(&self.values) * m
    }

    /// Number of voxels with value above `thresh`.
    pub fn count_above(&self, thresh: f64) -> usize {
        self.values.iter().filter(|&&v| v > thresh).count()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// True if every value is 0 or 1.
    pub fn is_indicator(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// True if every value lies in [0, 1].
    pub fn is_density(&self) -> bool {
        self.values.iter().all(|&v| (0.0..=1.0).contains(&v))
    }

    fn check_same_dims(&self, other: &ScalarGrid) -> Result<(), GridError> {
        if !self.dims.same_shape(&other.dims) {
            return Err(GridError::DimsMismatch(self.dims.shape(), other.dims.shape()));
        }
        Ok(())
    }

    pub fn pointwise_min(&self, other: &ScalarGrid) -> Result<ScalarGrid, GridError> {
        self.zip_with(other, f64::min)
    }

    pub fn pointwise_max(&self, other: &ScalarGrid) -> Result<ScalarGrid, GridError> {
        self.zip_with(other, f64::max)
    }

    pub fn pointwise_add(&self, other: &ScalarGrid) -> Result<ScalarGrid, GridError> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn pointwise_mul(&self, other: &ScalarGrid) -> Result<ScalarGrid, GridError> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn zip_with(&self, other: &ScalarGrid, f: impl Fn(f64, f64) -> f64) -> Result<ScalarGrid, GridError> {
        self.check_same_dims(other)?;
        let values = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(ScalarGrid { dims: self.dims, values })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarGrid {
        ScalarGrid {
            dims: self.dims,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Indicator of the strict superlevel set `{ v > lambda }`.
    pub fn threshold_indicator(&self, lambda: f64) -> ScalarGrid {
        self.map(|v| if v > lambda { 1.0 } else { 0.0 })
    }

    /// Point reflection through the world origin. Exact on the voxel lattice:
    /// the cell at index `i` maps to index `n - 1 - i` with the origin negated
    /// across the far corner, so `reflect(reflect(g)) == g`.
    pub fn reflect(&self) -> ScalarGrid {
        let d = self.dims;
        let (_, max) = d.bounds();
        let dims = GridDims {
            origin: [-max[0], -max[1], -max[2]],
            ..d
        };
        let mut out = ScalarGrid::zeros(dims);
        for k in 0..d.nz {
            for j in 0..d.ny {
                for i in 0..d.nx {
                    let v = self.get(i, j, k);
                    out.set(d.nx - 1 - i, d.ny - 1 - j, d.nz - 1 - k, v);
                }
            }
        }
        out
    }

    /// Translate values by a whole-voxel offset. The grid box is unchanged;
    /// voxels shifted in from outside take `fill` (0 for indicators, +inf for
    /// inaccessibility fields where out-of-domain state is unknown).
    pub fn shift(&self, t: [i64; 3], fill: f64) -> ScalarGrid {
        let d = self.dims;
        let mut out = ScalarGrid::zeros(d);
        for k in 0..d.nz as i64 {
            for j in 0..d.ny as i64 {
                for i in 0..d.nx as i64 {
                    let v = self.get_or(i - t[0], j - t[1], k - t[2], fill);
                    out.set(i as usize, j as usize, k as usize, v);
                }
            }
        }
        out
    }

    /// Rotate an indicator grid about the world origin and resample onto an
    /// enlarged bounding grid by inverse-mapping each output voxel center and
    /// doing a nearest-neighbor (containing-cell) lookup. Nearest-neighbor
    /// keeps indicators in {0, 1}; rotations by multiples of 90 degrees about
    /// grid axes are exact because the center lattice maps onto itself.
    pub fn rotate_resample(&self, r: &Rotation) -> ScalarGrid {
        let d = self.dims;
        let h = d.spacing;
        let (lo, hi) = d.bounds();
        // Rotated AABB of the grid box.
        let mut rmin = [f64::INFINITY; 3];
        let mut rmax = [f64::NEG_INFINITY; 3];
        for corner in 0..8 {
            let p = Vector3::new(
                if corner & 1 == 0 { lo[0] } else { hi[0] },
                if corner & 2 == 0 { lo[1] } else { hi[1] },
                if corner & 4 == 0 { lo[2] } else { hi[2] },
            );
            let q = r.matrix() * p;
            for a in 0..3 {
                rmin[a] = rmin[a].min(q[a]);
                rmax[a] = rmax[a].max(q[a]);
            }
        }
        // Snap outward to the same lattice class as the input origin so the
        // alignment convention survives rotation. Values within fp noise of a
        // lattice point snap onto it, which keeps identity and 90-degree
        // rotations from growing the box.
        let snap_floor = |x: f64| {
            let r = x.round();
            if (x - r).abs() < 1e-7 {
                r
            } else {
                x.floor()
            }
        };
        let snap_ceil = |x: f64| {
            let r = x.round();
            if (x - r).abs() < 1e-7 {
                r
            } else {
                x.ceil()
            }
        };
        let mut origin = [0.0; 3];
        let mut n = [0usize; 3];
        for a in 0..3 {
            let frac = d.origin[a] / h - (d.origin[a] / h).floor();
            let lo_cells = snap_floor(rmin[a] / h - frac);
            let hi_cells = snap_ceil(rmax[a] / h - frac);
            origin[a] = (lo_cells + frac) * h;
            n[a] = (hi_cells - lo_cells).max(1.0) as usize;
        }
        let dims = GridDims {
            nx: n[0],
            ny: n[1],
            nz: n[2],
            spacing: h,
            origin,
        };
        let inv = r.matrix().transpose();
        let mut out = ScalarGrid::zeros(dims);
        for k in 0..dims.nz {
            for j in 0..dims.ny {
                for i in 0..dims.nx {
                    let c = dims.center(i, j, k);
                    let p = inv * c;
                    if let Some([ii, jj, kk]) = d.cell_of(&p) {
                        out.set(i, j, k, self.get(ii, jj, kk));
                    }
                }
            }
        }
        out
    }
}

/// A proper rotation of 2D or 3D space stored as an orthonormal matrix.
/// 2D rotations are rotations about the z axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    m: Matrix3<f64>,
}

impl Rotation {
    pub fn identity() -> Self {
        Self { m: Matrix3::identity() }
    }

    /// Rotation about the x axis by `theta` radians.
    pub fn about_x(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self {
            m: Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
        }
    }

    /// Rotation about the y axis by `theta` radians.
    pub fn about_y(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self {
            m: Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
        }
    }

    /// Rotation about the z axis by `theta` radians. This is also the planar
    /// rotation used for 2D grids.
    pub fn about_z(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self {
            m: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
        }
    }

    /// Rotation about an arbitrary unit axis by `theta` radians.
    pub fn about_axis(axis: [f64; 3], theta: f64) -> Result<Self, GridError> {
        let v = Vector3::new(axis[0], axis[1], axis[2]);
        let n = v.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(GridError::NotARotation(0.0, f64::INFINITY));
        }
        let u = nalgebra::Unit::new_normalize(v);
        let m = nalgebra::Rotation3::from_axis_angle(&u, theta);
        Self::from_matrix(*m.matrix())
    }

    /// Build from an explicit matrix, validating det = +1 and orthonormality
    /// to 1e-9.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GridError> {
        let det = m.determinant();
        let res = (m * m.transpose() - Matrix3::identity()).norm();
        if (det - 1.0).abs() > 1e-9 || res > 1e-9 {
            return Err(GridError::NotARotation(det, res));
        }
        Ok(Self { m })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn inverse(&self) -> Rotation {
        Rotation { m: self.m.transpose() }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.m * p
    }

    pub fn then(&self, next: &Rotation) -> Rotation {
        Rotation { m: next.m * self.m }
    }
}

/// Solid primitive descriptors rasterized by center-sampling: a voxel is set
/// iff its center lies inside (boundary inclusive).
#[derive(Debug, Clone)]
pub enum Primitive {
    /// Axis-aligned box given by min/max corners.
    Box { min: [f64; 3], max: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
    /// Finite cylinder around the segment p0-p1.
    Cylinder { p0: [f64; 3], p1: [f64; 3], radius: f64 },
    /// Segment p0-p1 dilated by `radius` (cylinder with spherical caps).
    Capsule { p0: [f64; 3], p1: [f64; 3], radius: f64 },
    /// Points x with (x - point) . normal <= 0.
    HalfSpace { point: [f64; 3], normal: [f64; 3] },
}

impl Primitive {
    fn validate(&self) -> Result<(), GridError> {
        let bad = |what: &str| Err(GridError::DegeneratePrimitive(what.to_string()));
        match self {
            Primitive::Box { min, max } => {
                if min.iter().chain(max.iter()).any(|v| !v.is_finite()) {
                    return bad("box with non-finite corner");
                }
                for a in 0..3 {
                    if max[a] <= min[a] {
                        return bad(&format!("box with non-positive extent on axis {a}"));
                    }
                }
                Ok(())
            }
            Primitive::Sphere { center, radius } => {
                if center.iter().any(|v| !v.is_finite()) || !radius.is_finite() {
                    return bad("sphere with non-finite pose");
                }
                if *radius <= 0.0 {
                    return bad("sphere with non-positive radius");
                }
                Ok(())
            }
            Primitive::Cylinder { p0, p1, radius } | Primitive::Capsule { p0, p1, radius } => {
                if p0.iter().chain(p1.iter()).any(|v| !v.is_finite()) || !radius.is_finite() {
                    return bad("cylinder/capsule with non-finite pose");
                }
                if *radius <= 0.0 {
                    return bad("cylinder/capsule with non-positive radius");
                }
                let axis = Vector3::new(p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]);
                if let Primitive::Cylinder { .. } = self {
                    if axis.norm() == 0.0 {
                        return bad("cylinder with zero-length axis");
                    }
                }
                Ok(())
            }
            Primitive::HalfSpace { point, normal } => {
                if point.iter().chain(normal.iter()).any(|v| !v.is_finite()) {
                    return bad("half-space with non-finite pose");
                }
                let n = Vector3::new(normal[0], normal[1], normal[2]);
                if n.norm() == 0.0 {
                    return bad("half-space with zero normal");
                }
                Ok(())
            }
        }
    }

    fn contains(&self, p: &Vector3<f64>) -> bool {
        match self {
            Primitive::Box { min, max } => (0..3).all(|a| p[a] >= min[a] && p[a] <= max[a]),
            Primitive::Sphere { center, radius } => {
                let c = Vector3::new(center[0], center[1], center[2]);
                (p - c).norm_squared() <= radius * radius
            }
            Primitive::Cylinder { p0, p1, radius } => {
                let a = Vector3::new(p0[0], p0[1], p0[2]);
                let b = Vector3::new(p1[0], p1[1], p1[2]);
                let ab = b - a;
                let t = (p - a).dot(&ab) / ab.norm_squared();
                if !(0.0..=1.0).contains(&t) {
                    return false;
                }
                let closest = a + ab * t;
                (p - closest).norm_squared() <= radius * radius
            }
            Primitive::Capsule { p0, p1, radius } => {
                let a = Vector3::new(p0[0], p0[1], p0[2]);
                let b = Vector3::new(p1[0], p1[1], p1[2]);
                let ab = b - a;
                let denom = ab.norm_squared();
                let t = if denom == 0.0 { 0.0 } else { ((p - a).dot(&ab) / denom).clamp(0.0, 1.0) };
                let closest = a + ab * t;
                (p - closest).norm_squared() <= radius * radius
            }
            Primitive::HalfSpace { point, normal } => {
                let q = Vector3::new(point[0], point[1], point[2]);
                let n = Vector3::new(normal[0], normal[1], normal[2]);
                (p - q).dot(&n) <= 0.0
            }
        }
    }
}

/// Rasterize the union of primitives onto a grid. An empty list yields an
/// all-zero grid.
pub fn rasterize(shapes: &[Primitive], dims: GridDims) -> Result<ScalarGrid, GridError> {
    for s in shapes {
        s.validate()?;
    }
    let mut out = ScalarGrid::zeros(dims);
    for k in 0..dims.nz {
        for j in 0..dims.ny {
            for i in 0..dims.nx {
                let c = dims.center(i, j, k);
                if shapes.iter().any(|s| s.contains(&c)) {
                    out.set(i, j, k, 1.0);
                }
            }
        }
    }
    Ok(out)
}

/// Smallest grid whose box contains all primitives, padded by `pad` voxels,
/// with the origin snapped to the `(Z + frac) * spacing` lattice. Tool grids
/// use `frac = 0.5` so the tool-local origin is a voxel center; domain-class
/// grids use `frac = 0`.
pub fn bounding_dims(shapes: &[Primitive], spacing: f64, pad: usize, frac: f64, force_2d: bool) -> Result<GridDims, GridError> {
    if shapes.is_empty() {
        return Err(GridError::DegeneratePrimitive("cannot bound an empty primitive list".into()));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for s in shapes {
        s.validate()?;
        let (smin, smax) = primitive_aabb(s)?;
        for a in 0..3 {
            lo[a] = lo[a].min(smin[a]);
            hi[a] = hi[a].max(smax[a]);
        }
    }
    let mut origin = [0.0; 3];
    let mut n = [0usize; 3];
    for a in 0..3 {
        let lo_cells = (lo[a] / spacing - frac).floor() - pad as f64;
        let hi_cells = (hi[a] / spacing - frac).ceil() + pad as f64;
        origin[a] = (lo_cells + frac) * spacing;
        n[a] = (hi_cells - lo_cells).max(1.0) as usize;
    }
    if force_2d {
        // One voxel thick, centred on the z = 0 plane so planar convolutions
        // stay aligned with nz = 1 domain grids.
        n[2] = 1;
        origin[2] = -0.5 * spacing;
    }
    GridDims::new(n[0], n[1], n[2], spacing, origin)
}

fn primitive_aabb(s: &Primitive) -> Result<([f64; 3], [f64; 3]), GridError> {
    match s {
        Primitive::Box { min, max } => Ok((*min, *max)),
        Primitive::Sphere { center, radius } => Ok((
            [center[0] - radius, center[1] - radius, center[2] - radius],
            [center[0] + radius, center[1] + radius, center[2] + radius],
        )),
        Primitive::Cylinder { p0, p1, radius } | Primitive::Capsule { p0, p1, radius } => {
            let mut lo = [0.0; 3];
            let mut hi = [0.0; 3];
            for a in 0..3 {
                lo[a] = p0[a].min(p1[a]) - radius;
                hi[a] = p0[a].max(p1[a]) + radius;
            }
            Ok((lo, hi))
        }
        Primitive::HalfSpace { .. } => Err(GridError::DegeneratePrimitive(
            "half-space has no bounded extent; rasterize it onto an explicit grid".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dims(n: [usize; 3], h: f64, o: [f64; 3]) -> GridDims {
        GridDims::new(n[0], n[1], n[2], h, o).unwrap()
    }

    #[test]
    fn rasterize_unit_box_covers_64_voxels() {
        // 8^3 grid of spacing 0.25 over [0,2]^3; unit box centred at (1,1,1).
        let d = dims([8, 8, 8], 0.25, [0.0, 0.0, 0.0]);
        let shape = Primitive::Box { min: [0.5, 0.5, 0.5], max: [1.5, 1.5, 1.5] };
        let g = rasterize(&[shape], d).unwrap();
        assert_eq!(g.count_above(0.5), 64);
    }

    #[test]
    fn rasterize_empty_list_is_zero() {
        let d = dims([4, 4, 4], 1.0, [0.0; 3]);
        let g = rasterize(&[], d).unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rasterize_sphere_volume_within_5_percent() {
        let h = 2.0 / 32.0;
        let d = dims([32, 32, 32], h, [0.0, 0.0, 0.0]);
        let g = rasterize(&[Primitive::Sphere { center: [1.0, 1.0, 1.0], radius: 1.0 }], d).unwrap();
        let analytic = 4.0 / 3.0 * std::f64::consts::PI;
        let measured = g.integrate();
        assert!((measured - analytic).abs() / analytic < 0.05, "measured {measured} vs {analytic}");
    }

    #[test]
    fn rasterize_rejects_degenerate_primitives() {
        let d = dims([4, 4, 4], 1.0, [0.0; 3]);
        assert!(rasterize(&[Primitive::Sphere { center: [0.0; 3], radius: 0.0 }], d).is_err());
        assert!(rasterize(&[Primitive::Box { min: [0.0; 3], max: [1.0, 0.0, 1.0] }], d).is_err());
    }

    #[test]
    fn rotate_identity_is_identity() {
        let d = dims([5, 3, 2], 0.5, [-1.0, 0.5, -0.5]);
        let g = rasterize(&[Primitive::Box { min: [-0.9, 0.6, -0.4], max: [0.3, 1.4, 0.4] }], d).unwrap();
        let r = g.rotate_resample(&Rotation::identity());
        assert_eq!(r, g);
    }

    #[test]
    fn rotate_quarter_turn_preserves_count() {
        let d = dims([6, 4, 2], 0.5, [-1.5, -1.0, -0.5]);
        let g = rasterize(&[Primitive::Box { min: [-1.4, -0.9, -0.4], max: [0.4, 0.3, 0.4] }], d).unwrap();
        let n0 = g.count_above(0.5);
        assert!(n0 > 0);
        for theta in [std::f64::consts::FRAC_PI_2, std::f64::consts::PI, -std::f64::consts::FRAC_PI_2] {
            let r = g.rotate_resample(&Rotation::about_z(theta));
            assert_eq!(r.count_above(0.5), n0, "theta {theta}");
        }
        let r = g.rotate_resample(&Rotation::about_x(std::f64::consts::FRAC_PI_2));
        assert_eq!(r.count_above(0.5), n0);
    }

    #[test]
    fn rotate_half_turn_twice_is_identity() {
        let d = dims([6, 4, 1], 1.0, [-3.0, -2.0, -0.5]);
        let g = rasterize(&[Primitive::Box { min: [-2.5, -1.5, -0.5], max: [0.5, 0.5, 0.5] }], d).unwrap();
        let r = Rotation::about_z(std::f64::consts::PI);
        let twice = g.rotate_resample(&r).rotate_resample(&r);
        assert_eq!(twice.count_above(0.5), g.count_above(0.5));
        // Same occupied world cells.
        for k in 0..g.dims.nz {
            for j in 0..g.dims.ny {
                for i in 0..g.dims.nx {
                    let c = g.dims.center(i, j, k);
                    let [ti, tj, tk] = twice.dims.cell_of(&c).unwrap();
                    assert_eq!(g.get(i, j, k), twice.get(ti, tj, tk));
                }
            }
        }
    }

    #[test]
    fn reflect_moves_single_voxel_to_mirror_cell() {
        let d = dims([8, 8, 8], 1.0, [-4.0, -4.0, -4.0]);
        let mut g = ScalarGrid::zeros(d);
        g.set(6, 5, 4, 1.0); // centre (2.5, 1.5, 0.5)
        let r = g.reflect();
        let cell = r.dims.cell_of(&Vector3::new(-2.5, -1.5, -0.5)).unwrap();
        assert_eq!(r.get(cell[0], cell[1], cell[2]), 1.0);
        assert_eq!(r.count_above(0.5), 1);
    }

    #[test]
    fn reflect_fixes_symmetric_sets_and_preserves_volume() {
        let d = dims([6, 6, 6], 0.5, [-1.5, -1.5, -1.5]);
        let g = rasterize(&[Primitive::Sphere { center: [0.0; 3], radius: 1.2 }], d).unwrap();
        let r = g.reflect();
        assert_eq!(r, g);
        let shifted = rasterize(&[Primitive::Sphere { center: [0.4, 0.0, 0.0], radius: 0.9 }], d).unwrap();
        assert_eq!(shifted.reflect().integrate(), shifted.integrate());
    }

    #[test]
    fn shift_semantics() {
        let d = dims([8, 8, 1], 1.0, [0.0; 3]);
        let mut g = ScalarGrid::zeros(d);
        g.set(2, 3, 0, 1.0);
        assert_eq!(g.shift([0, 0, 0], 0.0), g);
        let s = g.shift([2, 3, 0], 0.0);
        assert_eq!(s.get(4, 6, 0), 1.0);
        assert_eq!(s.count_above(0.5), 1);
        let back = s.shift([-2, -3, 0], 0.0);
        assert_eq!(back, g);
        // +inf fill for fields where out-of-domain reads are unknown
        let inf = g.shift([1, 0, 0], f64::INFINITY);
        assert!(inf.get(0, 0, 0).is_infinite());
    }

    #[test]
    fn integrate_basics() {
        let d2 = dims([10, 10, 1], 1.0, [0.0; 3]);
        assert_eq!(ScalarGrid::zeros(d2).integrate(), 0.0);
        assert_eq!(ScalarGrid::filled(d2, 1.0).integrate(), 100.0);
        let d3 = dims([16, 16, 16], 0.25, [0.0; 3]);
        let g = rasterize(&[Primitive::Box { min: [0.5, 0.5, 0.5], max: [2.5, 3.5, 1.5] }], d3).unwrap();
        let analytic = 2.0 * 3.0 * 1.0;
        assert!((g.integrate() - analytic).abs() < 1e-9, "box aligned to the lattice is exact");
    }

    #[test]
    fn combine_ops() {
        let d = dims([4, 1, 1], 1.0, [0.0; 3]);
        let g = ScalarGrid::from_values(d, vec![0.1, 0.4, 0.6, 0.9]).unwrap();
        assert_eq!(g.pointwise_min(&g).unwrap(), g);
        let a = ScalarGrid::from_values(d, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let b = ScalarGrid::from_values(d, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(a.pointwise_mul(&b).unwrap().integrate(), 0.0);
        let ramp = g.threshold_indicator(0.5);
        assert_eq!(ramp.values, vec![0.0, 0.0, 1.0, 1.0]);
        let other = dims([5, 1, 1], 1.0, [0.0; 3]);
        assert!(g.pointwise_add(&ScalarGrid::zeros(other)).is_err());
    }

    #[test]
    fn rotation_invariants() {
        let r = Rotation::about_axis([1.0, 2.0, -0.5], 0.7).unwrap();
        let m = r.matrix();
        assert!((m.determinant() - 1.0).abs() < 1e-9);
        assert!((m * m.transpose() - Matrix3::identity()).norm() < 1e-9);
        assert!(Rotation::from_matrix(Matrix3::from_diagonal_element(2.0)).is_err());
    }

    proptest! {
        #[test]
        fn reflect_is_an_involution(vals in proptest::collection::vec(0u8..2, 24)) {
            let d = dims([4, 3, 2], 0.5, [-1.0, -0.5, -0.5]);
            let g = ScalarGrid::from_values(d, vals.iter().map(|&v| v as f64).collect()).unwrap();
            prop_assert_eq!(g.reflect().reflect(), g);
        }

        #[test]
        fn quarter_turns_preserve_count(vals in proptest::collection::vec(0u8..2, 36), quarter in 1usize..4) {
            let d = dims([4, 3, 3], 1.0, [-2.0, -1.0, -2.0]);
            let g = ScalarGrid::from_values(d, vals.iter().map(|&v| v as f64).collect()).unwrap();
            let r = Rotation::about_z(quarter as f64 * std::f64::consts::FRAC_PI_2);
            prop_assert_eq!(g.rotate_resample(&r).count_above(0.5), g.count_above(0.5));
        }
    }
}
