//! Overhang detection and dense sacrificial support synthesis.
//!
//! Printing proceeds layer by layer along the build direction; material in
//! layer k must rest on material inside its support cone in layer k-1. The
//! cone is discretized to two stencils: the voxel directly below (90-degree
//! rule) or the full 3x3 (3D) / 3-wide (2D) neighborhood below (45-degree
//! rule). Unsupported material gets a solid column dropped beneath it until
//! the column lands on part, platform, or the bottom of the grid.

use thiserror::Error;

use crate::grid::{GridDims, GridError, ScalarGrid};

#[derive(Debug, Error)]
pub enum SupportError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("build direction {0:?} is not grid-axis aligned; pre-rotate the domain so the build direction maps to +/-x, +/-y or +/-z")]
    NonAxisAligned([f64; 3]),
    #[error("build direction {0:?} is not a unit vector")]
    NotUnit([f64; 3]),
    #[error("overhang angle must be in (0, 90] degrees, got {0}")]
    BadAlpha(f64),
    #[error("density threshold must be in (0, 1), got {0}")]
    BadThreshold(f64),
    #[error("2D grids (nz = 1) cannot build along z")]
    PlanarBuildAlongZ,
    #[error("part material at column ({0}, {1}) lies at or below the platform top surface (layer {2} <= {3})")]
    PartBelowPlatform(usize, usize, usize, usize),
}

/// Build direction and overhang rule for support generation.
#[derive(Debug, Clone, Copy)]
pub struct BuildSpec {
    /// Unit build direction; must align with a grid axis.
    pub direction: [f64; 3],
    /// Minimum self-supporting angle in degrees, measured so that 90 means
    /// material must sit directly on material.
    pub overhang_angle_deg: f64,
    /// Densities at or above this value count as material.
    pub density_threshold: f64,
}

impl BuildSpec {
    pub fn new(direction: [f64; 3], overhang_angle_deg: f64, density_threshold: f64) -> Result<Self, SupportError> {
        let norm = (direction[0].powi(2) + direction[1].powi(2) + direction[2].powi(2)).sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(SupportError::NotUnit(direction));
        }
        if !(overhang_angle_deg > 0.0 && overhang_angle_deg <= 90.0) {
            return Err(SupportError::BadAlpha(overhang_angle_deg));
        }
        if !(density_threshold > 0.0 && density_threshold < 1.0) {
            return Err(SupportError::BadThreshold(density_threshold));
        }
        Ok(Self { direction, overhang_angle_deg, density_threshold })
    }

    /// True when the cone admits the diagonal neighbors below (45-degree
    /// stencil); false for the directly-below-only stencil.
    pub fn wide_stencil(&self) -> bool {
        self.overhang_angle_deg < 67.5
    }
}

/// Mapping between grid indices and 1-based build layers, layer 1 adjacent
/// to the platform.
#[derive(Debug, Clone, Copy)]
pub struct LayerMap {
    /// Grid axis aligned with the build direction (0, 1 or 2).
    pub axis: usize,
    /// True when the build direction points along +axis.
    pub positive: bool,
    /// Number of layers.
    pub n_layers: usize,
}

impl LayerMap {
    pub fn from_build(dims: &GridDims, spec: &BuildSpec) -> Result<Self, SupportError> {
        let b = spec.direction;
        let mut axis = None;
        for a in 0..3 {
            if (b[a].abs() - 1.0).abs() < 1e-9 {
                axis = Some(a);
            } else if b[a].abs() > 1e-9 {
                return Err(SupportError::NonAxisAligned(b));
            }
        }
        let axis = axis.ok_or(SupportError::NonAxisAligned(b))?;
        if axis == 2 && dims.is_2d() {
            return Err(SupportError::PlanarBuildAlongZ);
        }
        Ok(Self {
            axis,
            positive: b[axis] > 0.0,
            n_layers: dims.shape()[axis],
        })
    }

    /// 1-based layer of a voxel.
    #[inline]
    pub fn layer_of(&self, coords: [usize; 3]) -> usize {
        let i = coords[self.axis];
        if self.positive {
            i + 1
        } else {
            self.n_layers - i
        }
    }

    /// Grid index along the build axis for a 1-based layer.
    #[inline]
    pub fn index_of_layer(&self, layer: usize) -> usize {
        debug_assert!((1..=self.n_layers).contains(&layer));
        if self.positive {
            layer - 1
        } else {
            self.n_layers - layer
        }
    }

    /// Coordinates one layer closer to the platform, or None at layer 1.
    #[inline]
    pub fn below(&self, coords: [usize; 3]) -> Option<[usize; 3]> {
        let mut c = coords;
        if self.positive {
            if c[self.axis] == 0 {
                return None;
            }
            c[self.axis] -= 1;
        } else {
            if c[self.axis] + 1 >= self.n_layers {
                return None;
            }
            c[self.axis] += 1;
        }
        Some(c)
    }

    /// The two grid axes transverse to the build axis.
    pub fn transverse(&self) -> [usize; 2] {
        match self.axis {
            0 => [1, 2],
            1 => [0, 2],
            _ => [0, 1],
        }
    }
}

/// Part plus generated supports: the shape the printer actually produces.
#[derive(Debug, Clone)]
pub struct NearNetShape {
    /// Material indicator of the part (thresholded if built from a density).
    pub part: ScalarGrid,
    /// Support indicator, disjoint from the part.
    pub supports: ScalarGrid,
    /// Platform indicator on the same grid.
    pub platform: ScalarGrid,
    pub layers: LayerMap,
}

impl NearNetShape {
    /// Union indicator of part and supports.
    pub fn near_net(&self) -> ScalarGrid {
        self.part.pointwise_max(&self.supports).expect("near-net grids share dims")
    }
}

fn material_indicator(part: &ScalarGrid, threshold: f64) -> ScalarGrid {
    part.map(|v| if v >= threshold { 1.0 } else { 0.0 })
}

/// Does any stencil cell below `coords` hold value > 0 in any of `grids`?
fn supported_below(coords: [usize; 3], layers: &LayerMap, wide: bool, grids: &[&ScalarGrid]) -> bool {
    let below = match layers.below(coords) {
        Some(b) => b,
        None => return true, // layer 1 rests on the platform side of the grid
    };
    let dims = grids[0].dims;
    let shape = dims.shape();
    let [t0, t1] = layers.transverse();
    let deltas: &[(i64, i64)] = if wide {
        &[(-1, -1), (0, -1), (1, -1), (-1, 0), (0, 0), (1, 0), (-1, 1), (0, 1), (1, 1)]
    } else {
        &[(0, 0)]
    };
    for (d0, d1) in deltas {
        let c0 = below[t0] as i64 + d0;
        let c1 = below[t1] as i64 + d1;
        if c0 < 0 || c1 < 0 || c0 >= shape[t0] as i64 || c1 >= shape[t1] as i64 {
            continue;
        }
        let mut c = below;
        c[t0] = c0 as usize;
        c[t1] = c1 as usize;
        if grids.iter().any(|g| g.get(c[0], c[1], c[2]) > 0.0) {
            return true;
        }
    }
    false
}

fn for_each_layer_voxel(dims: &GridDims, layers: &LayerMap, layer: usize, mut f: impl FnMut([usize; 3])) {
    let idx = layers.index_of_layer(layer);
    let shape = dims.shape();
    let [t0, t1] = layers.transverse();
    for c1 in 0..shape[t1] {
        for c0 in 0..shape[t0] {
            let mut c = [0usize; 3];
            c[layers.axis] = idx;
            c[t0] = c0;
            c[t1] = c1;
            f(c);
        }
    }
}

/// Indicator of material voxels with no material inside their support cone
/// one layer below. Layer 1 is never an overhang.
pub fn overhang_points(part: &ScalarGrid, spec: &BuildSpec) -> Result<ScalarGrid, SupportError> {
    let layers = LayerMap::from_build(&part.dims, spec)?;
    let material = material_indicator(part, spec.density_threshold);
    let wide = spec.wide_stencil();
    let mut out = ScalarGrid::zeros(part.dims);
    for layer in 2..=layers.n_layers {
        for_each_layer_voxel(&part.dims, &layers, layer, |c| {
            if material.get(c[0], c[1], c[2]) > 0.0 && !supported_below(c, &layers, wide, &[&material]) {
                out.set(c[0], c[1], c[2], 1.0);
            }
        });
    }
    Ok(out)
}

/// Generate dense supports: sweep layers from the top toward the platform,
/// and under every unsupported material or support voxel place a support
/// voxel directly below. Columns terminate on part material, the platform,
/// or the grid bottom.
pub fn generate_supports(part: &ScalarGrid, spec: &BuildSpec, platform: &ScalarGrid) -> Result<NearNetShape, SupportError> {
    if !part.dims.same_shape(&platform.dims) {
        return Err(GridError::DimsMismatch(part.dims.shape(), platform.dims.shape()).into());
    }
    let layers = LayerMap::from_build(&part.dims, spec)?;
    let material = material_indicator(part, spec.density_threshold);
    check_part_above_platform(&material, platform, &layers)?;
    let wide = spec.wide_stencil();
    let mut supports = ScalarGrid::zeros(part.dims);
    for layer in (2..=layers.n_layers).rev() {
        // Two phases per layer: find every unsupported voxel against the
        // current state, then drop the columns, so the result does not
        // depend on scan order within the layer.
        let mut pending: Vec<[usize; 3]> = Vec::new();
        for_each_layer_voxel(&part.dims, &layers, layer, |c| {
            let is_material = material.get(c[0], c[1], c[2]) > 0.0 || supports.get(c[0], c[1], c[2]) > 0.0;
            if is_material && !supported_below(c, &layers, wide, &[&material, platform, &supports]) {
                pending.push(c);
            }
        });
        for c in pending {
            let below = layers.below(c).expect("layer >= 2 always has a layer below");
            supports.set(below[0], below[1], below[2], 1.0);
        }
    }
    Ok(NearNetShape {
        part: material,
        supports,
        platform: platform.clone(),
        layers,
    })
}

fn check_part_above_platform(material: &ScalarGrid, platform: &ScalarGrid, layers: &LayerMap) -> Result<(), SupportError> {
    let dims = material.dims;
    let shape = dims.shape();
    let [t0, t1] = layers.transverse();
    for c1 in 0..shape[t1] {
        for c0 in 0..shape[t0] {
            let mut platform_top = 0usize;
            let mut lowest_part = usize::MAX;
            for layer in 1..=layers.n_layers {
                let mut c = [0usize; 3];
                c[layers.axis] = layers.index_of_layer(layer);
                c[t0] = c0;
                c[t1] = c1;
                if platform.get(c[0], c[1], c[2]) > 0.0 {
                    platform_top = platform_top.max(layer);
                }
                if material.get(c[0], c[1], c[2]) > 0.0 {
                    lowest_part = lowest_part.min(layer);
                }
            }
            if lowest_part <= platform_top {
                return Err(SupportError::PartBelowPlatform(c0, c1, lowest_part, platform_top));
            }
        }
    }
    Ok(())
}

/// Voxels of part-or-support material violating the cone rule; empty means
/// the shape prints layer by layer. Exposed for verification.
pub fn unsupported_voxels(shape: &NearNetShape, spec: &BuildSpec) -> Vec<[usize; 3]> {
    let wide = spec.wide_stencil();
    let mut bad = Vec::new();
    for layer in 2..=shape.layers.n_layers {
        for_each_layer_voxel(&shape.part.dims, &shape.layers, layer, |c| {
            let is_material = shape.part.get(c[0], c[1], c[2]) > 0.0 || shape.supports.get(c[0], c[1], c[2]) > 0.0;
            if is_material
                && !supported_below(c, &shape.layers, wide, &[&shape.part, &shape.platform, &shape.supports])
            {
                bad.push(c);
            }
        });
    }
    bad
}

/// Per-layer inaccessibility weights `((n - k + 1) / n)^q` for 1-based
/// layer k of n: 1 at the platform, decaying toward the top.
pub fn layer_coefficients(n_layers: usize, q: f64) -> Vec<f64> {
    (1..=n_layers)
        .map(|k| ((n_layers - k + 1) as f64 / n_layers as f64).powf(q))
        .collect()
}

/// Expand layer coefficients to a per-voxel weight grid.
pub fn layer_weight_grid(dims: &GridDims, layers: &LayerMap, q: f64) -> ScalarGrid {
    let coefs = layer_coefficients(layers.n_layers, q);
    let mut out = ScalarGrid::zeros(*dims);
    for k in 0..dims.nz {
        for j in 0..dims.ny {
            for i in 0..dims.nx {
                let layer = layers.layer_of([i, j, k]);
                out.set(i, j, k, coefs[layer - 1]);
            }
        }
    }
    out
}
