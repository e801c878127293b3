//! Tool assemblies, machining setups and the inaccessibility measure field.
//!
//! The inaccessibility measure at a point is the smallest normalized
//! collision volume over every allowed way of touching that point: for each
//! tool, each permitted orientation, and each sharp point on the cutter, the
//! tool is placed with the (rotated) sharp point at the query location and
//! its overlap with the obstacle is measured. One FFT convolution per
//! (tool, orientation) yields the overlap for all placements at once; sharp
//! points are handled by shifting that field. Zero means at least one
//! collision-free placement exists.

use rayon::prelude::*;
use thiserror::Error;

use crate::conv::{self, ConvError, CorrelationResult, Spectrum};
use crate::grid::{GridDims, GridError, Rotation, ScalarGrid};

#[derive(Debug, Error)]
pub enum AccessError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Conv(#[from] ConvError),
    #[error("tool '{0}' has an empty sharp-point list")]
    EmptySharpPoints(String),
    #[error("tool '{0}' sharp point {1:?} lies outside the cutter")]
    SharpPointOutsideCutter(String, [f64; 3]),
    #[error("tool '{0}' has an empty orientation list")]
    NoOrientations(String),
    #[error("tool '{0}' has zero volume")]
    EmptyTool(String),
    #[error("machining setup has no tool assemblies")]
    NoTools,
    #[error("platform and fixture overlap (shared volume {0})")]
    PlatformFixtureOverlap(f64),
    #[error("part density overlaps platform/fixture (shared volume {0}); the obstacle sum must stay a density")]
    PartObstacleOverlap(f64),
    #[error("seclusion threshold must be in (0, 1), got {0}")]
    BadLambda(f64),
}

/// A rigid cutter-plus-holder pair in its own local frame. The local origin
/// is the reference that sharp points are measured from and the center that
/// orientations rotate about; by convention it is a voxel center of the tool
/// grid.
#[derive(Debug, Clone)]
pub struct ToolAssembly {
    pub name: String,
    pub holder: ScalarGrid,
    pub cutter: ScalarGrid,
    /// Cutting contact points, tool-local coordinates.
    pub sharp_points: Vec<[f64; 3]>,
    pub orientations: Vec<Rotation>,
}

impl ToolAssembly {
    /// Validate and build. When `sharp_points` is `None` they are derived as
    /// the centers of the cutter voxels extremal along `tool_axis`.
    pub fn new(
        name: impl Into<String>,
        holder: ScalarGrid,
        cutter: ScalarGrid,
        sharp_points: Option<Vec<[f64; 3]>>,
        tool_axis: [f64; 3],
        orientations: Vec<Rotation>,
    ) -> Result<Self, AccessError> {
        let name = name.into();
        if !holder.dims.same_shape(&cutter.dims) {
            return Err(GridError::DimsMismatch(holder.dims.shape(), cutter.dims.shape()).into());
        }
        if orientations.is_empty() {
            return Err(AccessError::NoOrientations(name));
        }
        let sharp_points = match sharp_points {
            Some(pts) => pts,
            None => derive_sharp_points(&cutter, tool_axis),
        };
        if sharp_points.is_empty() {
            return Err(AccessError::EmptySharpPoints(name));
        }
        let tool = Self { name, holder, cutter, sharp_points, orientations };
        if tool.volume() <= 0.0 {
            return Err(AccessError::EmptyTool(tool.name));
        }
        for p in &tool.sharp_points {
            let v = nalgebra::Vector3::new(p[0], p[1], p[2]);
            let inside = tool
                .cutter
                .dims
                .cell_of(&v)
                .map(|[i, j, k]| tool.cutter.get(i, j, k) > 0.0)
                .unwrap_or(false);
            if !inside {
                return Err(AccessError::SharpPointOutsideCutter(tool.name, *p));
            }
        }
        Ok(tool)
    }

    /// Union indicator of holder and cutter.
    pub fn indicator(&self) -> ScalarGrid {
        self.holder.pointwise_max(&self.cutter).expect("tool grids share dims")
    }

    /// vol[T] of the union indicator.
    pub fn volume(&self) -> f64 {
        self.indicator().integrate()
    }
}

fn derive_sharp_points(cutter: &ScalarGrid, axis: [f64; 3]) -> Vec<[f64; 3]> {
    let a = nalgebra::Vector3::new(axis[0], axis[1], axis[2]);
    let d = cutter.dims;
    let mut best = f64::NEG_INFINITY;
    let mut pts: Vec<[f64; 3]> = Vec::new();
    let tol = 1e-9 * d.spacing.max(1.0);
    for k in 0..d.nz {
        for j in 0..d.ny {
            for i in 0..d.nx {
                if cutter.get(i, j, k) == 0.0 {
                    continue;
                }
                let c = d.center(i, j, k);
                let s = c.dot(&a);
                if s > best + tol {
                    best = s;
                    pts.clear();
                    pts.push([c[0], c[1], c[2]]);
                } else if (s - best).abs() <= tol {
                    pts.push([c[0], c[1], c[2]]);
                }
            }
        }
    }
    pts
}

/// The machining scene: tool assemblies plus the static obstacles that are
/// never design material.
#[derive(Debug, Clone)]
pub struct MachiningSetup {
    pub tools: Vec<ToolAssembly>,
    /// Build platform indicator on the design-domain grid.
    pub platform: ScalarGrid,
    /// Fixturing devices indicator on the design-domain grid.
    pub fixture: ScalarGrid,
}

impl MachiningSetup {
    pub fn new(tools: Vec<ToolAssembly>, platform: ScalarGrid, fixture: ScalarGrid) -> Result<Self, AccessError> {
        if tools.is_empty() {
            return Err(AccessError::NoTools);
        }
        if !platform.dims.same_shape(&fixture.dims) {
            return Err(GridError::DimsMismatch(platform.dims.shape(), fixture.dims.shape()).into());
        }
        let shared = platform.pointwise_mul(&fixture)?.integrate();
        if shared > 1e-9 {
            return Err(AccessError::PlatformFixtureOverlap(shared));
        }
        Ok(Self { tools, platform, fixture })
    }

    /// Platform plus fixture as one indicator.
    pub fn static_obstacle(&self) -> ScalarGrid {
        self.platform.pointwise_max(&self.fixture).expect("setup grids share dims")
    }
}

/// Obstacle density for accessibility analysis: part density plus platform
/// and fixture indicators. The sum must stay within [0, 1]; overlap between
/// part material and the static obstacles is rejected.
pub fn assemble_obstacle_density(rho_part: &ScalarGrid, setup: &MachiningSetup) -> Result<ScalarGrid, AccessError> {
    if !rho_part.dims.same_shape(&setup.platform.dims) {
        return Err(GridError::DimsMismatch(rho_part.dims.shape(), setup.platform.dims.shape()).into());
    }
    let statics = setup.static_obstacle();
    let overlap: f64 = rho_part
        .values
        .iter()
        .zip(statics.values.iter())
        .filter(|(_, &s)| s > 0.0)
        .map(|(&p, _)| if p > 1e-6 { p } else { 0.0 })
        .sum::<f64>()
        * rho_part.dims.voxel_measure();
    if overlap > 0.0 {
        return Err(AccessError::PartObstacleOverlap(overlap));
    }
    let rho_o = rho_part.pointwise_add(&statics)?;
    debug_assert!(rho_o.values.iter().all(|&v| v <= 1.0 + 1e-9));
    Ok(rho_o)
}

/// Normalized inaccessibility values with an optional record of which
/// (tool, orientation) achieved the minimum at each voxel.
#[derive(Debug, Clone)]
pub struct ImfField {
    /// Values in [0, 1]; 0 = some collision-free placement reaches the voxel.
    pub values: ScalarGrid,
    /// Argmin (tool index, orientation index) per voxel when tracking was
    /// requested. Ties resolve to the lowest tool, then orientation index.
    pub provenance: Option<Vec<(u16, u16)>>,
}

/// Evaluation switches for [`imf_overall`].
#[derive(Debug, Clone, Default)]
pub struct ImfOptions {
    /// Record the per-voxel argmin pair (doubles memory).
    pub track_provenance: bool,
    /// Evaluate only where the mask is positive; elsewhere the field is 0.
    pub restrict_to: Option<ScalarGrid>,
}

/// One precomputed convolution kernel: the reflected rotated tool spectrum
/// plus the rotated sharp-point shifts, shared across obstacle updates.
pub struct ImfKernel {
    pub tool_index: usize,
    pub orientation_index: usize,
    spectrum: Spectrum,
    shifts: Vec<[i64; 3]>,
    pub tool_volume: f64,
}

/// All kernels of a setup at a common padded FFT size, so one obstacle
/// transform serves every (tool, orientation) pair.
pub struct SetupKernels {
    pub padded: [usize; 3],
    pub kernels: Vec<ImfKernel>,
    domain: GridDims,
}

impl SetupKernels {
    pub fn build(setup: &MachiningSetup, domain: &GridDims) -> Result<Self, AccessError> {
        let mut rotated: Vec<(usize, usize, ScalarGrid, Vec<[i64; 3]>, f64)> = Vec::new();
        for (ti, tool) in setup.tools.iter().enumerate() {
            let indicator = tool.indicator();
            let volume = tool.volume();
            for (oi, rot) in tool.orientations.iter().enumerate() {
                let turned = indicator.rotate_resample(rot);
                let reflected = turned.reflect();
                let h = indicator.dims.spacing;
                let shifts = tool
                    .sharp_points
                    .iter()
                    .map(|p| {
                        let v = rot.apply(&nalgebra::Vector3::new(p[0], p[1], p[2]));
                        [
                            (v[0] / h).round() as i64,
                            (v[1] / h).round() as i64,
                            (v[2] / h).round() as i64,
                        ]
                    })
                    .collect();
                rotated.push((ti, oi, reflected, shifts, volume));
            }
        }
        let mut max_shape = [1usize; 3];
        for (_, _, g, _, _) in &rotated {
            for a in 0..3 {
                max_shape[a] = max_shape[a].max(g.dims.shape()[a]);
            }
        }
        let padded = conv::padded_for(domain.shape(), max_shape);
        let kernels = rotated
            .into_iter()
            .map(|(ti, oi, g, shifts, volume)| {
                Ok(ImfKernel {
                    tool_index: ti,
                    orientation_index: oi,
                    spectrum: conv::forward_spectrum(&g, padded)?,
                    shifts,
                    tool_volume: volume,
                })
            })
            .collect::<Result<Vec<_>, AccessError>>()?;
        Ok(Self { padded, kernels, domain: *domain })
    }

    /// Raw (unclamped, unnormalized-by-nothing-else) minimum collision volume
    /// over sharp points for one kernel, per domain voxel, divided by vol[T].
    fn eval_kernel(&self, obstacle_spectrum: &Spectrum, kernel: &ImfKernel) -> Result<ScalarGrid, AccessError> {
        let field = conv::convolve_spectra(obstacle_spectrum, &kernel.spectrum)?;
        let result = CorrelationResult { field, tool_volume: kernel.tool_volume };
        let mut min: Option<ScalarGrid> = None;
        for shift in &kernel.shifts {
            let w = result.window(&self.domain, *shift);
            min = Some(match min {
                None => w,
                Some(m) => m.pointwise_min(&w)?,
            });
        }
        let mut out = min.expect("kernels have at least one sharp point");
        let inv = 1.0 / kernel.tool_volume;
        for v in &mut out.values {
            *v *= inv;
        }
        Ok(out)
    }

    /// Overall IMF over all kernels for an assembled obstacle density.
    pub fn imf(&self, rho_o: &ScalarGrid, opts: &ImfOptions) -> Result<ImfField, AccessError> {
        assert!(!self.kernels.is_empty());
        let spectrum = conv::forward_spectrum(rho_o, self.padded)?;
        let fields: Vec<ScalarGrid> = self
            .kernels
            .par_iter()
            .map(|k| self.eval_kernel(&spectrum, k))
            .collect::<Result<Vec<_>, _>>()?;
        let n = self.domain.len();
        let mut values = fields[0].values.clone();
        let mut prov = if opts.track_provenance {
            let k0 = &self.kernels[0];
            Some(vec![(k0.tool_index as u16, k0.orientation_index as u16); n])
        } else {
            None
        };
        for (f, k) in fields.iter().zip(self.kernels.iter()).skip(1) {
            for i in 0..n {
                if f.values[i] < values[i] {
                    values[i] = f.values[i];
                    if let Some(p) = prov.as_mut() {
                        p[i] = (k.tool_index as u16, k.orientation_index as u16);
                    }
                }
            }
        }
        for v in &mut values {
            *v = v.clamp(0.0, 1.0);
        }
        if let Some(mask) = &opts.restrict_to {
            for (v, m) in values.iter_mut().zip(mask.values.iter()) {
                if *m <= 0.0 {
                    *v = 0.0;
                }
            }
        }
        let values = ScalarGrid::from_values(self.domain, values)?;
        Ok(ImfField { values, provenance: prov })
    }
}

/// IMF of a single tool at a single orientation (one convolution, then the
/// minimum over sharp-point shifts, normalized by vol[T]).
pub fn imf_rotated_tool(rho_o: &ScalarGrid, rotation: &Rotation, tool: &ToolAssembly) -> Result<ScalarGrid, AccessError> {
    if tool.sharp_points.is_empty() {
        return Err(AccessError::EmptySharpPoints(tool.name.clone()));
    }
    let single = ToolAssembly {
        orientations: vec![*rotation],
        ..tool.clone()
    };
    let setup_like = SetupKernels::build_single(&single, &rho_o.dims)?;
    let spectrum = conv::forward_spectrum(rho_o, setup_like.padded)?;
    let mut field = setup_like.eval_kernel(&spectrum, &setup_like.kernels[0])?;
    for v in &mut field.values {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(field)
}

impl SetupKernels {
    fn build_single(tool: &ToolAssembly, domain: &GridDims) -> Result<Self, AccessError> {
        let setup = MachiningSetup {
            tools: vec![tool.clone()],
            platform: ScalarGrid::zeros(*domain),
            fixture: ScalarGrid::zeros(*domain),
        };
        Self::build(&setup, domain)
    }
}

/// Overall IMF from a part density and a machining setup (obstacle assembly
/// plus the minimum over every tool and orientation).
pub fn imf_overall(rho_part: &ScalarGrid, setup: &MachiningSetup, opts: &ImfOptions) -> Result<ImfField, AccessError> {
    let rho_o = assemble_obstacle_density(rho_part, setup)?;
    let kernels = SetupKernels::build(setup, &rho_part.dims)?;
    kernels.imf(&rho_o, opts)
}

/// Support voxels whose inaccessibility exceeds the threshold.
#[derive(Debug, Clone)]
pub struct SecludedSupports {
    /// Indicator of the secluded region.
    pub mask: ScalarGrid,
    /// Volume of the secluded region.
    pub volume: f64,
    /// Secluded fraction of the support volume; 0 when there are no supports.
    pub ratio: f64,
}

/// Extract supports with IMF above `lambda`.
pub fn secluded_supports(imf: &ImfField, supports: &ScalarGrid, lambda: f64) -> Result<SecludedSupports, AccessError> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(AccessError::BadLambda(lambda));
    }
    let above = imf.values.threshold_indicator(lambda);
    let mask = supports.pointwise_mul(&above)?;
    let volume = mask.integrate();
    let vs = supports.integrate();
    let ratio = if vs > 0.0 { volume / vs } else { 0.0 };
    Ok(SecludedSupports { mask, volume, ratio })
}
