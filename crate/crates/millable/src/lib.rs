//! Voxel topology optimization with machinable support structures.
//!
//! The crate optimizes part stiffness under a volume budget while steering
//! the design so that every sacrificial support on the printed near-net
//! shape can be reached, collision-free, by a given set of multi-axis
//! machining tool assemblies — and then produces a greedy plan for actually
//! removing those supports.
//!
//! Modules mirror the pipeline:
//! - [`grid`]: uniform voxel fields and geometric primitives;
//! - [`io`]: grid binary container, VTK and PGM exports;
//! - [`conv`]: FFT collision-volume convolution plus a brute-force oracle;
//! - [`accessibility`]: tool assemblies, machining setups, inaccessibility
//!   measure fields and secluded-support extraction;
//! - [`support`]: overhang detection, dense support synthesis and layer
//!   weights;
//! - [`fea`]: matrix-free linear elasticity with penalized densities;
//! - [`topopt`]: the constrained optimality-criteria loop;
//! - [`planner`]: greedy layer-batch support-removal sequencing;
//! - [`problem`]: problem-file ingestion and validation;
//! - [`cli`]: the command-line front end.
//!
//! The `examples/` directory contains one runnable walkthrough per
//! capability; start with `optimize_cantilever`.

pub mod accessibility;
pub mod conv;
pub mod fea;
pub mod grid;
pub mod io;
pub mod parallel;
pub mod support;

pub use accessibility::{imf_overall, imf_rotated_tool, secluded_supports, ImfField, MachiningSetup, ToolAssembly};
pub use grid::{GridDims, Primitive, Rotation, ScalarGrid};
pub use support::{generate_supports, overhang_points, BuildSpec, NearNetShape};
