//! Geometric and numerical core for joint body-mesh recovery and clothed-surface
//! reconstruction on fixed-topology 2-manifold triangle graphs.
//!
//! The crate is organised bottom-up:
//!
//! - [`mesh`]: manifold mesh graphs, adjacency, normals, OBJ I/O, icospheres.
//! - [`raster`]: weak-perspective camera and a software rasterizer for
//!   silhouettes and normal maps.
//! - [`nn`]: dense, graph-convolution, edge mesh-convolution and 2D convolution
//!   layers with hand-written backward passes and a finite-difference checker.
//! - [`encode`]: image encoders, bilinear feature puncturing and per-vertex /
//!   per-edge feature assembly.
//! - [`losses`]: chamfer, vertex/joint, normal, trace and cloth losses.
//! - [`metrics`]: MPJPE, PA-MPJPE, MVPE, surface distances and normal-map metrics.
//! - [`pipeline`]: the two-stage network, synthetic data and a toy trainer.
//! - [`cli`]: command implementations behind the `mutualmesh` binary.

pub mod encode;
pub mod error;
pub mod losses;
pub mod mesh;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod raster;
pub mod cli;
pub mod selfcheck;

pub use error::{Error, Result};
pub use mesh::{MeshGraph, MeshRole};

/// 3D vector type used for positions and normals throughout the crate.
pub type Vec3 = nalgebra::Vector3<f64>;
