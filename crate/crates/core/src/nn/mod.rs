//! Layers with explicit forward tapes and hand-written backward passes.
//!
//! Every `forward` returns the output plus a tape; `backward` consumes the tape,
//! accumulates parameter gradients into a zero-initialized layer of the same
//! type and returns the gradient with respect to the layer input.

mod activation;
pub mod checkpoint;
mod conv2d;
mod dense;
mod edge_vertex;
pub mod gradcheck;
mod graph_conv;
mod mat;
mod mesh_conv;
mod params;

pub use activation::{Activation, LEAKY_SLOPE};
pub use conv2d::{Conv2d, Conv2dTape, Grid};
pub use dense::{Dense, DenseTape};
pub use edge_vertex::{edge_to_vertex, edge_to_vertex_backward};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph_conv::{GraphConv, GraphConvTape};
pub use mat::Mat;
pub use mesh_conv::{gather_slots, MeshConv, MeshConvTape, NeighborMode};
pub use params::{init_params, BlockRef, InitScheme, Params};
