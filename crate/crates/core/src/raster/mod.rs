//! Weak-perspective projection and a deterministic software rasterizer.
//!
//! Camera space is right-handed: `+x` right, `+y` up, `+z` toward the viewer.
//! Image space has its origin at the top-left corner with `v` growing downward;
//! pixel `(i, j)` is sampled at its center `(i + 0.5, j + 0.5)`.

mod camera;
pub mod image_io;
mod render;

pub use camera::{project_weak_perspective, rotate_view, rotate_view_about, CameraWP, ProjectionJacobian, ViewAngle};
pub use render::{
    mask_abs_difference_area, rasterize_depth, rasterize_normal_map, rasterize_silhouette,
    rasterize_silhouette_view, render_normals, render_silhouette, BinaryMask, DepthMap, NormalMap, RenderOptions,
};
