use serde::{Deserialize, Serialize};

use crate::mesh::MeshGraph;
use crate::{Error, Result, Vec3};

/// Weak-perspective camera: orthographic projection, uniform scale, 2D shift.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraWP {
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraWP {
    pub const MIN_RESOLUTION: usize = 8;

    pub fn new(scale: f64, tx: f64, ty: f64, width: usize, height: usize) -> Result<Self> {
        let cam = CameraWP {
            scale,
            tx,
            ty,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "camera scale must be positive and finite, got {}",
                self.scale
            )));
        }
        if !(self.tx.is_finite() && self.ty.is_finite()) {
            return Err(Error::InvalidArgument("camera translation is not finite".into()));
        }
        if self.width < Self::MIN_RESOLUTION || self.height < Self::MIN_RESOLUTION {
            return Err(Error::InvalidArgument(format!(
                "resolution {}x{} is below {m}x{m}",
                self.width,
                self.height,
                m = Self::MIN_RESOLUTION
            )));
        }
        Ok(())
    }

    /// Unit scale, centered, square image.
    pub fn centered(resolution: usize) -> Self {
        CameraWP {
            scale: 1.0,
            tx: 0.0,
            ty: 0.0,
            width: resolution,
            height: resolution,
        }
    }

    pub fn with_resolution(self, width: usize, height: usize) -> Self {
        CameraWP { width, height, ..self }
    }

    pub fn project(&self, v: &Vec3) -> [f64; 2] {
        project_weak_perspective(v, self)
    }
}

/// Partial derivatives of the projected pixel `(u, v)`.
///
/// `d_point[r][k]` is `d(uv[r]) / d(point[k])`; `d_camera[r]` is the derivative
/// with respect to `(scale, tx, ty)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionJacobian {
    pub d_point: [[f64; 3]; 2],
    pub d_camera: [[f64; 3]; 2],
}

/// `u = (s x + tx + 1) / 2 * W`, `v = (1 - (s y + ty)) / 2 * H`.
pub fn project_weak_perspective(v: &Vec3, cam: &CameraWP) -> [f64; 2] {
    let w = cam.width as f64;
    let h = cam.height as f64;
    [
        (cam.scale * v.x + cam.tx + 1.0) * 0.5 * w,
        (1.0 - (cam.scale * v.y + cam.ty)) * 0.5 * h,
    ]
}

pub fn projection_jacobian(v: &Vec3, cam: &CameraWP) -> ProjectionJacobian {
    let hw = 0.5 * cam.width as f64;
    let hh = 0.5 * cam.height as f64;
    ProjectionJacobian {
        d_point: [[cam.scale * hw, 0.0, 0.0], [0.0, -cam.scale * hh, 0.0]],
        d_camera: [[v.x * hw, hw, 0.0], [-v.y * hh, 0.0, -hh]],
    }
}

impl CameraWP {
    pub fn jacobian(&self, v: &Vec3) -> ProjectionJacobian {
        projection_jacobian(v, self)
    }
}

/// Yaw angle in degrees about the vertical axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewAngle(pub f64);

impl ViewAngle {
    pub const FRONT: ViewAngle = ViewAngle(0.0);
    pub const CANONICAL: [ViewAngle; 4] = [
        ViewAngle(0.0),
        ViewAngle(90.0),
        ViewAngle(180.0),
        ViewAngle(270.0),
    ];

    pub fn degrees(self) -> f64 {
        self.0
    }

    pub fn is_canonical(self) -> bool {
        Self::CANONICAL.contains(&self)
    }

    /// `(cos, sin)`; exact for multiples of 90 degrees.
    fn cos_sin(self) -> (f64, f64) {
        let d = self.0.rem_euclid(360.0);
        match d {
            0.0 => (1.0, 0.0),
            90.0 => (0.0, 1.0),
            180.0 => (-1.0, 0.0),
            270.0 => (0.0, -1.0),
            _ => {
                let r = d.to_radians();
                (r.cos(), r.sin())
            }
        }
    }
}

/// Rotates the mesh about the vertical axis through its centroid.
///
/// Positive yaw is counter-clockwise seen from `+y`: a point on `+x` moves to
/// `-z` at 90 degrees (`x' = x cos + z sin`, `z' = -x sin + z cos`).
pub fn rotate_view(mesh: &MeshGraph, angle: ViewAngle) -> MeshGraph {
    rotate_view_about(mesh, angle, mesh.centroid())
}

/// Yaw rotation about the vertical axis through `center`. Used when two meshes
/// must be viewed from the same rig.
pub fn rotate_view_about(mesh: &MeshGraph, angle: ViewAngle, center: Vec3) -> MeshGraph {
    let (c, s) = angle.cos_sin();
    if c == 1.0 && s == 0.0 {
        return mesh.clone();
    }
    let verts = mesh
        .vertices()
        .iter()
        .map(|v| {
            let d = v - center;
            center + Vec3::new(d.x * c + d.z * s, d.y, -d.x * s + d.z * c)
        })
        .collect();
    mesh.with_vertices(verts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{make_icosphere, MeshRole};

    #[test]
    fn center_maps_to_center() {
        let cam = CameraWP::centered(512);
        assert_eq!(project_weak_perspective(&Vec3::new(0.0, 0.0, 3.0), &cam), [256.0, 256.0]);
    }

    #[test]
    fn scale_doubles_offset() {
        let p = Vec3::new(0.25, 0.0, 1.0);
        let c1 = CameraWP::centered(512);
        let c2 = CameraWP { scale: 2.0, ..c1 };
        let o1 = project_weak_perspective(&p, &c1)[0] - 256.0;
        let o2 = project_weak_perspective(&p, &c2)[0] - 256.0;
        assert_eq!(o2, 2.0 * o1);
    }

    #[test]
    fn translation_example() {
        let cam = CameraWP { tx: 0.5, ..CameraWP::centered(512) };
        // (0 + 0.5 + 1) / 2 * 512
        assert_eq!(project_weak_perspective(&Vec3::zeros(), &cam)[0], 384.0);
    }

    #[test]
    fn image_down_orientation() {
        let cam = CameraWP::centered(100);
        let up = project_weak_perspective(&Vec3::new(0.0, 0.5, 0.0), &cam);
        assert!(up[1] < 50.0);
    }

    #[test]
    fn camera_validation() {
        assert!(CameraWP::new(0.0, 0.0, 0.0, 64, 64).is_err());
        assert!(CameraWP::new(1.0, 0.0, 0.0, 4, 64).is_err());
        assert!(CameraWP::new(1.0, 0.0, 0.0, 8, 8).is_ok());
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let v = Vec3::new(0.3, -0.7, 0.2);
        let cam = CameraWP::new(0.8, 0.1, -0.2, 64, 48).unwrap();
        let jac = cam.jacobian(&v);
        let h = 1e-5;
        for k in 0..3 {
            let mut p = v;
            p[k] += h;
            let mut m = v;
            m[k] -= h;
            let (a, b) = (cam.project(&p), cam.project(&m));
            for r in 0..2 {
                let fd = (a[r] - b[r]) / (2.0 * h);
                let an = jac.d_point[r][k];
                assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0));
            }
        }
        let perturb = |k: usize, d: f64| {
            let mut c = cam;
            match k {
                0 => c.scale += d,
                1 => c.tx += d,
                _ => c.ty += d,
            }
            c.project(&v)
        };
        for k in 0..3 {
            let (a, b) = (perturb(k, h), perturb(k, -h));
            for r in 0..2 {
                let fd = (a[r] - b[r]) / (2.0 * h);
                let an = jac.d_camera[r][k];
                assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0));
            }
        }
    }

    #[test]
    fn rotation_identity_and_involution() {
        let m = make_icosphere(1).unwrap();
        let r0 = rotate_view(&m, ViewAngle(0.0));
        assert_eq!(r0.vertices(), m.vertices());
        let r2 = rotate_view(&rotate_view(&m, ViewAngle(180.0)), ViewAngle(180.0));
        for (a, b) in r2.vertices().iter().zip(m.vertices()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn rotation_handedness() {
        // symmetric about the origin so the centroid is exactly zero
        let m = MeshGraph::new(
            vec![Vec3::x(), -Vec3::x(), Vec3::y(), -Vec3::y(), Vec3::z(), -Vec3::z()],
            vec![[0, 2, 4]],
            MeshRole::Body,
        )
        .unwrap();
        let r = rotate_view(&m, ViewAngle(90.0));
        // matrix [[c, 0, s], [0, 1, 0], [-s, 0, c]] applied to +x at 90 degrees
        assert_eq!(r.vertices()[0], Vec3::new(0.0, 0.0, -1.0));
        assert_eq!(r.vertices()[4], Vec3::new(1.0, 0.0, 0.0));
    }
}
