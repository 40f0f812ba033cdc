use super::camera::{rotate_view_about, CameraWP, ViewAngle};
use crate::mesh::MeshGraph;
use crate::{Error, Result, Vec3};

/// Binary silhouette, row-major, `1` where any triangle covers the pixel center.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
    pub angle: ViewAngle,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, angle: ViewAngle) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![0; width * height],
            angle,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }
}

/// Per-pixel camera-space unit normals; background pixels hold zero.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalMap {
    pub width: usize,
    pub height: usize,
    pub normals: Vec<Vec3>,
    pub mask: BinaryMask,
}

/// Camera-space `z` of the nearest surface; background pixels hold zero.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub mask: BinaryMask,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    /// Flip normals whose `z` is negative so every foreground normal faces the
    /// camera. Disable to keep the winding-defined orientation.
    pub face_camera: bool,
    /// Vertical rotation axis for non-frontal views; `None` uses the mesh centroid.
    pub pivot: Option<Vec3>,
}

impl RenderOptions {
    pub fn with_pivot(self, pivot: Vec3) -> Self {
        RenderOptions {
            pivot: Some(pivot),
            ..self
        }
    }

    fn view(&self, mesh: &MeshGraph, angle: ViewAngle) -> MeshGraph {
        rotate_view_about(mesh, angle, self.pivot.unwrap_or_else(|| mesh.centroid()))
    }
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            face_camera: true,
            pivot: None,
        }
    }
}

/// Lexicographic ordering of the endpoints makes `orient(a, b, p)` exactly
/// `-orient(b, a, p)`, so shared edges split pixels without gaps or overlaps.
fn orient(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    if (a[0], a[1]) > (b[0], b[1]) {
        return -orient(b, a, p);
    }
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Top-left style tie break: an edge owns the pixels lying exactly on it when
/// it runs "downward", or horizontally leftward.
fn owns_boundary(a: [f64; 2], b: [f64; 2]) -> bool {
    let dy = b[1] - a[1];
    dy > 0.0 || (dy == 0.0 && b[0] < a[0])
}

struct Fragment {
    face: usize,
    depth: f64,
}

/// Scan-converts every face; `visit` sees each covered pixel with the face
/// index and the interpolated camera-space `z`.
fn scan(mesh: &MeshGraph, cam: &CameraWP, mut visit: impl FnMut(usize, Fragment)) -> Result<()> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    cam.validate()?;
    let (w, h) = (cam.width, cam.height);
    let proj: Vec<[f64; 2]> = mesh.vertices().iter().map(|v| cam.project(v)).collect();
    let verts = mesh.vertices();
    for (fi, &[i0, i1, i2]) in mesh.faces().iter().enumerate() {
        let (mut p, mut z) = ([proj[i0], proj[i1], proj[i2]], [verts[i0].z, verts[i1].z, verts[i2].z]);
        let mut area = orient(p[0], p[1], p[2]);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        if area < 0.0 {
            p.swap(1, 2);
            z.swap(1, 2);
            area = -area;
        }
        let min_x = p.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min);
        let max_x = p.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max);
        let min_y = p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min);
        let max_y = p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max);
        // pixel centers c = i + 0.5 inside [min, max]
        let x0 = (min_x - 0.5).ceil().max(0.0) as usize;
        let y0 = (min_y - 0.5).ceil().max(0.0) as usize;
        let x1 = (max_x - 0.5).floor();
        let y1 = (max_y - 0.5).floor();
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        let x1 = (x1 as usize).min(w.saturating_sub(1));
        let y1 = (y1 as usize).min(h.saturating_sub(1));
        // edge k is opposite vertex k
        let edges = [(p[1], p[2]), (p[2], p[0]), (p[0], p[1])];
        let owns = edges.map(|(a, b)| owns_boundary(a, b));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let c = [x as f64 + 0.5, y as f64 + 0.5];
                let mut bary = [0.0; 3];
                let mut inside = true;
                for k in 0..3 {
                    let e = orient(edges[k].0, edges[k].1, c);
                    if e < 0.0 || (e == 0.0 && !owns[k]) {
                        inside = false;
                        break;
                    }
                    bary[k] = e;
                }
                if !inside {
                    continue;
                }
                let depth = (bary[0] * z[0] + bary[1] * z[1] + bary[2] * z[2]) / area;
                visit(y * w + x, Fragment { face: fi, depth });
            }
        }
    }
    Ok(())
}

/// Nearest face per pixel (largest camera-space `z`), ties keep the lower face index.
fn zbuffer(mesh: &MeshGraph, cam: &CameraWP) -> Result<Vec<Option<(usize, f64)>>> {
    let mut buf: Vec<Option<(usize, f64)>> = vec![None; cam.width * cam.height];
    scan(mesh, cam, |px, frag| match buf[px] {
        Some((_, z)) if z >= frag.depth => {}
        _ => buf[px] = Some((frag.face, frag.depth)),
    })?;
    Ok(buf)
}

pub fn rasterize_silhouette(mesh: &MeshGraph, cam: &CameraWP) -> Result<BinaryMask> {
    let mut mask = BinaryMask::new(cam.width, cam.height, ViewAngle::FRONT);
    scan(mesh, cam, |px, _| mask.data[px] = 1)?;
    Ok(mask)
}

/// Silhouette after yawing the mesh by `angle` about its centroid.
pub fn rasterize_silhouette_view(mesh: &MeshGraph, angle: ViewAngle, cam: &CameraWP) -> Result<BinaryMask> {
    render_silhouette(mesh, angle, cam, RenderOptions::default())
}

/// Silhouette after yawing the mesh by `angle` about the pivot in `opts`.
pub fn render_silhouette(mesh: &MeshGraph, angle: ViewAngle, cam: &CameraWP, opts: RenderOptions) -> Result<BinaryMask> {
    let mut mask = rasterize_silhouette(&opts.view(mesh, angle), cam)?;
    mask.angle = angle;
    Ok(mask)
}

pub fn rasterize_normal_map(mesh: &MeshGraph, angle: ViewAngle, cam: &CameraWP) -> Result<NormalMap> {
    render_normals(mesh, angle, cam, RenderOptions::default())
}

/// Flat-shaded normal map of the nearest face at every covered pixel.
pub fn render_normals(
    mesh: &MeshGraph,
    angle: ViewAngle,
    cam: &CameraWP,
    opts: RenderOptions,
) -> Result<NormalMap> {
    let view = opts.view(mesh, angle);
    let buf = zbuffer(&view, cam)?;
    let face_normals: Vec<Vec3> = crate::mesh::face_normals_raw(&view)
        .into_iter()
        .map(|n| {
            let n = n.normalize();
            if opts.face_camera && n.z < 0.0 {
                -n
            } else {
                n
            }
        })
        .collect();
    let mut mask = BinaryMask::new(cam.width, cam.height, angle);
    let normals = buf
        .iter()
        .enumerate()
        .map(|(px, hit)| match hit {
            Some((f, _)) => {
                mask.data[px] = 1;
                face_normals[*f]
            }
            None => Vec3::zeros(),
        })
        .collect();
    Ok(NormalMap {
        width: cam.width,
        height: cam.height,
        normals,
        mask,
    })
}

/// Z-buffer of the nearest surface after yawing by `angle`.
pub fn rasterize_depth(mesh: &MeshGraph, angle: ViewAngle, cam: &CameraWP) -> Result<DepthMap> {
    let view = RenderOptions::default().view(mesh, angle);
    let buf = zbuffer(&view, cam)?;
    let mut mask = BinaryMask::new(cam.width, cam.height, angle);
    let depth = buf
        .iter()
        .enumerate()
        .map(|(px, hit)| match hit {
            Some((_, z)) => {
                mask.data[px] = 1;
                *z
            }
            None => 0.0,
        })
        .collect();
    Ok(DepthMap {
        width: cam.width,
        height: cam.height,
        depth,
        mask,
    })
}

/// Number of pixels where the two masks differ.
pub fn mask_abs_difference_area(a: &BinaryMask, b: &BinaryMask) -> Result<usize> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Shape(format!(
            "mask resolutions differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(a.data.iter().zip(&b.data).filter(|(x, y)| x != y).count())
}
