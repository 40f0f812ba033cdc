//! Training losses: body-mesh supervision, clothed-surface supervision and the
//! two feedback terms that couple the branches.
//!
//! Every differentiable term has a `*_with_grad` variant returning the gradient
//! with respect to the predicted vertex positions.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mesh::{vertex_normals, vertex_normals_backward, MeshGraph};
use crate::raster::{mask_abs_difference_area, render_silhouette, CameraWP, RenderOptions, ViewAngle};
use crate::{Error, Result, Vec3};

/// Sparse row-stochastic map from mesh vertices to joints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointRegressor {
    num_vertices: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl JointRegressor {
    pub fn new(num_vertices: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("joint regressor needs at least one joint".into()));
        }
        for (k, row) in rows.iter().enumerate() {
            let mut sum = 0.0;
            for &(i, w) in row {
                if i >= num_vertices {
                    return Err(Error::InvalidArgument(format!(
                        "joint {k} references vertex {i} of {num_vertices}"
                    )));
                }
                if !(w >= 0.0 && w.is_finite()) {
                    return Err(Error::InvalidArgument(format!("joint {k} has weight {w}")));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("joint {k} weights sum to {sum}, not 1")));
            }
        }
        Ok(JointRegressor { num_vertices, rows })
    }

    /// `k` joints, each the mean of one vertex cluster. Cluster centers are
    /// picked by farthest-point sampling from a seeded start vertex, then
    /// every vertex joins its nearest center.
    pub fn clusters(vertices: &[Vec3], k: usize, seed: u64) -> Result<Self> {
        if k == 0 || k > vertices.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot form {k} clusters from {} vertices",
                vertices.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut centers = vec![rng.random_range(0..vertices.len())];
        let mut dist: Vec<f64> = vertices.iter().map(|v| (v - vertices[centers[0]]).norm()).collect();
        while centers.len() < k {
            let far = argmax(&dist);
            centers.push(far);
            for (d, v) in dist.iter_mut().zip(vertices) {
                *d = d.min((v - vertices[far]).norm());
            }
        }
        let mut members = vec![Vec::new(); k];
        for (i, v) in vertices.iter().enumerate() {
            let nearest = (0..k)
                .min_by(|&a, &b| {
                    (v - vertices[centers[a]])
                        .norm()
                        .total_cmp(&(v - vertices[centers[b]]).norm())
                })
                .unwrap_or(0);
            members[nearest].push(i);
        }
        let rows = members
            .into_iter()
            .map(|m| {
                let w = 1.0 / m.len() as f64;
                m.into_iter().map(|i| (i, w)).collect()
            })
            .collect();
        JointRegressor::new(vertices.len(), rows)
    }

    pub fn num_joints(&self) -> usize {
        self.rows.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn apply(&self, vertices: &[Vec3]) -> Result<Vec<Vec3>> {
        if vertices.len() != self.num_vertices {
            return Err(Error::Shape(format!(
                "regressor expects {} vertices, got {}",
                self.num_vertices,
                vertices.len()
            )));
        }
        Ok(self
            .rows
            .iter()
            .map(|row| row.iter().map(|&(i, w)| vertices[i] * w).sum())
            .collect())
    }

    pub fn apply_transpose(&self, joint_grads: &[Vec3]) -> Vec<Vec3> {
        let mut out = vec![Vec3::zeros(); self.num_vertices];
        for (row, g) in self.rows.iter().zip(joint_grads) {
            for &(i, w) in row {
                out[i] += g * w;
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("regressor serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: JointRegressor = serde_json::from_str(text)?;
        JointRegressor::new(raw.num_vertices, raw.rows)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Weights of every loss term. All must be non-negative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the trace feedback term.
    pub lambda_trace: f64,
    /// Weight of the clothing-area feedback term.
    pub lambda_cloth: f64,
    pub clamp_trace: bool,
    /// Also backpropagate the trace term into the reconstruction driven by the
    /// ground-truth body. Its negative sign then rewards degrading that
    /// reconstruction, which is unbounded below unless `clamp_trace` is set.
    pub trace_reference_gradient: bool,
    /// Square render resolution for the clothing-area silhouettes.
    pub silhouette_resolution: usize,
    pub w_vertex: f64,
    pub w_joint: f64,
    pub w_chamfer_body: f64,
    pub w_chamfer_surface: f64,
    pub w_normal: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_trace: 1.0,
            lambda_cloth: 1.0,
            clamp_trace: false,
            trace_reference_gradient: false,
            silhouette_resolution: 128,
            w_vertex: 1.0,
            w_joint: 1.0,
            w_chamfer_body: 1.0,
            w_chamfer_surface: 1.0,
            w_normal: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("lambda_trace", self.lambda_trace),
            ("lambda_cloth", self.lambda_cloth),
            ("w_vertex", self.w_vertex),
            ("w_joint", self.w_joint),
            ("w_chamfer_body", self.w_chamfer_body),
            ("w_chamfer_surface", self.w_chamfer_surface),
            ("w_normal", self.w_normal),
        ];
        for (name, w) in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("losses.{name} must be a non-negative number, got {w}")));
            }
        }
        if self.silhouette_resolution < CameraWP::MIN_RESOLUTION {
            return Err(Error::Config(format!(
                "losses.silhouette_resolution must be at least {}",
                CameraWP::MIN_RESOLUTION
            )));
        }
        Ok(())
    }
}

/// Named loss values of one evaluation. Unused terms stay zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub lv: f64,
    pub lj: f64,
    pub lcd1: f64,
    pub lcd2: f64,
    pub ln: f64,
    pub ltrace: f64,
    pub lcloth: f64,
    pub mesh_total: f64,
    pub surface_total: f64,
    pub collab_total: f64,
    pub total: f64,
}

impl LossReport {
    pub const CSV_COLUMNS: [&'static str; 9] = ["lv", "lj", "lcd1", "lcd2", "ln", "ltrace", "lcloth", "total", "mesh_total"];

    /// Combines partial reports into the full objective.
    pub fn combine(mesh: &LossReport, surface: &LossReport, trace: f64, cloth: f64, cfg: &LossConfig) -> LossReport {
        let collab = loss_collab(trace, cloth, cfg);
        LossReport {
            lv: mesh.lv,
            lj: mesh.lj,
            lcd1: mesh.lcd1,
            lcd2: surface.lcd2,
            ln: surface.ln,
            ltrace: trace,
            lcloth: cloth,
            mesh_total: mesh.mesh_total,
            surface_total: surface.surface_total,
            collab_total: collab,
            total: mesh.mesh_total + surface.surface_total + collab,
        }
    }

    pub fn named(&self) -> [(&'static str, f64); 11] {
        [
            ("lv", self.lv),
            ("lj", self.lj),
            ("lcd1", self.lcd1),
            ("lcd2", self.lcd2),
            ("ln", self.ln),
            ("ltrace", self.ltrace),
            ("lcloth", self.lcloth),
            ("mesh_total", self.mesh_total),
            ("surface_total", self.surface_total),
            ("collab_total", self.collab_total),
            ("total", self.total),
        ]
    }

    /// Name of the first non-finite term, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.named().into_iter().find(|(_, v)| !v.is_finite()).map(|(n, _)| n)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("loss report serializes")
    }
}

fn check_nonempty(points: &[Vec3], what: &str) -> Result<()> {
    if points.is_empty() {
        return Err(Error::InvalidArgument(format!("{what} point set is empty")));
    }
    Ok(())
}

fn check_counts(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: {a} predicted vs {b} target")));
    }
    Ok(())
}

/// Index of the nearest point of `set` to `p`; ties go to the lower index.
fn nearest(p: &Vec3, set: &[Vec3]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, q) in set.iter().enumerate() {
        let d = (p - q).norm_squared();
        if d < best.1 {
            best = (j, d);
        }
    }
    (best.0, best.1.sqrt())
}

/// Symmetric chamfer distance: half the sum of the two directed mean
/// nearest-neighbour distances (unsquared).
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    Ok(chamfer_with_grad(a, b)?.0)
}

/// Chamfer distance with gradients for both point sets. Coincident nearest
/// pairs contribute a zero subgradient.
pub fn chamfer_with_grad(a: &[Vec3], b: &[Vec3]) -> Result<(f64, Vec<Vec3>, Vec<Vec3>)> {
    check_nonempty(a, "first")?;
    check_nonempty(b, "second")?;
    let mut ga = vec![Vec3::zeros(); a.len()];
    let mut gb = vec![Vec3::zeros(); b.len()];
    let directed = |from: &[Vec3], to: &[Vec3], gf: &mut [Vec3], gt: &mut [Vec3]| {
        let w = 0.5 / from.len() as f64;
        let mut sum = 0.0;
        for (i, p) in from.iter().enumerate() {
            let (j, d) = nearest(p, to);
            sum += d;
            if d > 0.0 {
                let g = (p - to[j]) * (w / d);
                gf[i] += g;
                gt[j] -= g;
            }
        }
        sum * w
    };
    let ab = directed(a, b, &mut ga, &mut gb);
    let ba = directed(b, a, &mut gb, &mut ga);
    Ok((ab + ba, ga, gb))
}

/// Mean over vertices of the per-vertex L1 distance.
pub fn vertex_loss(pred: &[Vec3], target: &[Vec3]) -> Result<f64> {
    Ok(vertex_loss_with_grad(pred, target)?.0)
}

pub fn vertex_loss_with_grad(pred: &[Vec3], target: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
    check_counts(pred.len(), target.len(), "vertex loss")?;
    check_nonempty(pred, "vertex")?;
    let n = pred.len() as f64;
    let mut sum = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            sum += d.abs().sum();
            d.map(|x| if x > 0.0 { 1.0 / n } else if x < 0.0 { -1.0 / n } else { 0.0 })
        })
        .collect();
    Ok((sum / n, grad))
}

/// Mean over joints of the Euclidean distance between regressed and target joints.
pub fn joint_loss(pred: &[Vec3], regressor: &JointRegressor, joints: &[Vec3]) -> Result<f64> {
    Ok(joint_loss_with_grad(pred, regressor, joints)?.0)
}

pub fn joint_loss_with_grad(pred: &[Vec3], regressor: &JointRegressor, joints: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
    check_counts(regressor.num_joints(), joints.len(), "joint loss")?;
    let regressed = regressor.apply(pred)?;
    let k = joints.len() as f64;
    let mut sum = 0.0;
    let jg: Vec<Vec3> = regressed
        .iter()
        .zip(joints)
        .map(|(p, t)| {
            let d = p - t;
            let n = d.norm();
            sum += n;
            if n > 0.0 {
                d / (n * k)
            } else {
                Vec3::zeros()
            }
        })
        .collect();
    Ok((sum / k, regressor.apply_transpose(&jg)))
}

/// Mean `1 - cos` between each predicted vertex normal and the normal of its
/// nearest target vertex. The correspondence is treated as constant.
pub fn normal_loss(pred: &MeshGraph, target: &MeshGraph) -> Result<f64> {
    Ok(normal_loss_with_grad(pred, target)?.0)
}

pub fn normal_loss_with_grad(pred: &MeshGraph, target: &MeshGraph) -> Result<(f64, Vec<Vec3>)> {
    if pred.is_empty() || target.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let np = vertex_normals(pred)?;
    let nt = vertex_normals(target)?;
    let n = pred.num_vertices() as f64;
    let mut sum = 0.0;
    let grad_normals: Vec<Vec3> = pred
        .vertices()
        .iter()
        .zip(&np)
        .map(|(v, nv)| {
            let (j, _) = nearest(v, target.vertices());
            sum += 1.0 - nv.dot(&nt[j]);
            -nt[j] / n
        })
        .collect();
    let grad = vertex_normals_backward(pred, &grad_normals)?;
    Ok((sum / n, grad))
}

/// Body-mesh objective: vertex, joint and chamfer terms.
pub fn loss_mesh(
    pred: &MeshGraph,
    target: &MeshGraph,
    regressor: &JointRegressor,
    joints: &[Vec3],
    cfg: &LossConfig,
) -> Result<LossReport> {
    Ok(loss_mesh_with_grad(pred, target, regressor, joints, cfg)?.0)
}

pub fn loss_mesh_with_grad(
    pred: &MeshGraph,
    target: &MeshGraph,
    regressor: &JointRegressor,
    joints: &[Vec3],
    cfg: &LossConfig,
) -> Result<(LossReport, Vec<Vec3>)> {
    let (lv, gv) = vertex_loss_with_grad(pred.vertices(), target.vertices())?;
    let (lj, gj) = joint_loss_with_grad(pred.vertices(), regressor, joints)?;
    let (lcd, gc, _) = chamfer_with_grad(pred.vertices(), target.vertices())?;
    let grad = (0..pred.num_vertices())
        .map(|i| gv[i] * cfg.w_vertex + gj[i] * cfg.w_joint + gc[i] * cfg.w_chamfer_body)
        .collect();
    let total = cfg.w_vertex * lv + cfg.w_joint * lj + cfg.w_chamfer_body * lcd;
    let report = LossReport {
        lv,
        lj,
        lcd1: lcd,
        mesh_total: total,
        total,
        ..LossReport::default()
    };
    Ok((report, grad))
}

/// Clothed-surface objective: chamfer and normal consistency.
pub fn loss_surface(pred: &MeshGraph, target: &MeshGraph, cfg: &LossConfig) -> Result<LossReport> {
    Ok(loss_surface_with_grad(pred, target, cfg)?.0)
}

pub fn loss_surface_with_grad(pred: &MeshGraph, target: &MeshGraph, cfg: &LossConfig) -> Result<(LossReport, Vec<Vec3>)> {
    let (lcd, gc, _) = chamfer_with_grad(pred.vertices(), target.vertices())?;
    let (ln, gn) = normal_loss_with_grad(pred, target)?;
    let grad = gc
        .iter()
        .zip(&gn)
        .map(|(c, n)| c * cfg.w_chamfer_surface + n * cfg.w_normal)
        .collect();
    let total = cfg.w_chamfer_surface * lcd + cfg.w_normal * ln;
    let report = LossReport {
        lcd2: lcd,
        ln,
        surface_total: total,
        total,
        ..LossReport::default()
    };
    Ok((report, grad))
}

/// Surface loss of the prediction minus the surface loss reached when the
/// ground-truth body drives the reconstruction branch.
pub fn loss_trace(pred: &MeshGraph, pred_from_gt: &MeshGraph, target: &MeshGraph, cfg: &LossConfig) -> Result<f64> {
    Ok(loss_trace_with_grad(pred, pred_from_gt, target, cfg)?.0)
}

/// Returns the value and the gradients with respect to `pred` and `pred_from_gt`.
pub fn loss_trace_with_grad(
    pred: &MeshGraph,
    pred_from_gt: &MeshGraph,
    target: &MeshGraph,
    cfg: &LossConfig,
) -> Result<(f64, Vec<Vec3>, Vec<Vec3>)> {
    let (a, ga) = loss_surface_with_grad(pred, target, cfg)?;
    let (b, gb) = loss_surface_with_grad(pred_from_gt, target, cfg)?;
    let value = a.surface_total - b.surface_total;
    if cfg.clamp_trace && value < 0.0 {
        return Ok((0.0, vec![Vec3::zeros(); ga.len()], vec![Vec3::zeros(); gb.len()]));
    }
    Ok((value, ga, gb.into_iter().map(|g| -g).collect()))
}

/// Normalized pixel area between the clothed and body silhouettes summed over
/// the four canonical views. Both meshes yaw about the body centroid.
pub fn clothing_area(clothed: &MeshGraph, body: &MeshGraph, cam: &CameraWP) -> Result<f64> {
    let opts = RenderOptions::default().with_pivot(body.centroid());
    let mut pixels = 0;
    for angle in ViewAngle::CANONICAL {
        let a = render_silhouette(clothed, angle, cam, opts)?;
        let b = render_silhouette(body, angle, cam, opts)?;
        pixels += mask_abs_difference_area(&a, &b)?;
    }
    Ok(pixels as f64 / (cam.width * cam.height) as f64)
}

/// Absolute difference between predicted and ground-truth clothing area.
///
/// Predicted meshes render with `pred_cam`, ground-truth meshes with `gt_cam`;
/// both are resampled to the configured silhouette resolution. The value is
/// piecewise constant in the vertex positions, so its gradient is zero.
pub fn loss_cloth(
    pred_clothed: &MeshGraph,
    pred_body: &MeshGraph,
    gt_clothed: &MeshGraph,
    gt_body: &MeshGraph,
    pred_cam: &CameraWP,
    gt_cam: &CameraWP,
    cfg: &LossConfig,
) -> Result<f64> {
    let r = cfg.silhouette_resolution;
    let pred = clothing_area(pred_clothed, pred_body, &pred_cam.with_resolution(r, r))?;
    let gt = clothing_area(gt_clothed, gt_body, &gt_cam.with_resolution(r, r))?;
    Ok((pred - gt).abs())
}

pub fn loss_collab(trace: f64, cloth: f64, cfg: &LossConfig) -> f64 {
    cfg.lambda_trace * trace + cfg.lambda_cloth * cloth
}
