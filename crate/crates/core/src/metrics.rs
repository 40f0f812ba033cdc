//! Evaluation metrics: joint and vertex errors, Procrustes alignment, sampled
//! surface distances and four-view normal-map consistency.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::losses::JointRegressor;
use crate::mesh::MeshGraph;
use crate::raster::{render_normals, CameraWP, RenderOptions, ViewAngle};
use crate::{Error, Result, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityTransform {
    pub rotation: Matrix3<f64>,
    pub scale: f64,
    pub translation: Vec3,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            rotation: Matrix3::identity(),
            scale: 1.0,
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p * self.scale + self.translation
    }
}

fn check_pairs(a: &[Vec3], b: &[Vec3], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{what}: {} vs {} points", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument(format!("{what}: no points")));
    }
    Ok(())
}

fn mean_distance(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).norm()).sum::<f64>() / a.len() as f64
}

/// Mean Euclidean distance between corresponding joints.
pub fn mpjpe(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    check_pairs(pred, gt, "mpjpe")?;
    Ok(mean_distance(pred, gt))
}

/// Mean Euclidean distance between corresponding vertices.
pub fn mvpe(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    check_pairs(pred, gt, "mvpe")?;
    Ok(mean_distance(pred, gt))
}

fn mean(points: &[Vec3]) -> Vec3 {
    points.iter().sum::<Vec3>() / points.len() as f64
}

/// Least-squares similarity transform taking `x` onto `y`.
pub fn procrustes_align(x: &[Vec3], y: &[Vec3]) -> Result<SimilarityTransform> {
    check_pairs(x, y, "procrustes")?;
    if x.len() < 3 {
        return Err(Error::RankDeficient(format!("{} points cannot fix a rotation", x.len())));
    }
    let (mx, my) = (mean(x), mean(y));
    let mut cov = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    let mut norm_x = 0.0;
    for (p, q) in x.iter().zip(y) {
        let (p0, q0) = (p - mx, q - my);
        cov += p0 * q0.transpose();
        spread += p0 * p0.transpose();
        norm_x += p0.norm_squared();
    }
    let sx = spread.symmetric_eigenvalues();
    let mut sx: Vec<f64> = sx.iter().copied().collect();
    sx.sort_by(|a, b| b.total_cmp(a));
    if !(sx[0] > 0.0) || sx[1] <= 1e-12 * sx[0] {
        return Err(Error::RankDeficient("source points are collinear or coincident".into()));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[1] <= 1e-12 * sv[0].max(f64::MIN_POSITIVE) {
        return Err(Error::RankDeficient("cross-covariance has rank below 2".into()));
    }
    let v = v_t.transpose();
    // nalgebra leaves singular values unsorted, so a reflection fix flips the
    // axis of the smallest one
    let mut diag = Vec3::new(1.0, 1.0, 1.0);
    if (v * u.transpose()).determinant() < 0.0 {
        let smallest = (0..3)
            .min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))
            .unwrap_or(2);
        diag[smallest] = -1.0;
    }
    let rotation = v * Matrix3::from_diagonal(&diag) * u.transpose();
    let scale = svd.singular_values.component_mul(&diag).sum() / norm_x;
    Ok(SimilarityTransform {
        rotation,
        scale,
        translation: my - rotation * mx * scale,
    })
}

/// MPJPE after Procrustes-aligning the prediction to the ground truth.
pub fn pa_mpjpe(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    let t = procrustes_align(pred, gt)?;
    let aligned: Vec<Vec3> = pred.iter().map(|p| t.apply(p)).collect();
    mpjpe(&aligned, gt)
}

/// Closest point on triangle `abc` to `p`.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Triangles with bounding spheres for pruned nearest-surface queries.
struct TriangleSet {
    tris: Vec<[Vec3; 3]>,
    centers: Vec<Vec3>,
    radii: Vec<f64>,
}

impl TriangleSet {
    fn new(mesh: &MeshGraph) -> Self {
        let tris: Vec<[Vec3; 3]> = mesh.faces().iter().map(|f| f.map(|i| mesh.vertices()[i])).collect();
        let centers: Vec<Vec3> = tris.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let radii = tris
            .iter()
            .zip(&centers)
            .map(|(t, c)| t.iter().map(|v| (v - c).norm()).fold(0.0, f64::max))
            .collect();
        TriangleSet { tris, centers, radii }
    }

    fn distance(&self, p: &Vec3) -> f64 {
        let start = (0..self.tris.len())
            .min_by(|&a, &b| (p - self.centers[a]).norm_squared().total_cmp(&(p - self.centers[b]).norm_squared()))
            .unwrap_or(0);
        let exact = |i: usize| {
            let [a, b, c] = &self.tris[i];
            (p - closest_point_on_triangle(p, a, b, c)).norm()
        };
        let mut best = exact(start);
        for i in 0..self.tris.len() {
            let reach = best + self.radii[i];
            if (p - self.centers[i]).norm_squared() >= reach * reach {
                continue;
            }
            best = best.min(exact(i));
        }
        best
    }
}

/// Faces rotated so the smallest index leads (winding kept), then sorted, so
/// sampling does not depend on face order.
fn canonical_faces(mesh: &MeshGraph) -> Vec<[usize; 3]> {
    let mut faces: Vec<[usize; 3]> = mesh
        .faces()
        .iter()
        .map(|&[a, b, c]| {
            if a <= b && a <= c {
                [a, b, c]
            } else if b <= a && b <= c {
                [b, c, a]
            } else {
                [c, a, b]
            }
        })
        .collect();
    faces.sort_unstable();
    faces
}

/// `n` area-uniform surface samples, deterministic in `seed`.
pub fn sample_surface(mesh: &MeshGraph, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let faces = canonical_faces(mesh);
    let v = mesh.vertices();
    let mut cdf = Vec::with_capacity(faces.len());
    let mut total = 0.0;
    for f in &faces {
        total += 0.5 * (v[f[1]] - v[f[0]]).cross(&(v[f[2]] - v[f[0]])).norm();
        cdf.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("mesh has zero surface area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let t = rng.random::<f64>() * total;
            let k = cdf.partition_point(|&c| c <= t).min(faces.len() - 1);
            let (r1, r2): (f64, f64) = (rng.random(), rng.random());
            let s = r1.sqrt();
            let [a, b, c] = faces[k].map(|i| v[i]);
            a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
        })
        .collect())
}

/// Sampled surface distances in model units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDistances {
    /// Mean of the two directed terms.
    pub chamfer: f64,
    /// Ground-truth samples to the reconstructed surface.
    pub p2s: f64,
    /// Reconstruction samples to the ground-truth surface.
    pub s2p: f64,
}

fn directed_distance(from: &MeshGraph, to: &MeshGraph, n: usize, seed: u64) -> Result<f64> {
    if to.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let samples = sample_surface(from, n, seed)?;
    let tris = TriangleSet::new(to);
    Ok(samples.iter().map(|p| tris.distance(p)).sum::<f64>() / n as f64)
}

pub fn surface_distances(recon: &MeshGraph, gt: &MeshGraph, n_samples: usize, seed: u64) -> Result<SurfaceDistances> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be positive".into()));
    }
    let p2s = directed_distance(gt, recon, n_samples, seed)?;
    let s2p = directed_distance(recon, gt, n_samples, seed)?;
    Ok(SurfaceDistances {
        chamfer: 0.5 * (p2s + s2p),
        p2s,
        s2p,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalMetrics {
    /// Mean `1 - cos` between rendered normals.
    pub cos: f64,
    /// Mean Euclidean distance between rendered normals.
    pub l2: f64,
    /// Views with a nonempty foreground union.
    pub views: usize,
}

/// Four-view normal-map comparison over the union of both foregrounds;
/// background pixels count as the zero vector. Both meshes yaw about the pivot
/// in `opts`, or the ground-truth centroid when unset.
pub fn normal_map_metrics(recon: &MeshGraph, gt: &MeshGraph, cam: &CameraWP, opts: RenderOptions) -> Result<NormalMetrics> {
    cam.validate()?;
    let opts = RenderOptions {
        pivot: Some(opts.pivot.unwrap_or_else(|| gt.centroid())),
        ..opts
    };
    let (mut cos, mut l2, mut views) = (0.0, 0.0, 0);
    for angle in ViewAngle::CANONICAL {
        let a = render_normals(recon, angle, cam, opts)?;
        let b = render_normals(gt, angle, cam, opts)?;
        let (mut c, mut e, mut n) = (0.0, 0.0, 0usize);
        for px in 0..a.normals.len() {
            if a.mask.data[px] == 0 && b.mask.data[px] == 0 {
                continue;
            }
            let (p, q) = (a.normals[px], b.normals[px]);
            c += 1.0 - p.dot(&q);
            e += (p - q).norm();
            n += 1;
        }
        if n > 0 {
            cos += c / n as f64;
            l2 += e / n as f64;
            views += 1;
        }
    }
    if views == 0 {
        return Err(Error::InvalidArgument("neither mesh is visible in any view".into()));
    }
    Ok(NormalMetrics {
        cos: cos / views as f64,
        l2: l2 / views as f64,
        views,
    })
}

/// Square camera framing `mesh` at `resolution`, leaving a margin in every yaw view.
pub fn framing_camera(mesh: &MeshGraph, resolution: usize) -> Result<CameraWP> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let c = mesh.centroid();
    let reach = mesh
        .vertices()
        .iter()
        .map(|v| {
            let d = v - c;
            (d.x * d.x + d.z * d.z).sqrt().max(d.y.abs())
        })
        .fold(0.0, f64::max);
    if !(reach > 0.0) {
        return Err(Error::InvalidArgument("mesh has no extent".into()));
    }
    let s = 0.9 / reach;
    CameraWP::new(s, -s * c.x, -s * c.y, resolution, resolution)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    /// Surface samples per direction.
    pub n_samples: usize,
    pub seed: u64,
    /// Square normal-map resolution.
    pub resolution: usize,
    /// Length of one model unit in meters; joint/vertex errors are reported in
    /// millimeters and surface distances in centimeters.
    pub unit_meters: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            n_samples: 10_000,
            seed: 0,
            resolution: 512,
            unit_meters: 1.0,
        }
    }
}

/// Full evaluation of one reconstruction against its ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mpjpe_mm: Option<f64>,
    pub pa_mpjpe_mm: Option<f64>,
    pub mvpe_mm: Option<f64>,
    pub chamfer_cm: f64,
    pub p2s_cm: f64,
    pub s2p_cm: f64,
    pub normal_cos: f64,
    pub normal_l2: f64,
    /// Reasons for omitted metrics.
    pub notes: Vec<String>,
    pub config: MetricConfig,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "mpjpe_mm,pa_mpjpe_mm,mvpe_mm,chamfer_cm,p2s_cm,s2p_cm,normal_cos,normal_l2";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        format!(
            "{},{},{},{},{},{},{},{}",
            opt(self.mpjpe_mm),
            opt(self.pa_mpjpe_mm),
            opt(self.mvpe_mm),
            self.chamfer_cm,
            self.p2s_cm,
            self.s2p_cm,
            self.normal_cos,
            self.normal_l2
        )
    }

    /// Fixed-width table for terminals.
    pub fn table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.6}"));
        let rows = [
            ("MPJPE (mm)", opt(self.mpjpe_mm)),
            ("PA-MPJPE (mm)", opt(self.pa_mpjpe_mm)),
            ("MVPE (mm)", opt(self.mvpe_mm)),
            ("Chamfer (cm)", format!("{:.6}", self.chamfer_cm)),
            ("P2S (cm)", format!("{:.6}", self.p2s_cm)),
            ("S2P (cm)", format!("{:.6}", self.s2p_cm)),
            ("Normal cos", format!("{:.6}", self.normal_cos)),
            ("Normal L2", format!("{:.6}", self.normal_l2)),
        ];
        let mut out = String::new();
        for (name, value) in rows {
            out.push_str(&format!("{name:<16}{value:>16}\n"));
        }
        for n in &self.notes {
            out.push_str(&format!("note: {n}\n"));
        }
        out
    }
}

pub fn evaluate_pair(
    recon: &MeshGraph,
    gt: &MeshGraph,
    regressor: Option<&JointRegressor>,
    cfg: &MetricConfig,
) -> Result<MetricReport> {
    evaluate_pair_with_joints(recon, gt, regressor, None, cfg)
}

/// As [`evaluate_pair`], with explicit ground-truth joints instead of
/// regressing them from `gt`.
pub fn evaluate_pair_with_joints(
    recon: &MeshGraph,
    gt: &MeshGraph,
    regressor: Option<&JointRegressor>,
    gt_joints: Option<&[Vec3]>,
    cfg: &MetricConfig,
) -> Result<MetricReport> {
    if !(cfg.unit_meters > 0.0 && cfg.unit_meters.is_finite()) {
        return Err(Error::InvalidArgument("unit_meters must be positive".into()));
    }
    let mm = 1000.0 * cfg.unit_meters;
    let cm = 100.0 * cfg.unit_meters;
    let mut notes = Vec::new();
    let (mut mpjpe_mm, mut pa_mpjpe_mm) = (None, None);
    match regressor {
        Some(j) => {
            let pred = j.apply(recon.vertices())?;
            let target = match gt_joints {
                Some(t) => t.to_vec(),
                None => j.apply(gt.vertices())?,
            };
            mpjpe_mm = Some(mpjpe(&pred, &target)? * mm);
            match pa_mpjpe(&pred, &target) {
                Ok(v) => pa_mpjpe_mm = Some(v * mm),
                Err(e) => notes.push(format!("pa_mpjpe omitted: {e}")),
            }
        }
        None => notes.push("joint metrics omitted: no joint regressor supplied".into()),
    }
    let mvpe_mm = if recon.num_vertices() == gt.num_vertices() {
        Some(mvpe(recon.vertices(), gt.vertices())? * mm)
    } else {
        notes.push(format!(
            "mvpe omitted: vertex counts differ ({} vs {})",
            recon.num_vertices(),
            gt.num_vertices()
        ));
        None
    };
    let sd = surface_distances(recon, gt, cfg.n_samples, cfg.seed)?;
    let cam = framing_camera(gt, cfg.resolution)?;
    let nm = normal_map_metrics(recon, gt, &cam, RenderOptions::default())?;
    Ok(MetricReport {
        mpjpe_mm,
        pa_mpjpe_mm,
        mvpe_mm,
        chamfer_cm: sd.chamfer * cm,
        p2s_cm: sd.p2s * cm,
        s2p_cm: sd.s2p * cm,
        normal_cos: nm.cos,
        normal_l2: nm.l2,
        notes,
        config: cfg.clone(),
    })
}
