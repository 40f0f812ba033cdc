use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encode::{Channel, ImageStack};
use crate::losses::JointRegressor;
use crate::mesh::{make_icosphere, vertex_normals, MeshGraph, MeshRole};
use crate::nn::Grid;
use crate::raster::{rasterize_depth, rasterize_normal_map, CameraWP, ViewAngle};
use crate::{Error, Result, Vec3};

/// Synthetic dataset parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub seed: u64,
    /// Training samples; one extra sample is generated for held-out evaluation.
    pub num_samples: usize,
    /// Square image resolution.
    pub resolution: usize,
    pub num_joints: usize,
    pub min_offset: f64,
    pub max_offset: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            seed: 0,
            num_samples: 4,
            resolution: 64,
            num_joints: 8,
            min_offset: 0.02,
            max_offset: 0.15,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(Error::Config("data.num_samples must be at least 1".into()));
        }
        if self.resolution < CameraWP::MIN_RESOLUTION {
            return Err(Error::Config(format!("data.resolution must be at least {}", CameraWP::MIN_RESOLUTION)));
        }
        if self.num_joints == 0 {
            return Err(Error::Config("data.num_joints must be at least 1".into()));
        }
        if !(self.min_offset > 0.0 && self.min_offset <= self.max_offset && self.max_offset.is_finite()) {
            return Err(Error::Config("data offsets must satisfy 0 < min_offset <= max_offset".into()));
        }
        Ok(())
    }
}

/// One training triple: rendered images, ground-truth body and clothed
/// surface, joints and the camera used for rendering.
#[derive(Clone, Debug)]
pub struct Sample {
    pub stack: ImageStack,
    pub body: MeshGraph,
    pub clothed: MeshGraph,
    pub joints: Vec<Vec3>,
    pub camera: CameraWP,
    pub regressor: Arc<JointRegressor>,
}

/// Seed of the fixed cluster regressor shared by every dataset.
const REGRESSOR_SEED: u64 = 0;

/// Smooth scalar field `sum a_k sin(f_k d_k . p + phi_k)` on the unit sphere.
struct Waves(Vec<(f64, Vec3, f64)>);

impl Waves {
    fn random(rng: &mut ChaCha8Rng, terms: usize, amp: (f64, f64), freq: (f64, f64)) -> Self {
        Waves(
            (0..terms)
                .map(|_| {
                    let d = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    let d = if d.norm() > 1e-6 { d.normalize() } else { Vec3::y() };
                    let a = rng.random_range(amp.0..amp.1);
                    (a, d * rng.random_range(freq.0..freq.1), rng.random_range(0.0..std::f64::consts::TAU))
                })
                .collect(),
        )
    }

    fn at(&self, p: &Vec3) -> f64 {
        self.0.iter().map(|(a, w, phi)| a * (w.dot(p) + phi).sin()).sum()
    }

    fn amplitude(&self) -> f64 {
        self.0.iter().map(|t| t.0).sum()
    }
}

fn render_stack(clothed: &MeshGraph, cam: &CameraWP, albedo: Vec3) -> Result<ImageStack> {
    let (w, h) = (cam.width, cam.height);
    let front = rasterize_normal_map(clothed, ViewAngle::FRONT, cam)?;
    let back = rasterize_normal_map(clothed, ViewAngle(180.0), cam)?;
    let depth = rasterize_depth(clothed, ViewAngle::FRONT, cam)?;
    let light = Vec3::new(0.4, 0.6, 1.0).normalize();
    let mut rgb = Grid::zeros(h, w, 3);
    let mut d = Grid::zeros(h, w, 1);
    let mut nf = Grid::zeros(h, w, 3);
    let mut nb = Grid::zeros(h, w, 3);
    for y in 0..h {
        for x in 0..w {
            let px = y * w + x;
            if front.mask.data[px] == 1 {
                let n = front.normals[px];
                let shade = 0.25 + 0.75 * n.dot(&light).max(0.0);
                rgb.at_mut(y, x).copy_from_slice((albedo * shade).as_slice());
                nf.at_mut(y, x).copy_from_slice(n.as_slice());
                d.at_mut(y, x)[0] = depth.depth[px];
            }
            // the back view is mirrored left-right relative to the front
            let mirrored = y * w + (w - 1 - x);
            if back.mask.data[mirrored] == 1 {
                nb.at_mut(y, x).copy_from_slice(back.normals[mirrored].as_slice());
            }
        }
    }
    ImageStack::from_planes(vec![
        (Channel::Rgb, rgb),
        (Channel::DepthFront, d),
        (Channel::NormalFront, nf),
        (Channel::NormalBack, nb),
    ])
}

fn make_sample(cfg: &DataConfig, template: &MeshGraph, regressor: &Arc<JointRegressor>, index: u64) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let axes = Vec3::new(rng.random_range(0.7..1.0), rng.random_range(0.85..1.15), rng.random_range(0.7..1.0));
    let bumps = Waves::random(&mut rng, 3, (0.01, 0.03), (1.5, 3.0));
    let body_verts: Vec<Vec3> = template
        .vertices()
        .iter()
        .map(|t| t.component_mul(&axes) * (1.0 + bumps.at(t)))
        .collect();
    let body = template.with_vertices(body_verts).with_role(MeshRole::GroundTruth);
    let shell = Waves::random(&mut rng, 2, (0.5, 1.0), (1.0, 2.5));
    let span = shell.amplitude();
    let normals = vertex_normals(&body)?;
    let clothed_verts = body
        .vertices()
        .iter()
        .zip(template.vertices())
        .zip(&normals)
        .map(|((b, t), n)| {
            let unit = 0.5 + 0.5 * shell.at(t) / span;
            b + n * (cfg.min_offset + (cfg.max_offset - cfg.min_offset) * unit)
        })
        .collect();
    let clothed = template.with_vertices(clothed_verts).with_role(MeshRole::GroundTruth);
    let joints = regressor.apply(body.vertices())?;

    let scale = rng.random_range(0.6..0.68);
    let c = clothed.centroid();
    let ty = -scale * c.y + rng.random_range(-0.03..0.03);
    let camera = CameraWP::new(scale, -scale * c.x, ty, cfg.resolution, cfg.resolution)?;
    let albedo = Vec3::new(rng.random_range(0.4..0.9), rng.random_range(0.4..0.9), rng.random_range(0.4..0.9));
    let stack = render_stack(&clothed, &camera, albedo)?;
    Ok(Sample {
        stack,
        body,
        clothed,
        joints,
        camera,
        regressor: Arc::clone(regressor),
    })
}

/// `cfg.num_samples` training samples followed by one held-out sample, all on
/// the icosphere template with `subdivisions` levels.
pub fn make_synthetic_dataset(cfg: &DataConfig, subdivisions: u32) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let template = make_icosphere(subdivisions)?;
    if cfg.num_joints > template.num_vertices() {
        return Err(Error::Config(format!(
            "data.num_joints {} exceeds the {} template vertices",
            cfg.num_joints,
            template.num_vertices()
        )));
    }
    let regressor = Arc::new(JointRegressor::clusters(template.vertices(), cfg.num_joints, REGRESSOR_SEED)?);
    (0..=cfg.num_samples as u64)
        .map(|k| make_sample(cfg, &template, &regressor, k))
        .collect()
}
