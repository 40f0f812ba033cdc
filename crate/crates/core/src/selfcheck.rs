//! Finite-difference gradient checks over every layer and differentiable loss.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::encode::{
    assemble_edge_features, assemble_edge_features_backward, assemble_vertex_features,
    assemble_vertex_features_backward, encode_global, encode_global_backward, encode_local, Channel, Encoder,
    FeatureMap, ImageStack, Pattern, GLOBAL_CHANNELS, LOCAL_CHANNELS,
};
use crate::losses::{
    chamfer_with_grad, joint_loss_with_grad, loss_mesh_with_grad, loss_surface_with_grad, loss_trace_with_grad,
    normal_loss_with_grad, vertex_loss_with_grad, JointRegressor, LossConfig,
};
use crate::mesh::{
    build_edge_adjacency, build_vertex_adjacency, make_icosphere, vertex_normals, vertex_normals_backward, MeshGraph,
};
use crate::nn::gradcheck::{check_layer, grad_check, read_blocks, write_blocks};
use crate::nn::{
    edge_to_vertex, edge_to_vertex_backward, Activation, Conv2d, Dense, GradCheckOptions, GradCheckReport, GraphConv,
    Grid, InitScheme, Mat, MeshConv, NeighborMode,
};
use crate::raster::CameraWP;
use crate::{Result, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuiteOptions {
    pub seed: u64,
    pub tolerance: f64,
    pub step: f64,
    /// Scales the dense layer's input gradient by 1.5 so the suite must fail.
    pub inject_fault: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            seed: 0,
            tolerance: 1e-4,
            step: 1e-5,
            inject_fault: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub seed: u64,
    pub tolerance: f64,
    pub entries: Vec<SuiteEntry>,
}

#[derive(Serialize)]
struct EntryJson<'a> {
    name: &'a str,
    passed: bool,
    max_rel_error: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.report.passed())
    }

    pub fn failures(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| !e.report.passed())
            .map(|e| e.name.as_str())
            .collect()
    }

    pub fn max_error(&self) -> f64 {
        self.entries.iter().map(|e| e.report.max_error()).fold(0.0, f64::max)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let entries: Vec<EntryJson<'_>> = self
            .entries
            .iter()
            .map(|e| EntryJson {
                name: &e.name,
                passed: e.report.passed(),
                max_rel_error: e.report.max_error(),
            })
            .collect();
        serde_json::json!({
            "seed": self.seed,
            "tolerance": self.tolerance,
            "passed": self.passed(),
            "entries": entries,
        })
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            let mark = if e.report.passed() { "ok  " } else { "FAIL" };
            writeln!(f, "{mark} {:<28} max rel err {:.3e}", e.name, e.report.max_error())?;
        }
        Ok(())
    }
}

fn flat(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

fn unflat(v: &[f64]) -> Vec<Vec3> {
    v.chunks(3).map(Vec3::from_column_slice).collect()
}

fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    InitScheme::UniformFanIn { gain: 1.0 }.matrix(rng, rows, cols, 1)
}

fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Grid {
    Grid {
        height: h,
        width: w,
        channels: c,
        data: (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

fn jittered(mesh: &MeshGraph, rng: &mut ChaCha8Rng, scale: (f64, f64), amount: f64) -> MeshGraph {
    let verts = mesh
        .vertices()
        .iter()
        .map(|v| {
            let j = Vec3::new(
                rng.random_range(-amount..amount),
                rng.random_range(-amount..amount),
                rng.random_range(-amount..amount),
            );
            v * rng.random_range(scale.0..scale.1) + j
        })
        .collect();
    mesh.with_vertices(verts)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient check of `f(points)` against its analytic gradient.
fn check_points(points: &[Vec3], grad: &[Vec3], f: impl Fn(&[Vec3]) -> f64, opts: GradCheckOptions) -> Result<GradCheckReport> {
    grad_check(
        &[("points".into(), flat(points))],
        &[flat(grad)],
        |p| f(&unflat(&p[0])),
        opts,
    )
}

struct Ctx {
    rng: ChaCha8Rng,
    opts: GradCheckOptions,
    seed: u64,
    fault: bool,
}

fn check_dense(c: &mut Ctx) -> Result<GradCheckReport> {
    let mut layer = Dense::init(5, 4, Activation::leaky(), InitScheme::default(), &mut c.rng);
    layer.bias = (0..4).map(|_| c.rng.random_range(-0.2..0.2)).collect();
    let x = random_mat(&mut c.rng, 6, 5);
    let fault = c.fault;
    check_layer(
        &layer,
        &x,
        c.seed,
        |l, x| l.forward(x),
        |l, t, dy, g| {
            let mut dx = l.backward(t, dy, g);
            if fault {
                dx.data.iter_mut().for_each(|v| *v *= 1.5);
            }
            dx
        },
        Dense::zeros_like,
        c.opts,
    )
}

fn check_graph_conv(c: &mut Ctx) -> Result<GradCheckReport> {
    let mesh = make_icosphere(0)?;
    let adj = build_vertex_adjacency(&mesh);
    let layer = GraphConv::init(4, 3, Activation::leaky(), InitScheme::default(), &mut c.rng);
    let x = random_mat(&mut c.rng, mesh.num_vertices(), 4);
    check_layer(
        &layer,
        &x,
        c.seed,
        |l, x| l.forward(x, &adj),
        |l, t, dy, g| l.backward(t, dy, &adj, g),
        GraphConv::zeros_like,
        c.opts,
    )
}

fn check_mesh_conv(c: &mut Ctx, mode: NeighborMode) -> Result<GradCheckReport> {
    let mesh = make_icosphere(0)?;
    let adj = build_edge_adjacency(&mesh)?;
    let layer = MeshConv::init(3, 2, Activation::leaky(), mode, InitScheme::default(), &mut c.rng);
    // continuous random inputs avoid ties in the absolute-difference slots
    let x = random_mat(&mut c.rng, mesh.num_edges(), 3);
    check_layer(
        &layer,
        &x,
        c.seed,
        |l, x| l.forward(x, &adj),
        |l, t, dy, g| l.backward(t, dy, &adj, g),
        MeshConv::zeros_like,
        c.opts,
    )
}

fn check_edge_to_vertex(c: &mut Ctx) -> Result<GradCheckReport> {
    let mesh = make_icosphere(0)?;
    let x = random_mat(&mut c.rng, mesh.num_edges(), 3);
    let r = random_mat(&mut c.rng, mesh.num_vertices(), 3);
    let dx = edge_to_vertex_backward(&r, &mesh);
    grad_check(
        &[("edges".into(), x.data.clone())],
        &[dx.data],
        |v| dot(&edge_to_vertex(&Mat::from_vec(x.rows, x.cols, v[0].clone()), &mesh).data, &r.data),
        c.opts,
    )
}

fn check_conv2d(c: &mut Ctx, stride: usize) -> Result<GradCheckReport> {
    let (h, w, cin) = (6, 5, 2);
    let mut layer = Conv2d::init(cin, 3, stride, Activation::leaky(), InitScheme::default(), &mut c.rng);
    layer.bias = (0..3).map(|_| c.rng.random_range(-0.2..0.2)).collect();
    let x = random_mat(&mut c.rng, h * w, cin);
    check_layer(
        &layer,
        &x,
        c.seed,
        |l, x| {
            let g = Grid {
                height: h,
                width: w,
                channels: cin,
                data: x.data.clone(),
            };
            l.forward(&g).map(|(y, t)| (y.as_mat(), t))
        },
        |l, t, dy, g| {
            let (oh, ow) = l.output_size(h, w);
            let up = Grid {
                height: oh,
                width: ow,
                channels: dy.cols,
                data: dy.data.clone(),
            };
            l.backward(t, &up, g).as_mat()
        },
        Conv2d::zeros_like,
        c.opts,
    )
}

fn random_stack(rng: &mut ChaCha8Rng, size: usize) -> Result<ImageStack> {
    let planes = [Channel::Rgb, Channel::DepthFront, Channel::NormalFront, Channel::NormalBack]
        .into_iter()
        .map(|ch| (ch, random_grid(rng, size, size, ch.width())))
        .collect();
    ImageStack::from_planes(planes)
}

fn check_global_encoder(c: &mut Ctx) -> Result<GradCheckReport> {
    let inputs: usize = GLOBAL_CHANNELS.iter().map(|ch| ch.width()).sum();
    let enc = Encoder::init(inputs, [3, 4, 4], [2, 2, 2], &mut c.rng);
    let stack = random_stack(&mut c.rng, 8)?;
    let w: Vec<f64> = (0..enc.outputs()).map(|_| c.rng.random_range(-1.0..1.0)).collect();
    let (_, tape) = encode_global(&stack, &enc)?;
    let mut grads = enc.zeros_like();
    let d_in = encode_global_backward(tape, &w, &enc, &mut grads);
    let input = stack.select(&GLOBAL_CHANNELS)?;
    let mut params = read_blocks(&enc);
    params.push(("input".into(), input.data.clone()));
    let mut analytic: Vec<Vec<f64>> = read_blocks(&grads).into_iter().map(|(_, v)| v).collect();
    analytic.push(d_in.data);
    let n = params.len() - 1;
    let mut scratch = enc.clone();
    grad_check(
        &params,
        &analytic,
        |v| {
            write_blocks(&mut scratch, &v[..n]);
            let g = Grid {
                data: v[n].clone(),
                ..input.clone()
            };
            match scratch.forward(&g) {
                Ok((map, _)) => dot(&map.as_mat().mean_rows(), &w),
                Err(_) => f64::NAN,
            }
        },
        c.opts,
    )
}

fn check_local_encoder(c: &mut Ctx) -> Result<GradCheckReport> {
    let inputs: usize = LOCAL_CHANNELS.iter().map(|ch| ch.width()).sum();
    let enc = Encoder::init(inputs, [3, 4, 4], [2, 2, 1], &mut c.rng);
    let stack = random_stack(&mut c.rng, 8)?;
    let (map, tape) = encode_local(&stack, &enc)?;
    let r = random_grid(&mut c.rng, map.grid.height, map.grid.width, map.grid.channels);
    let mut grads = enc.zeros_like();
    let d_in = enc.backward(tape, &r, &mut grads);
    let input = stack.select(&LOCAL_CHANNELS)?;
    let mut params = read_blocks(&enc);
    params.push(("input".into(), input.data.clone()));
    let mut analytic: Vec<Vec<f64>> = read_blocks(&grads).into_iter().map(|(_, v)| v).collect();
    analytic.push(d_in.data);
    let n = params.len() - 1;
    let mut scratch = enc.clone();
    grad_check(
        &params,
        &analytic,
        |v| {
            write_blocks(&mut scratch, &v[..n]);
            let g = Grid {
                data: v[n].clone(),
                ..input.clone()
            };
            match scratch.forward(&g) {
                Ok((out, _)) => dot(&out.data, &r.data),
                Err(_) => f64::NAN,
            }
        },
        c.opts,
    )
}

/// Puncturing: vertex positions and camera through the projection into the
/// bilinear samples, plus positions and normals copied into the rows.
fn check_projection(c: &mut Ctx) -> Result<GradCheckReport> {
    let map = FeatureMap {
        grid: random_grid(&mut c.rng, 12, 12, 3),
        downsample: 4,
    };
    let mesh = jittered(&make_icosphere(1)?, &mut c.rng, (0.8, 1.1), 0.02);
    let cam = CameraWP::new(
        c.rng.random_range(0.6..0.75),
        c.rng.random_range(-0.05..0.05),
        c.rng.random_range(-0.05..0.05),
        48,
        48,
    )?;
    let offsets = Pattern::Grid3.offsets();
    let (feats, tape) = assemble_vertex_features(&mesh, &map, &cam, &offsets)?;
    let r = random_mat(&mut c.rng, feats.rows, feats.cols);
    let grads = assemble_vertex_features_backward(&mesh, &map, &cam, tape, &r)?;
    let params = vec![
        ("vertices".to_string(), mesh.flat_positions()),
        ("camera".to_string(), vec![cam.scale, cam.tx, cam.ty]),
        ("map".to_string(), map.grid.data.clone()),
    ];
    let analytic = vec![flat(&grads.vertices), grads.camera.to_vec(), grads.map.data];
    grad_check(
        &params,
        &analytic,
        |v| {
            let m = mesh.with_vertices(unflat(&v[0]));
            let Ok(k) = CameraWP::new(v[1][0], v[1][1], v[1][2], cam.width, cam.height) else {
                return f64::NAN;
            };
            let fm = FeatureMap {
                grid: Grid {
                    data: v[2].clone(),
                    ..map.grid.clone()
                },
                downsample: map.downsample,
            };
            match assemble_vertex_features(&m, &fm, &k, &offsets) {
                Ok((f, _)) => dot(&f.data, &r.data),
                Err(_) => f64::NAN,
            }
        },
        c.opts,
    )
}

fn check_edge_features(c: &mut Ctx) -> Result<GradCheckReport> {
    let mesh = make_icosphere(0)?;
    let vf = random_mat(&mut c.rng, mesh.num_vertices(), 3);
    let r = random_mat(&mut c.rng, mesh.num_edges(), 6);
    let d = assemble_edge_features_backward(&r, mesh.edges(), mesh.num_vertices());
    grad_check(
        &[("vertex_features".into(), vf.data.clone())],
        &[d.data],
        |v| {
            let m = Mat::from_vec(vf.rows, vf.cols, v[0].clone());
            match assemble_edge_features(&m, mesh.edges(), mesh.num_vertices()) {
                Ok(e) => dot(&e.data, &r.data),
                Err(_) => f64::NAN,
            }
        },
        c.opts,
    )
}

fn check_vertex_normals(c: &mut Ctx) -> Result<GradCheckReport> {
    let mesh = jittered(&make_icosphere(1)?, &mut c.rng, (0.8, 1.2), 0.05);
    let r: Vec<Vec3> = (0..mesh.num_vertices())
        .map(|_| Vec3::new(c.rng.random_range(-1.0..1.0), c.rng.random_range(-1.0..1.0), c.rng.random_range(-1.0..1.0)))
        .collect();
    let g = vertex_normals_backward(&mesh, &r)?;
    check_points(
        mesh.vertices(),
        &g,
        |p| match vertex_normals(&mesh.with_vertices(p.to_vec())) {
            Ok(n) => n.iter().zip(&r).map(|(a, b)| a.dot(b)).sum(),
            Err(_) => f64::NAN,
        },
        c.opts,
    )
}

fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

fn check_chamfer(c: &mut Ctx) -> Result<GradCheckReport> {
    let a = cloud(&mut c.rng, 20);
    let b = cloud(&mut c.rng, 17);
    let (_, ga, gb) = chamfer_with_grad(&a, &b)?;
    grad_check(
        &[("a".into(), flat(&a)), ("b".into(), flat(&b))],
        &[flat(&ga), flat(&gb)],
        |v| chamfer_with_grad(&unflat(&v[0]), &unflat(&v[1])).map_or(f64::NAN, |r| r.0),
        c.opts,
    )
}

struct MeshPair {
    pred: MeshGraph,
    target: MeshGraph,
}

fn mesh_pair(c: &mut Ctx) -> Result<MeshPair> {
    let base = make_icosphere(1)?;
    Ok(MeshPair {
        pred: jittered(&base, &mut c.rng, (0.85, 1.0), 0.04),
        target: jittered(&base, &mut c.rng, (0.9, 1.1), 0.04),
    })
}

fn check_vertex_loss(c: &mut Ctx) -> Result<GradCheckReport> {
    let p = mesh_pair(c)?;
    let (_, g) = vertex_loss_with_grad(p.pred.vertices(), p.target.vertices())?;
    check_points(
        p.pred.vertices(),
        &g,
        |v| vertex_loss_with_grad(v, p.target.vertices()).map_or(f64::NAN, |r| r.0),
        c.opts,
    )
}

fn check_joint_loss(c: &mut Ctx) -> Result<GradCheckReport> {
    let p = mesh_pair(c)?;
    let j = JointRegressor::clusters(p.target.vertices(), 5, c.seed)?;
    let joints = j.apply(p.target.vertices())?;
    let (_, g) = joint_loss_with_grad(p.pred.vertices(), &j, &joints)?;
    check_points(
        p.pred.vertices(),
        &g,
        |v| joint_loss_with_grad(v, &j, &joints).map_or(f64::NAN, |r| r.0),
        c.opts,
    )
}

fn check_normal_loss(c: &mut Ctx) -> Result<GradCheckReport> {
    let p = mesh_pair(c)?;
    let (_, g) = normal_loss_with_grad(&p.pred, &p.target)?;
    check_points(
        p.pred.vertices(),
        &g,
        |v| normal_loss_with_grad(&p.pred.with_vertices(v.to_vec()), &p.target).map_or(f64::NAN, |r| r.0),
        c.opts,
    )
}

fn check_mesh_loss(c: &mut Ctx) -> Result<GradCheckReport> {
    let p = mesh_pair(c)?;
    let j = JointRegressor::clusters(p.target.vertices(), 5, c.seed)?;
    let joints = j.apply(p.target.vertices())?;
    let cfg = LossConfig::default();
    let (_, g) = loss_mesh_with_grad(&p.pred, &p.target, &j, &joints, &cfg)?;
    check_points(
        p.pred.vertices(),
        &g,
        |v| {
            loss_mesh_with_grad(&p.pred.with_vertices(v.to_vec()), &p.target, &j, &joints, &cfg)
                .map_or(f64::NAN, |r| r.0.mesh_total)
        },
        c.opts,
    )
}

fn check_surface_loss(c: &mut Ctx) -> Result<GradCheckReport> {
    let p = mesh_pair(c)?;
    let cfg = LossConfig::default();
    let (_, g) = loss_surface_with_grad(&p.pred, &p.target, &cfg)?;
    check_points(
        p.pred.vertices(),
        &g,
        |v| {
            loss_surface_with_grad(&p.pred.with_vertices(v.to_vec()), &p.target, &cfg)
                .map_or(f64::NAN, |r| r.0.surface_total)
        },
        c.opts,
    )
}

fn check_trace_loss(c: &mut Ctx) -> Result<GradCheckReport> {
    let p = mesh_pair(c)?;
    let from_gt = jittered(&p.target, &mut c.rng, (0.97, 1.03), 0.02);
    let cfg = LossConfig::default();
    let (_, g_pred, g_gt) = loss_trace_with_grad(&p.pred, &from_gt, &p.target, &cfg)?;
    grad_check(
        &[("pred".into(), p.pred.flat_positions()), ("pred_from_gt".into(), from_gt.flat_positions())],
        &[flat(&g_pred), flat(&g_gt)],
        |v| {
            let a = p.pred.with_vertices(unflat(&v[0]));
            let b = from_gt.with_vertices(unflat(&v[1]));
            loss_trace_with_grad(&a, &b, &p.target, &cfg).map_or(f64::NAN, |r| r.0)
        },
        c.opts,
    )
}

/// Runs every layer and loss check with inputs drawn from `opts.seed`.
pub fn gradient_suite(opts: SuiteOptions) -> Result<SuiteReport> {
    let mut c = Ctx {
        rng: ChaCha8Rng::seed_from_u64(opts.seed),
        opts: GradCheckOptions {
            step: opts.step,
            tolerance: opts.tolerance,
            ..GradCheckOptions::default()
        },
        seed: opts.seed,
        fault: opts.inject_fault,
    };
    type Check = fn(&mut Ctx) -> Result<GradCheckReport>;
    let checks: [(&str, Check); 19] = [
        ("dense", check_dense),
        ("graph_conv", check_graph_conv),
        ("mesh_conv.symmetric", |c| check_mesh_conv(c, NeighborMode::Symmetric)),
        ("mesh_conv.ordered", |c| check_mesh_conv(c, NeighborMode::Ordered)),
        ("edge_to_vertex", check_edge_to_vertex),
        ("conv2d.stride1", |c| check_conv2d(c, 1)),
        ("conv2d.stride2", |c| check_conv2d(c, 2)),
        ("encoder.global", check_global_encoder),
        ("encoder.local", check_local_encoder),
        ("projection", check_projection),
        ("edge_features", check_edge_features),
        ("vertex_normals", check_vertex_normals),
        ("loss.chamfer", check_chamfer),
        ("loss.vertex", check_vertex_loss),
        ("loss.joint", check_joint_loss),
        ("loss.normal", check_normal_loss),
        ("loss.mesh", check_mesh_loss),
        ("loss.surface", check_surface_loss),
        ("loss.trace", check_trace_loss),
    ];
    let mut entries = Vec::with_capacity(checks.len());
    for (name, check) in checks {
        entries.push(SuiteEntry {
            name: name.to_string(),
            report: check(&mut c)?,
        });
    }
    Ok(SuiteReport {
        seed: opts.seed,
        tolerance: opts.tolerance,
        entries,
    })
}
