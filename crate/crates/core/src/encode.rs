//! Image encoders, bilinear feature puncturing and per-vertex / per-edge
//! feature assembly.
//!
//! Vertex features are laid out as `[f_v (D) | position (3) | unit normal (3)]`;
//! edge features concatenate the two endpoint rows in canonical `(lo, hi)` order.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mesh::{vertex_normals, vertex_normals_backward, MeshGraph};
use crate::nn::{Activation, Conv2d, Conv2dTape, Grid, InitScheme, Mat, Params, BlockRef};
use crate::raster::image_io::{read_pfm, read_pgm};
use crate::raster::CameraWP;
use crate::{Error, Result, Vec3};

/// Input channel groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Rgb,
    DepthFront,
    NormalFront,
    NormalBack,
}

impl Channel {
    pub fn width(self) -> usize {
        match self {
            Channel::DepthFront => 1,
            _ => 3,
        }
    }
}

/// Channels consumed by the global encoder.
pub const GLOBAL_CHANNELS: [Channel; 2] = [Channel::Rgb, Channel::DepthFront];
/// Channels consumed by the local encoder.
pub const LOCAL_CHANNELS: [Channel; 3] = [Channel::Rgb, Channel::NormalFront, Channel::NormalBack];

/// Stacked input planes with a declared channel plan.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageStack {
    pub grid: Grid,
    pub plan: Vec<Channel>,
}

impl ImageStack {
    pub fn new(grid: Grid, plan: Vec<Channel>) -> Result<Self> {
        let declared: usize = plan.iter().map(|c| c.width()).sum();
        if declared != grid.channels {
            return Err(Error::Shape(format!(
                "channel plan declares {declared} channels but the grid has {}",
                grid.channels
            )));
        }
        if grid.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image stack".into()));
        }
        Ok(ImageStack { grid, plan })
    }

    /// Stacks single-plane grids of identical resolution.
    pub fn from_planes(planes: Vec<(Channel, Grid)>) -> Result<Self> {
        let (h, w) = planes
            .first()
            .map(|(_, g)| (g.height, g.width))
            .ok_or_else(|| Error::Shape("no planes".into()))?;
        let total: usize = planes.iter().map(|(c, _)| c.width()).sum();
        let mut grid = Grid::zeros(h, w, total);
        let mut offset = 0;
        for (c, g) in &planes {
            if g.height != h || g.width != w || g.channels != c.width() {
                return Err(Error::Shape(format!(
                    "plane {c:?} is {}x{}x{}, expected {h}x{w}x{}",
                    g.height,
                    g.width,
                    g.channels,
                    c.width()
                )));
            }
            for y in 0..h {
                for x in 0..w {
                    grid.at_mut(y, x)[offset..offset + c.width()].copy_from_slice(g.at(y, x));
                }
            }
            offset += c.width();
        }
        ImageStack::new(grid, planes.into_iter().map(|(c, _)| c).collect())
    }

    /// Gathers `channels` in the requested order.
    pub fn select(&self, channels: &[Channel]) -> Result<Grid> {
        let mut offsets = Vec::new();
        for want in channels {
            let mut off = 0;
            let mut found = None;
            for c in &self.plan {
                if c == want {
                    found = Some(off);
                }
                off += c.width();
            }
            let off = found.ok_or_else(|| Error::Shape(format!("image stack has no {want:?} channel")))?;
            offsets.push((off, want.width()));
        }
        let width: usize = offsets.iter().map(|o| o.1).sum();
        let g = &self.grid;
        let mut out = Grid::zeros(g.height, g.width, width);
        for y in 0..g.height {
            for x in 0..g.width {
                let src = g.at(y, x);
                let dst = out.at_mut(y, x);
                let mut k = 0;
                for &(off, w) in &offsets {
                    dst[k..k + w].copy_from_slice(&src[off..off + w]);
                    k += w;
                }
            }
        }
        Ok(out)
    }
}

/// Reads one channel plane from PFM (float) or PGM (8-bit, scaled to `[0, 1]`).
pub fn load_plane(bytes: &[u8]) -> Result<Grid> {
    if bytes.starts_with(b"PF") || bytes.starts_with(b"Pf") {
        let img = read_pfm(bytes)?;
        Ok(Grid {
            height: img.height,
            width: img.width,
            channels: img.channels,
            data: img.data.iter().map(|&v| v as f64).collect(),
        })
    } else {
        let img = read_pgm(bytes)?;
        Ok(Grid {
            height: img.height,
            width: img.width,
            channels: 1,
            data: img.values,
        })
    }
}

/// Local feature grid with the spatial downsample factor relative to the input.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub grid: Grid,
    pub downsample: usize,
}

impl FeatureMap {
    pub fn depth(&self) -> usize {
        self.grid.channels
    }
}

/// Stack of 3x3 convolution blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub blocks: Vec<Conv2d>,
}

pub struct EncoderTape {
    blocks: Vec<Conv2dTape>,
    out_shape: (usize, usize, usize),
}

impl Encoder {
    /// Channels `in -> 16 -> 32 -> out` with the given strides.
    pub fn init(inputs: usize, widths: [usize; 3], strides: [usize; 3], rng: &mut ChaCha8Rng) -> Self {
        let mut blocks = Vec::with_capacity(3);
        let mut cin = inputs;
        for (w, s) in widths.into_iter().zip(strides) {
            let act = Activation::leaky();
            let scheme = InitScheme::UniformFanIn { gain: act.init_gain() };
            blocks.push(Conv2d::init(cin, w, s, act, scheme, rng));
            cin = w;
        }
        Encoder { blocks }
    }

    pub fn inputs(&self) -> usize {
        self.blocks[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.blocks.last().map_or(0, Conv2d::outputs)
    }

    pub fn downsample(&self) -> usize {
        self.blocks.iter().map(|b| b.stride).product()
    }

    pub fn zeros_like(&self) -> Self {
        Encoder {
            blocks: self.blocks.iter().map(Conv2d::zeros_like).collect(),
        }
    }

    pub fn forward(&self, x: &Grid) -> Result<(Grid, EncoderTape)> {
        let mut cur = x.clone();
        let mut tapes = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, t) = b.forward(&cur)?;
            tapes.push(t);
            cur = y;
        }
        let out_shape = (cur.height, cur.width, cur.channels);
        Ok((cur, EncoderTape { blocks: tapes, out_shape }))
    }

    /// Returns the gradient with respect to the input grid.
    pub fn backward(&self, tape: EncoderTape, upstream: &Grid, grads: &mut Encoder) -> Grid {
        assert_eq!((upstream.height, upstream.width, upstream.channels), tape.out_shape);
        let mut g = upstream.clone();
        for ((b, t), gb) in self.blocks.iter().zip(tape.blocks).zip(&mut grads.blocks).rev() {
            g = b.backward(t, &g, gb);
        }
        g
    }
}

impl Params for Encoder {
    fn blocks(&self) -> Vec<BlockRef<'_>> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(i, b)| {
                b.blocks().into_iter().map(move |r| BlockRef {
                    name: format!("conv{i}.{}", r.name),
                    ..r
                })
            })
            .collect()
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        self.blocks
            .iter_mut()
            .enumerate()
            .flat_map(|(i, b)| b.blocks_mut().into_iter().map(move |(n, d)| (format!("conv{i}.{n}"), d)))
            .collect()
    }
}

/// Global feature vector `f_g`.
pub type FeatureVector = Vec<f64>;

pub struct GlobalTape {
    encoder: EncoderTape,
    map_shape: (usize, usize, usize),
}

/// Conv blocks over `(I, D_f)` followed by a spatial average.
pub fn encode_global(stack: &ImageStack, encoder: &Encoder) -> Result<(FeatureVector, GlobalTape)> {
    let input = stack.select(&GLOBAL_CHANNELS)?;
    if input.channels != encoder.inputs() {
        return Err(Error::Shape(format!(
            "global encoder expects {} channels, stack provides {}",
            encoder.inputs(),
            input.channels
        )));
    }
    let (map, tape) = encoder.forward(&input)?;
    let pooled = map.as_mat().mean_rows();
    Ok((
        pooled,
        GlobalTape {
            encoder: tape,
            map_shape: (map.height, map.width, map.channels),
        },
    ))
}

/// Backward of [`encode_global`]; returns the gradient on the selected input channels.
pub fn encode_global_backward(tape: GlobalTape, upstream: &[f64], encoder: &Encoder, grads: &mut Encoder) -> Grid {
    let (h, w, c) = tape.map_shape;
    let n = (h * w) as f64;
    let mut g = Grid::zeros(h, w, c);
    for px in g.data.chunks_mut(c) {
        for (d, u) in px.iter_mut().zip(upstream) {
            *d = u / n;
        }
    }
    encoder.backward(tape.encoder, &g, grads)
}

/// Conv blocks over `(I, N_f, N_b)` keeping a spatial grid.
pub fn encode_local(stack: &ImageStack, encoder: &Encoder) -> Result<(FeatureMap, EncoderTape)> {
    let input = stack.select(&LOCAL_CHANNELS)?;
    if input.channels != encoder.inputs() {
        return Err(Error::Shape(format!(
            "local encoder expects {} channels, stack provides {}",
            encoder.inputs(),
            input.channels
        )));
    }
    let (grid, tape) = encoder.forward(&input)?;
    Ok((
        FeatureMap {
            grid,
            downsample: encoder.downsample(),
        },
        tape,
    ))
}

/// Four-cell bilinear stencil of one sample.
#[derive(Clone, Copy, Debug)]
struct Stencil {
    cells: [(usize, usize); 4],
    weights: [f64; 4],
    fx: f64,
    fy: f64,
    free_x: bool,
    free_y: bool,
}

/// Clamps a continuous coordinate (cells span `[i, i + 1)`) to the range of
/// cell centers and splits it into a base index and a fraction.
fn axis(p: f64, n: usize) -> (usize, usize, f64, bool) {
    let c = p - 0.5;
    let hi = (n - 1) as f64;
    let free = c > 0.0 && c < hi;
    let c = c.clamp(0.0, hi);
    if n == 1 {
        return (0, 0, 0.0, false);
    }
    let i0 = (c.floor() as usize).min(n - 2);
    (i0, i0 + 1, c - i0 as f64, free)
}

fn stencil(map: &Grid, p: [f64; 2]) -> Result<Stencil> {
    if !(p[0].is_finite() && p[1].is_finite()) {
        return Err(Error::NonFinite(format!("sample point {p:?}")));
    }
    let (x0, x1, fx, free_x) = axis(p[0], map.width);
    let (y0, y1, fy, free_y) = axis(p[1], map.height);
    Ok(Stencil {
        cells: [(y0, x0), (y0, x1), (y1, x0), (y1, x1)],
        weights: [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy],
        fx,
        fy,
        free_x,
        free_y,
    })
}

/// Bilinear interpolation at continuous grid coordinates `p = (x, y)`, where
/// cell `(row j, col i)` has its center at `(i + 0.5, j + 0.5)`. Points beyond
/// the outermost centers are clamped.
pub fn sample_bilinear(map: &FeatureMap, p: [f64; 2]) -> Result<Vec<f64>> {
    let s = stencil(&map.grid, p)?;
    let mut out = vec![0.0; map.depth()];
    for (&(y, x), &w) in s.cells.iter().zip(&s.weights) {
        for (o, v) in out.iter_mut().zip(map.grid.at(y, x)) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Neighbourhood sampling pattern around the projected vertex, in feature cells.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Single,
    #[default]
    Grid3,
    Grid5,
}

impl Pattern {
    pub fn offsets(self) -> Vec<[f64; 2]> {
        let r: i32 = match self {
            Pattern::Single => 0,
            Pattern::Grid3 => 1,
            Pattern::Grid5 => 2,
        };
        let mut out = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                out.push([dx as f64, dy as f64]);
            }
        }
        out
    }

    pub fn side(self) -> usize {
        match self {
            Pattern::Single => 1,
            Pattern::Grid3 => 3,
            Pattern::Grid5 => 5,
        }
    }

    pub fn from_side(side: usize) -> Option<Self> {
        match side {
            1 => Some(Pattern::Single),
            3 => Some(Pattern::Grid3),
            5 => Some(Pattern::Grid5),
            _ => None,
        }
    }
}

/// Projected feature-grid coordinates of `v`.
fn feature_coords(map: &FeatureMap, v: &Vec3, cam: &CameraWP) -> ([f64; 2], [f64; 2]) {
    let [u, w] = cam.project(v);
    let sx = map.grid.width as f64 / cam.width as f64;
    let sy = map.grid.height as f64 / cam.height as f64;
    ([u * sx, w * sy], [sx, sy])
}

/// Mean of bilinear samples at `pi(v) + offset` for every pattern offset.
pub fn puncture_vertex(map: &FeatureMap, v: &Vec3, cam: &CameraWP, offsets: &[[f64; 2]]) -> Result<Vec<f64>> {
    Ok(puncture_with_stencils(map, v, cam, offsets)?.0)
}

fn puncture_with_stencils(
    map: &FeatureMap,
    v: &Vec3,
    cam: &CameraWP,
    offsets: &[[f64; 2]],
) -> Result<(Vec<f64>, Vec<Stencil>)> {
    let (p, _) = feature_coords(map, v, cam);
    let mut out = vec![0.0; map.depth()];
    let mut stencils = Vec::with_capacity(offsets.len());
    let scale = 1.0 / offsets.len() as f64;
    for o in offsets {
        let s = stencil(&map.grid, [p[0] + o[0], p[1] + o[1]])?;
        for (&(y, x), &w) in s.cells.iter().zip(&s.weights) {
            for (acc, val) in out.iter_mut().zip(map.grid.at(y, x)) {
                *acc += scale * w * val;
            }
        }
        stencils.push(s);
    }
    Ok((out, stencils))
}

/// Gradients of one punctured feature with respect to the map, the vertex and
/// the camera `(scale, tx, ty)`.
fn puncture_backward(
    map: &FeatureMap,
    v: &Vec3,
    cam: &CameraWP,
    stencils: &[Stencil],
    upstream: &[f64],
    d_map: &mut Grid,
) -> (Vec3, [f64; 3]) {
    let scale = 1.0 / stencils.len() as f64;
    let (_, [sx, sy]) = feature_coords(map, v, cam);
    let mut dp = [0.0; 2];
    for s in stencils {
        for (&(y, x), &w) in s.cells.iter().zip(&s.weights) {
            for (d, g) in d_map.at_mut(y, x).iter_mut().zip(upstream) {
                *d += scale * w * g;
            }
        }
        // d(value)/dx and d(value)/dy of the bilinear patch
        let f = |k: usize| map.grid.at(s.cells[k].0, s.cells[k].1);
        let (f00, f01, f10, f11) = (f(0), f(1), f(2), f(3));
        for c in 0..upstream.len() {
            let g = upstream[c] * scale;
            if s.free_x {
                dp[0] += g * ((1.0 - s.fy) * (f01[c] - f00[c]) + s.fy * (f11[c] - f10[c]));
            }
            if s.free_y {
                dp[1] += g * ((1.0 - s.fx) * (f10[c] - f00[c]) + s.fx * (f11[c] - f01[c]));
            }
        }
    }
    let dp = [dp[0] * sx, dp[1] * sy];
    let jac = cam.jacobian(v);
    let mut dv = Vec3::zeros();
    let mut dcam = [0.0; 3];
    for r in 0..2 {
        for k in 0..3 {
            dv[k] += dp[r] * jac.d_point[r][k];
            dcam[k] += dp[r] * jac.d_camera[r][k];
        }
    }
    (dv, dcam)
}

/// Width of a vertex feature row for local feature depth `d`.
pub fn vertex_feature_width(d: usize) -> usize {
    d + 6
}

pub struct VertexFeatureTape {
    stencils: Vec<Vec<Stencil>>,
}

/// Per-vertex `[f_v | v | N_v]` rows.
pub fn assemble_vertex_features(
    mesh: &MeshGraph,
    map: &FeatureMap,
    cam: &CameraWP,
    offsets: &[[f64; 2]],
) -> Result<(Mat, VertexFeatureTape)> {
    let d = map.depth();
    let normals = vertex_normals(mesh)?;
    let mut out = Mat::zeros(mesh.num_vertices(), vertex_feature_width(d));
    let mut stencils = Vec::with_capacity(mesh.num_vertices());
    for (i, (v, n)) in mesh.vertices().iter().zip(&normals).enumerate() {
        let (f, s) = puncture_with_stencils(map, v, cam, offsets)?;
        let row = out.row_mut(i);
        row[..d].copy_from_slice(&f);
        row[d..d + 3].copy_from_slice(v.as_slice());
        row[d + 3..].copy_from_slice(n.as_slice());
        stencils.push(s);
    }
    Ok((out, VertexFeatureTape { stencils }))
}

/// Gradients flowing out of the vertex feature rows.
pub struct VertexFeatureGrads {
    pub map: Grid,
    pub vertices: Vec<Vec3>,
    pub camera: [f64; 3],
}

pub fn assemble_vertex_features_backward(
    mesh: &MeshGraph,
    map: &FeatureMap,
    cam: &CameraWP,
    tape: VertexFeatureTape,
    upstream: &Mat,
) -> Result<VertexFeatureGrads> {
    let d = map.depth();
    let mut d_map = Grid::zeros(map.grid.height, map.grid.width, d);
    let mut d_verts = vec![Vec3::zeros(); mesh.num_vertices()];
    let mut d_normals = vec![Vec3::zeros(); mesh.num_vertices()];
    let mut d_cam = [0.0; 3];
    for (i, (v, st)) in mesh.vertices().iter().zip(&tape.stencils).enumerate() {
        let row = upstream.row(i);
        let (dv, dc) = puncture_backward(map, v, cam, st, &row[..d], &mut d_map);
        d_verts[i] += dv + Vec3::from_column_slice(&row[d..d + 3]);
        d_normals[i] = Vec3::from_column_slice(&row[d + 3..d + 6]);
        for k in 0..3 {
            d_cam[k] += dc[k];
        }
    }
    let via_normals = vertex_normals_backward(mesh, &d_normals)?;
    for (a, b) in d_verts.iter_mut().zip(via_normals) {
        *a += b;
    }
    Ok(VertexFeatureGrads {
        map: d_map,
        vertices: d_verts,
        camera: d_cam,
    })
}

/// `psi_e = psi_lo ⊕ psi_hi` for every canonical edge.
pub fn assemble_edge_features(vertex_features: &Mat, edges: &[[usize; 2]], num_vertices: usize) -> Result<Mat> {
    if vertex_features.rows != num_vertices {
        return Err(Error::Shape(format!(
            "{} vertex feature rows for {num_vertices} vertices",
            vertex_features.rows
        )));
    }
    let w = vertex_features.cols;
    let mut out = Mat::zeros(edges.len(), 2 * w);
    for (e, &[a, b]) in edges.iter().enumerate() {
        let row = out.row_mut(e);
        row[..w].copy_from_slice(vertex_features.row(a));
        row[w..].copy_from_slice(vertex_features.row(b));
    }
    Ok(out)
}

pub fn assemble_edge_features_backward(upstream: &Mat, edges: &[[usize; 2]], num_vertices: usize) -> Mat {
    let w = upstream.cols / 2;
    let mut out = Mat::zeros(num_vertices, w);
    for (e, &[a, b]) in edges.iter().enumerate() {
        let row = upstream.row(e);
        for (d, g) in out.row_mut(a).iter_mut().zip(&row[..w]) {
            *d += g;
        }
        for (d, g) in out.row_mut(b).iter_mut().zip(&row[w..]) {
            *d += g;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{make_icosphere, tetrahedron};
    use crate::nn::gradcheck::{grad_check, GradCheckOptions};
    use rand::{Rng, SeedableRng};

    fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Grid {
        Grid {
            height: h,
            width: w,
            channels: c,
            data: (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    fn stack(rng: &mut ChaCha8Rng, res: usize) -> ImageStack {
        ImageStack::from_planes(vec![
            (Channel::Rgb, random_grid(rng, res, res, 3)),
            (Channel::DepthFront, random_grid(rng, res, res, 1)),
            (Channel::NormalFront, random_grid(rng, res, res, 3)),
            (Channel::NormalBack, random_grid(rng, res, res, 3)),
        ])
        .unwrap()
    }

    fn global_encoder(rng: &mut ChaCha8Rng) -> Encoder {
        Encoder::init(4, [4, 5, 6], [2, 2, 2], rng)
    }

    fn local_encoder(rng: &mut ChaCha8Rng, d: usize) -> Encoder {
        Encoder::init(9, [16, 32, d], [2, 2, 1], rng)
    }

    #[test]
    fn zero_input_zero_bias_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let zero = ImageStack::from_planes(vec![
            (Channel::Rgb, Grid::zeros(16, 16, 3)),
            (Channel::DepthFront, Grid::zeros(16, 16, 1)),
            (Channel::NormalFront, Grid::zeros(16, 16, 3)),
            (Channel::NormalBack, Grid::zeros(16, 16, 3)),
        ])
        .unwrap();
        let (fg, _) = encode_global(&zero, &global_encoder(&mut rng)).unwrap();
        assert!(fg.iter().all(|&v| v == 0.0));
        let (map, _) = encode_local(&zero, &local_encoder(&mut rng, 8)).unwrap();
        assert!(map.grid.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_and_seed_dependent() {
        let s = stack(&mut ChaCha8Rng::seed_from_u64(1), 16);
        let a = encode_global(&s, &global_encoder(&mut ChaCha8Rng::seed_from_u64(5))).unwrap().0;
        let b = encode_global(&s, &global_encoder(&mut ChaCha8Rng::seed_from_u64(5))).unwrap().0;
        let c = encode_global(&s, &global_encoder(&mut ChaCha8Rng::seed_from_u64(6))).unwrap().0;
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn channel_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let only_rgb = ImageStack::from_planes(vec![(Channel::Rgb, random_grid(&mut rng, 8, 8, 3))]).unwrap();
        assert!(encode_global(&only_rgb, &global_encoder(&mut rng)).is_err());
        assert!(ImageStack::new(Grid::zeros(4, 4, 5), vec![Channel::Rgb]).is_err());
    }

    #[test]
    fn local_map_has_quarter_resolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (map, _) = encode_local(&stack(&mut rng, 64), &local_encoder(&mut rng, 32)).unwrap();
        assert_eq!((map.grid.height, map.grid.width, map.grid.channels), (16, 16, 32));
        assert_eq!(map.downsample, 4);
    }

    #[test]
    fn local_encoder_translation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let enc = local_encoder(&mut rng, 4);
        let base = stack(&mut rng, 32);
        // shift right by 4 pixels, zero-fill on the left
        let mut shifted = base.grid.clone();
        for y in 0..32 {
            for x in 0..32 {
                let v: Vec<f64> = if x >= 4 { base.grid.at(y, x - 4).to_vec() } else { vec![0.0; 10] };
                shifted.at_mut(y, x).copy_from_slice(&v);
            }
        }
        let shifted = ImageStack::new(shifted, base.plan.clone()).unwrap();
        let (a, _) = encode_local(&base, &enc).unwrap();
        let (b, _) = encode_local(&shifted, &enc).unwrap();
        // receptive field of one output cell spans at most 2 cells each side
        for y in 0..8 {
            for x in 3..6 {
                for (p, q) in b.grid.at(y, x + 1).iter().zip(a.grid.at(y, x)) {
                    assert!((p - q).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn global_encoder_gradient_wrt_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let enc = global_encoder(&mut rng);
        let s = stack(&mut rng, 8);
        let w: Vec<f64> = (0..enc.outputs()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, tape) = encode_global(&s, &enc).unwrap();
        let mut grads = enc.zeros_like();
        let d_in = encode_global_backward(tape, &w, &enc, &mut grads);
        let input = s.select(&GLOBAL_CHANNELS).unwrap();
        let report = grad_check(
            &[("input".into(), input.data.clone())],
            &[d_in.data],
            |v| {
                let g = Grid { data: v[0].clone(), ..input.clone() };
                let (map, _) = enc.forward(&g).unwrap();
                map.as_mat().mean_rows().iter().zip(&w).map(|(a, b)| a * b).sum()
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed(), "{report}");
    }

    fn constant_map(c: &[f64], h: usize, w: usize) -> FeatureMap {
        FeatureMap {
            grid: Grid {
                height: h,
                width: w,
                channels: c.len(),
                data: c.repeat(h * w),
            },
            downsample: 4,
        }
    }

    fn ramp_map(h: usize, w: usize) -> FeatureMap {
        // value(x, y) = 2 x - 3 y + 1 at cell centers
        let mut g = Grid::zeros(h, w, 1);
        for y in 0..h {
            for x in 0..w {
                g.at_mut(y, x)[0] = 2.0 * (x as f64 + 0.5) - 3.0 * (y as f64 + 0.5) + 1.0;
            }
        }
        FeatureMap { grid: g, downsample: 4 }
    }

    #[test]
    fn bilinear_cell_center_and_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let map = FeatureMap {
            grid: random_grid(&mut rng, 5, 6, 3),
            downsample: 4,
        };
        assert_eq!(sample_bilinear(&map, [2.5, 3.5]).unwrap(), map.grid.at(3, 2).to_vec());
        let mid = sample_bilinear(&map, [2.0, 3.0]).unwrap();
        for c in 0..3 {
            let avg = (map.grid.at(2, 1)[c] + map.grid.at(2, 2)[c] + map.grid.at(3, 1)[c] + map.grid.at(3, 2)[c]) / 4.0;
            assert!((mid[c] - avg).abs() < 1e-15);
        }
        assert!(sample_bilinear(&map, [f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn bilinear_matches_four_term_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let map = FeatureMap {
            grid: random_grid(&mut rng, 7, 9, 2),
            downsample: 4,
        };
        for _ in 0..100 {
            let p = [rng.random_range(0.5..8.5), rng.random_range(0.5..6.5)];
            let got = sample_bilinear(&map, p).unwrap();
            let (x, y) = (p[0] - 0.5, p[1] - 0.5);
            let (i, j) = (x.floor() as usize, y.floor() as usize);
            let (tx, ty) = (x - i as f64, y - j as f64);
            let at = |jj: usize, ii: usize, c: usize| map.grid.at(jj.min(6), ii.min(8))[c];
            for c in 0..2 {
                let expect = at(j, i, c) * (1.0 - tx) * (1.0 - ty)
                    + at(j, i + 1, c) * tx * (1.0 - ty)
                    + at(j + 1, i, c) * (1.0 - tx) * ty
                    + at(j + 1, i + 1, c) * tx * ty;
                assert!((got[c] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn puncture_constant_single_and_ramp() {
        let cam = CameraWP::new(0.9, 0.05, -0.1, 64, 64).unwrap();
        let v = Vec3::new(0.2, -0.3, 0.4);
        let c = constant_map(&[0.5, -2.0], 16, 16);
        for p in [Pattern::Single, Pattern::Grid3, Pattern::Grid5] {
            let f = puncture_vertex(&c, &v, &cam, &p.offsets()).unwrap();
            for (a, b) in f.iter().zip([0.5, -2.0]) {
                assert!((a - b).abs() < 1e-14);
            }
        }
        let ramp = ramp_map(16, 16);
        let single = puncture_vertex(&ramp, &v, &cam, &Pattern::Single.offsets()).unwrap();
        let [u, w] = cam.project(&v);
        let p = [u / 4.0, w / 4.0];
        assert_eq!(single, sample_bilinear(&ramp, p).unwrap());
        // symmetric offsets of an affine field average to its center value
        let grid3 = puncture_vertex(&ramp, &v, &cam, &Pattern::Grid3.offsets()).unwrap();
        let analytic = 2.0 * p[0] - 3.0 * p[1] + 1.0;
        assert!((grid3[0] - analytic).abs() < 1e-12);
    }

    #[test]
    fn puncture_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let map = FeatureMap {
            grid: random_grid(&mut rng, 16, 16, 4),
            downsample: 4,
        };
        let cam = CameraWP::new(0.8, 0.0, 0.0, 64, 64).unwrap();
        let v = Vec3::new(0.1, 0.2, 0.0);
        let offs = Pattern::Grid5.offsets();
        let mut rev = offs.clone();
        rev.reverse();
        let a = puncture_vertex(&map, &v, &cam, &offs).unwrap();
        let b = puncture_vertex(&map, &v, &cam, &rev).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn vertex_feature_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let map = FeatureMap {
            grid: random_grid(&mut rng, 16, 16, 3),
            downsample: 4,
        };
        let base = make_icosphere(1).unwrap();
        let mesh = base.with_vertices(
            base.vertices()
                .iter()
                .map(|v| v * rng.random_range(0.8..1.1))
                .collect(),
        );
        let cam = CameraWP::new(0.7, 0.03, -0.02, 64, 64).unwrap();
        let offs = Pattern::Grid3.offsets();
        let (feats, tape) = assemble_vertex_features(&mesh, &map, &cam, &offs).unwrap();
        let r = InitScheme::default().matrix(&mut rng, feats.rows, feats.cols, 1);
        let grads = assemble_vertex_features_backward(&mesh, &map, &cam, tape, &r).unwrap();

        let n = mesh.num_vertices();
        let params = vec![
            ("vertices".to_string(), mesh.flat_positions()),
            ("camera".to_string(), vec![cam.scale, cam.tx, cam.ty]),
            ("map".to_string(), map.grid.data.clone()),
        ];
        let analytic = vec![
            grads.vertices.iter().flat_map(|v| [v.x, v.y, v.z]).collect(),
            grads.camera.to_vec(),
            grads.map.data.clone(),
        ];
        let report = grad_check(
            &params,
            &analytic,
            |v| {
                let m = mesh.with_vertices((0..n).map(|i| Vec3::new(v[0][3 * i], v[0][3 * i + 1], v[0][3 * i + 2])).collect());
                let c = CameraWP { scale: v[1][0], tx: v[1][1], ty: v[1][2], ..cam };
                let fm = FeatureMap { grid: Grid { data: v[2].clone(), ..map.grid.clone() }, downsample: 4 };
                let (f, _) = assemble_vertex_features(&m, &fm, &c, &offs).unwrap();
                f.data.iter().zip(&r.data).map(|(a, b)| a * b).sum()
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn vertex_feature_layout_and_locality() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let map = FeatureMap {
            grid: random_grid(&mut rng, 16, 16, 5),
            downsample: 4,
        };
        let mesh = make_icosphere(1).unwrap();
        let cam = CameraWP::new(0.7, 0.0, 0.0, 64, 64).unwrap();
        let offs = Pattern::Grid3.offsets();
        let (a, _) = assemble_vertex_features(&mesh, &map, &cam, &offs).unwrap();
        assert_eq!(a.cols, vertex_feature_width(5));
        for (i, v) in mesh.vertices().iter().enumerate() {
            let n = Vec3::from_column_slice(&a.row(i)[8..11]);
            assert!((n.norm() - 1.0).abs() < 1e-12);
            assert!(n.dot(v) > 0.99);
        }
        // perturb vertex 7: only its own row and its one-ring normals change
        let mut moved = mesh.vertices().to_vec();
        moved[7] += Vec3::new(0.03, -0.02, 0.01);
        let (b, _) = assemble_vertex_features(&mesh.with_vertices(moved), &map, &cam, &offs).unwrap();
        let ring: Vec<usize> = mesh
            .edges()
            .iter()
            .filter_map(|&[p, q]| if p == 7 { Some(q) } else if q == 7 { Some(p) } else { None })
            .collect();
        for i in 0..mesh.num_vertices() {
            let changed = a.row(i) != b.row(i);
            let expected = i == 7 || ring.contains(&i);
            assert_eq!(changed, expected, "vertex {i}");
            if i != 7 && expected {
                assert_eq!(&a.row(i)[..8], &b.row(i)[..8], "only normals of ring vertices move");
            }
        }
    }

    #[test]
    fn edge_features_split_back_into_vertices() {
        let t = tetrahedron();
        let vf = Mat::from_vec(4, 3, (0..12).map(|i| i as f64).collect());
        let ef = assemble_edge_features(&vf, t.edges(), 4).unwrap();
        assert_eq!(ef.shape(), (6, 6));
        for (e, &[a, b]) in t.edges().iter().enumerate() {
            assert_eq!(&ef.row(e)[..3], vf.row(a));
            assert_eq!(&ef.row(e)[3..], vf.row(b));
        }
        assert!(assemble_edge_features(&vf, t.edges(), 5).is_err());
        // swapping two identical vertex rows leaves the edge rows unchanged
        let same = Mat::from_vec(4, 3, [1.0, 2.0, 3.0].repeat(4));
        let e1 = assemble_edge_features(&same, t.edges(), 4).unwrap();
        let mut swapped = same.clone();
        let (r0, r1) = (swapped.row(0).to_vec(), swapped.row(1).to_vec());
        swapped.row_mut(0).copy_from_slice(&r1);
        swapped.row_mut(1).copy_from_slice(&r0);
        assert_eq!(assemble_edge_features(&swapped, t.edges(), 4).unwrap(), e1);
    }

    #[test]
    fn edge_feature_backward_is_adjoint() {
        let t = tetrahedron();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let vf = InitScheme::default().matrix(&mut rng, 4, 2, 1);
        let up = InitScheme::default().matrix(&mut rng, 6, 4, 1);
        let ef = assemble_edge_features(&vf, t.edges(), 4).unwrap();
        let back = assemble_edge_features_backward(&up, t.edges(), 4);
        let lhs: f64 = ef.data.iter().zip(&up.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = vf.data.iter().zip(&back.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
