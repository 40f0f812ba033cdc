//! Body and clothed-surface networks, their coupling, synthetic data and the
//! toy training loop.
//!
//! The body branch maps the template plus a global image code to per-vertex
//! offsets and a weak-perspective camera. The clothed branch punctures local
//! image features at the projected body vertices, runs edge convolutions over
//! the shared topology and displaces the body vertices to the clothed surface.

mod data;
mod train;

pub use data::{make_synthetic_dataset, DataConfig, Sample};
pub use train::{
    accumulate_sample, evaluate_heldout, load_checkpoint, save_checkpoint, train_toy, training_step, HeldoutMetrics, HistoryRow, Momentum,
    PipelineConfig, StepOutcome, TrainHistory, TrainingConfig,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encode::{
    assemble_edge_features, assemble_edge_features_backward, assemble_vertex_features,
    assemble_vertex_features_backward, encode_global, encode_global_backward, encode_local, vertex_feature_width,
    Encoder, EncoderTape, FeatureMap, GlobalTape, Pattern, GLOBAL_CHANNELS, LOCAL_CHANNELS,
};
use crate::mesh::{build_edge_adjacency, build_vertex_adjacency, make_icosphere, EdgeAdjacency, MeshGraph, MeshRole, VertexAdjacency};
use crate::nn::{
    edge_to_vertex, edge_to_vertex_backward, Activation, BlockRef, Dense, DenseTape, GraphConv, GraphConvTape, Grid,
    InitScheme, Mat, MeshConv, MeshConvTape, NeighborMode, Params,
};
use crate::raster::CameraWP;
use crate::{Error, Result, Vec3};

/// Architecture and initialization of both branches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub template_subdivisions: u32,
    /// Output widths of the three global encoder blocks; the last is the code size.
    pub global_widths: [usize; 3],
    /// Output widths of the three local encoder blocks; the last is the feature depth.
    pub local_widths: [usize; 3],
    /// Width of the embedding layer and every graph convolution.
    pub body_width: usize,
    pub graph_layers: usize,
    /// Width of every hidden edge convolution.
    pub edge_width: usize,
    /// Edge convolutions including the 3-channel output layer.
    pub edge_layers: usize,
    pub pattern: Pattern,
    pub neighbor_mode: NeighborMode,
    /// Init gain of the per-vertex offset layer.
    pub body_output_gain: f64,
    /// Init gain of the final edge layer; `0` starts the clothed surface on the body.
    pub edge_output_gain: f64,
    /// Camera scale at zero camera-head output.
    pub reference_scale: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            template_subdivisions: 2,
            global_widths: [16, 32, 32],
            local_widths: [16, 32, 32],
            body_width: 64,
            graph_layers: 8,
            edge_width: 32,
            edge_layers: 11,
            pattern: Pattern::Grid3,
            neighbor_mode: NeighborMode::Symmetric,
            body_output_gain: 0.1,
            edge_output_gain: 0.0,
            reference_scale: 0.65,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = self.global_widths.iter().chain(&self.local_widths).chain([&self.body_width, &self.edge_width]);
        if widths.into_iter().any(|&w| w == 0) {
            return Err(Error::Config("network widths must be positive".into()));
        }
        if self.graph_layers == 0 {
            return Err(Error::Config("network.graph_layers must be at least 1".into()));
        }
        if self.edge_layers < 2 {
            return Err(Error::Config("network.edge_layers must be at least 2 (input and output layer)".into()));
        }
        if self.template_subdivisions > crate::mesh::MAX_SUBDIVISIONS {
            return Err(Error::Config(format!(
                "network.template_subdivisions must be at most {}",
                crate::mesh::MAX_SUBDIVISIONS
            )));
        }
        if !(self.reference_scale > 0.0 && self.reference_scale.is_finite()) {
            return Err(Error::Config("network.reference_scale must be positive".into()));
        }
        for (name, g) in [("body_output_gain", self.body_output_gain), ("edge_output_gain", self.edge_output_gain)] {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("network.{name} must be non-negative")));
            }
        }
        Ok(())
    }
}

/// Every trainable block. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams {
    pub global: Encoder,
    pub local: Encoder,
    pub embed: Dense,
    pub graph: Vec<GraphConv>,
    pub offsets: Dense,
    pub camera: Dense,
    pub edge: Vec<MeshConv>,
}

impl NetParams {
    pub fn zeros_like(&self) -> Self {
        NetParams {
            global: self.global.zeros_like(),
            local: self.local.zeros_like(),
            embed: self.embed.zeros_like(),
            graph: self.graph.iter().map(GraphConv::zeros_like).collect(),
            offsets: self.offsets.zeros_like(),
            camera: self.camera.zeros_like(),
            edge: self.edge.iter().map(MeshConv::zeros_like).collect(),
        }
    }

    /// Parameter count of the body branch (encoder, embedding, graph layers, heads).
    pub fn body_params(&self) -> usize {
        self.global.num_params()
            + self.embed.num_params()
            + self.graph.iter().map(Params::num_params).sum::<usize>()
            + self.offsets.num_params()
            + self.camera.num_params()
    }

    /// Parameter count of the clothed branch (local encoder and edge layers).
    pub fn clothed_params(&self) -> usize {
        self.local.num_params() + self.edge.iter().map(Params::num_params).sum::<usize>()
    }

    pub fn edge_params_all_zero(&self) -> bool {
        self.edge.iter().all(|l| l.blocks().iter().all(|b| b.data.iter().all(|&v| v == 0.0)))
    }
}

fn prefix<'a>(p: &'a str, blocks: Vec<BlockRef<'a>>) -> impl Iterator<Item = BlockRef<'a>> + 'a {
    blocks.into_iter().map(move |b| BlockRef {
        name: format!("{p}.{}", b.name),
        ..b
    })
}

fn prefix_mut<'a>(p: String, blocks: Vec<(String, &'a mut [f64])>) -> impl Iterator<Item = (String, &'a mut [f64])> + 'a {
    blocks.into_iter().map(move |(n, d)| (format!("{p}.{n}"), d))
}

impl Params for NetParams {
    fn blocks(&self) -> Vec<BlockRef<'_>> {
        let mut out: Vec<BlockRef<'_>> = Vec::new();
        out.extend(prefix("global", self.global.blocks()));
        out.extend(prefix("local", self.local.blocks()));
        out.extend(prefix("embed", self.embed.blocks()));
        for (i, l) in self.graph.iter().enumerate() {
            out.extend(l.blocks().into_iter().map(move |b| BlockRef {
                name: format!("graph{i}.{}", b.name),
                ..b
            }));
        }
        out.extend(prefix("offsets", self.offsets.blocks()));
        out.extend(prefix("camera", self.camera.blocks()));
        for (i, l) in self.edge.iter().enumerate() {
            out.extend(l.blocks().into_iter().map(move |b| BlockRef {
                name: format!("edge{i}.{}", b.name),
                ..b
            }));
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        out.extend(prefix_mut("global".into(), self.global.blocks_mut()));
        out.extend(prefix_mut("local".into(), self.local.blocks_mut()));
        out.extend(prefix_mut("embed".into(), self.embed.blocks_mut()));
        for (i, l) in self.graph.iter_mut().enumerate() {
            out.extend(prefix_mut(format!("graph{i}"), l.blocks_mut()));
        }
        out.extend(prefix_mut("offsets".into(), self.offsets.blocks_mut()));
        out.extend(prefix_mut("camera".into(), self.camera.blocks_mut()));
        for (i, l) in self.edge.iter_mut().enumerate() {
            out.extend(prefix_mut(format!("edge{i}"), l.blocks_mut()));
        }
        out
    }
}

/// Both branches plus the template they deform.
#[derive(Clone, Debug)]
pub struct Network {
    pub config: NetworkConfig,
    pub params: NetParams,
    template: MeshGraph,
    vertex_adjacency: VertexAdjacency,
    edge_adjacency: EdgeAdjacency,
}

pub fn build_network(cfg: &NetworkConfig) -> Result<Network> {
    cfg.validate()?;
    let template = make_icosphere(cfg.template_subdivisions)?.with_role(MeshRole::Template);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let leaky = Activation::leaky();
    let hidden = InitScheme::UniformFanIn { gain: leaky.init_gain() };
    let edge_hidden = InitScheme::UniformFanIn {
        gain: leaky.init_gain() / cfg.neighbor_mode.slot_variance_factor().sqrt(),
    };
    let global_in: usize = GLOBAL_CHANNELS.iter().map(|c| c.width()).sum();
    let local_in: usize = LOCAL_CHANNELS.iter().map(|c| c.width()).sum();
    let global = Encoder::init(global_in, cfg.global_widths, [2, 2, 2], &mut rng);
    let local = Encoder::init(local_in, cfg.local_widths, [2, 2, 1], &mut rng);
    let embed = Dense::init(3 + cfg.global_widths[2], cfg.body_width, leaky, hidden, &mut rng);
    let graph = (0..cfg.graph_layers)
        .map(|_| GraphConv::init(cfg.body_width, cfg.body_width, leaky, hidden, &mut rng))
        .collect();
    let scaled = |gain: f64| {
        if gain == 0.0 {
            InitScheme::Zeros
        } else {
            InitScheme::UniformFanIn { gain }
        }
    };
    let offsets = Dense::init(cfg.body_width, 3, Activation::Linear, scaled(cfg.body_output_gain), &mut rng);
    let camera = Dense::init(cfg.body_width, 3, Activation::Linear, scaled(cfg.body_output_gain), &mut rng);
    let edge_in = 2 * vertex_feature_width(cfg.local_widths[2]);
    let mut edge = Vec::with_capacity(cfg.edge_layers);
    for i in 0..cfg.edge_layers {
        let cin = if i == 0 { edge_in } else { cfg.edge_width };
        edge.push(if i + 1 == cfg.edge_layers {
            MeshConv::init(cin, 3, Activation::Linear, cfg.neighbor_mode, scaled(cfg.edge_output_gain), &mut rng)
        } else {
            MeshConv::init(cin, cfg.edge_width, leaky, cfg.neighbor_mode, edge_hidden, &mut rng)
        });
    }
    let vertex_adjacency = build_vertex_adjacency(&template);
    let edge_adjacency = build_edge_adjacency(&template)?;
    Ok(Network {
        config: cfg.clone(),
        params: NetParams {
            global,
            local,
            embed,
            graph,
            offsets,
            camera,
            edge,
        },
        template,
        vertex_adjacency,
        edge_adjacency,
    })
}

/// Predicted body mesh, camera and clothed surface.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub body: MeshGraph,
    pub camera: CameraWP,
    pub clothed: MeshGraph,
}

pub struct BodyTape {
    global: GlobalTape,
    embed: DenseTape,
    graph: Vec<GraphConvTape>,
    offsets: DenseTape,
    camera: DenseTape,
    scale: f64,
}

pub struct ClothedTape {
    body: MeshGraph,
    camera: CameraWP,
    features: crate::encode::VertexFeatureTape,
    convs: Vec<MeshConvTape>,
}

/// Everything needed to backpropagate one forward pass.
pub struct ForwardTape {
    pub body: BodyTape,
    pub local: EncoderTape,
    pub map: FeatureMap,
    pub clothed: ClothedTape,
}

fn to_mat(points: &[Vec3]) -> Mat {
    Mat::from_vec(points.len(), 3, points.iter().flat_map(|p| [p.x, p.y, p.z]).collect())
}

fn from_mat(m: &Mat) -> Vec<Vec3> {
    m.data.chunks(3).map(Vec3::from_column_slice).collect()
}

impl Network {
    pub fn template(&self) -> &MeshGraph {
        &self.template
    }

    pub fn num_params(&self) -> usize {
        self.params.num_params()
    }

    /// Body branch: template and global code to body mesh and camera.
    pub fn forward_body(&self, stack: &crate::encode::ImageStack) -> Result<(MeshGraph, CameraWP, BodyTape)> {
        let p = &self.params;
        let (code, global) = encode_global(stack, &p.global)?;
        let v = self.template.num_vertices();
        let mut x = Mat::zeros(v, 3 + code.len());
        for (i, t) in self.template.vertices().iter().enumerate() {
            let row = x.row_mut(i);
            row[..3].copy_from_slice(t.as_slice());
            row[3..].copy_from_slice(&code);
        }
        let (mut h, embed) = p.embed.forward(&x)?;
        let mut graph = Vec::with_capacity(p.graph.len());
        for l in &p.graph {
            let (y, t) = l.forward(&h, &self.vertex_adjacency)?;
            graph.push(t);
            h = y;
        }
        let (off, offsets) = p.offsets.forward(&h)?;
        let verts = self
            .template
            .vertices()
            .iter()
            .zip(from_mat(&off))
            .map(|(t, o)| t + o)
            .collect();
        let body = self.template.with_vertices(verts).with_role(MeshRole::Body);
        let pooled = Mat::from_vec(1, h.cols, h.mean_rows());
        let (c, camera) = p.camera.forward(&pooled)?;
        let scale = self.config.reference_scale * c.data[0].exp();
        let (w, hgt) = (stack.grid.width, stack.grid.height);
        let cam = CameraWP::new(scale, c.data[1], c.data[2], w, hgt)?;
        Ok((
            body,
            cam,
            BodyTape {
                global,
                embed,
                graph,
                offsets,
                camera,
                scale,
            },
        ))
    }

    /// Clothed branch on an arbitrary body mesh with the template topology.
    pub fn forward_clothed(&self, body: &MeshGraph, cam: &CameraWP, map: &FeatureMap) -> Result<(MeshGraph, ClothedTape)> {
        if !body.shares_topology(&self.template) && body.edges() != self.template.edges() {
            return Err(Error::Structural("body mesh does not share the template topology".into()));
        }
        let offsets = self.config.pattern.offsets();
        let (vf, features) = assemble_vertex_features(body, map, cam, &offsets)?;
        let mut x = assemble_edge_features(&vf, body.edges(), body.num_vertices())?;
        let mut convs = Vec::with_capacity(self.params.edge.len());
        for l in &self.params.edge {
            let (y, t) = l.forward(&x, &self.edge_adjacency)?;
            convs.push(t);
            x = y;
        }
        let disp = edge_to_vertex(&x, body);
        let verts = body.vertices().iter().zip(from_mat(&disp)).map(|(b, d)| b + d).collect();
        let clothed = body.with_vertices(verts).with_role(MeshRole::Clothed);
        Ok((
            clothed,
            ClothedTape {
                body: body.clone(),
                camera: *cam,
                features,
                convs,
            },
        ))
    }

    pub fn forward_with_tape(&self, stack: &crate::encode::ImageStack) -> Result<(Prediction, ForwardTape)> {
        let (body, camera, body_tape) = self.forward_body(stack)?;
        let (map, local) = encode_local(stack, &self.params.local)?;
        let (clothed, clothed_tape) = self.forward_clothed(&body, &camera, &map)?;
        Ok((
            Prediction { body, camera, clothed },
            ForwardTape {
                body: body_tape,
                local,
                map,
                clothed: clothed_tape,
            },
        ))
    }

    pub fn forward(&self, sample: &Sample) -> Result<Prediction> {
        Ok(self.forward_with_tape(&sample.stack)?.0)
    }

    /// Clothed branch driven by the ground-truth body and camera.
    pub fn forward_clothed_from_gt(&self, sample: &Sample) -> Result<MeshGraph> {
        let (map, _) = encode_local(&sample.stack, &self.params.local)?;
        Ok(self.forward_clothed(&sample.body, &sample.camera, &map)?.0)
    }

    /// Backward of [`Network::forward_clothed`]. Accumulates edge-layer
    /// gradients and the feature-map gradient; returns the gradients with
    /// respect to the body vertices and the camera `(scale, tx, ty)`.
    pub fn backward_clothed(
        &self,
        tape: ClothedTape,
        map: &FeatureMap,
        d_clothed: &[Vec3],
        grads: &mut NetParams,
        d_map: &mut Grid,
    ) -> Result<(Vec<Vec3>, [f64; 3])> {
        let body = &tape.body;
        let d_disp = to_mat(d_clothed);
        let mut g = edge_to_vertex_backward(&d_disp, body);
        for ((l, t), gl) in self.params.edge.iter().zip(tape.convs).zip(&mut grads.edge).rev() {
            g = l.backward(t, &g, &self.edge_adjacency, gl);
        }
        let d_vf = assemble_edge_features_backward(&g, body.edges(), body.num_vertices());
        let fg = assemble_vertex_features_backward(body, map, &tape.camera, tape.features, &d_vf)?;
        for (d, s) in d_map.data.iter_mut().zip(&fg.map.data) {
            *d += s;
        }
        let d_body = d_clothed.iter().zip(&fg.vertices).map(|(a, b)| a + b).collect();
        Ok((d_body, fg.camera))
    }

    /// Backward of [`Network::forward_body`].
    pub fn backward_body(&self, tape: BodyTape, d_body: &[Vec3], d_camera: [f64; 3], grads: &mut NetParams) {
        let p = &self.params;
        let d_off = to_mat(d_body);
        let mut dh = p.offsets.backward(tape.offsets, &d_off, &mut grads.offsets);
        let dc = Mat::from_vec(1, 3, vec![d_camera[0] * tape.scale, d_camera[1], d_camera[2]]);
        let d_pooled = p.camera.backward(tape.camera, &dc, &mut grads.camera);
        let n = dh.rows as f64;
        for i in 0..dh.rows {
            for (d, g) in dh.row_mut(i).iter_mut().zip(&d_pooled.data) {
                *d += g / n;
            }
        }
        for ((l, t), gl) in p.graph.iter().zip(tape.graph).zip(&mut grads.graph).rev() {
            dh = l.backward(t, &dh, &self.vertex_adjacency, gl);
        }
        let dx = p.embed.backward(tape.embed, &dh, &mut grads.embed);
        let mut d_code = vec![0.0; dx.cols - 3];
        for i in 0..dx.rows {
            for (d, g) in d_code.iter_mut().zip(&dx.row(i)[3..]) {
                *d += g;
            }
        }
        encode_global_backward(tape.global, &d_code, &p.global, &mut grads.global);
    }
}

#[cfg(test)]
mod tests;
