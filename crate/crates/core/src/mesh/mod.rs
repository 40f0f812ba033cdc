//! Fixed-topology 2-manifold triangle graphs.
//!
//! Every 3D model in the pipeline (template, body mesh, clothed surface and
//! their ground truths) is a [`MeshGraph`]. Deformations only move vertices, so
//! the face list and the canonical edge list live behind a shared [`Topology`]
//! and are never rebuilt once a template exists.

mod adjacency;
mod icosphere;
mod normals;
mod obj;
mod validate;

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

pub use adjacency::{build_edge_adjacency, build_vertex_adjacency, EdgeAdjacency, VertexAdjacency};
pub use icosphere::{make_icosphere, MAX_SUBDIVISIONS};
pub use normals::{face_normals_raw, vertex_normals, vertex_normals_backward};
pub use obj::{load_obj, write_obj};
pub use validate::{validate_manifold, ValidationReport, Violation, ViolationKind};

/// What a mesh stands for in the reconstruction pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshRole {
    /// The undeformed template every other model is deformed from.
    Template,
    /// A predicted body mesh.
    Body,
    /// A predicted clothed surface.
    Clothed,
    /// Ground truth (body or clothed).
    GroundTruth,
}

/// Faces plus the canonical edge list derived from them.
#[derive(Debug, PartialEq, Eq)]
pub struct Topology {
    faces: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
}

impl Topology {
    /// Edges are unordered pairs stored as `[lo, hi]`, sorted lexicographically.
    /// This ordering depends on the face list only.
    fn from_faces(faces: Vec<[usize; 3]>) -> Self {
        let mut set = BTreeSet::new();
        for f in &faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                if a != b {
                    set.insert([a.min(b), a.max(b)]);
                }
            }
        }
        Topology {
            faces,
            edges: set.into_iter().collect(),
        }
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    /// Index of the canonical edge `{a, b}`, if present.
    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        let key = [a.min(b), a.max(b)];
        self.edges.binary_search(&key).ok()
    }
}

/// A triangle mesh graph: vertex positions over a shared topology.
#[derive(Clone, Debug)]
pub struct MeshGraph {
    vertices: Vec<Vec3>,
    topology: Arc<Topology>,
    role: MeshRole,
}

impl MeshGraph {
    /// Builds a mesh from positions and counter-clockwise faces.
    ///
    /// Fails if a face references a vertex outside `vertices`.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>, role: MeshRole) -> Result<Self> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&i| i >= n) {
                return Err(Error::Structural(format!(
                    "face {fi} references vertex {bad} but the mesh has {n} vertices"
                )));
            }
        }
        Ok(MeshGraph {
            vertices,
            topology: Arc::new(Topology::from_faces(faces)),
            role,
        })
    }

    /// Same topology, new positions. Panics if the vertex count changes.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Self {
        assert_eq!(
            vertices.len(),
            self.vertices.len(),
            "deformation must preserve the vertex count"
        );
        MeshGraph {
            vertices,
            topology: Arc::clone(&self.topology),
            role: self.role,
        }
    }

    pub fn with_role(mut self, role: MeshRole) -> Self {
        self.role = role;
        self
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.topology.faces
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.topology.edges
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    pub fn role(&self) -> MeshRole {
        self.role
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.topology.edges.len()
    }

    pub fn num_faces(&self) -> usize {
        self.topology.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty() || self.topology.faces.is_empty()
    }

    /// V - E + F.
    pub fn euler_characteristic(&self) -> i64 {
        self.num_vertices() as i64 - self.num_edges() as i64 + self.num_faces() as i64
    }

    /// True when both meshes use the same face list (and therefore edge set).
    pub fn shares_topology(&self, other: &MeshGraph) -> bool {
        Arc::ptr_eq(&self.topology, &other.topology) || *self.topology == *other.topology
    }

    pub fn centroid(&self) -> Vec3 {
        if self.vertices.is_empty() {
            return Vec3::zeros();
        }
        self.vertices.iter().sum::<Vec3>() / self.vertices.len() as f64
    }

    /// Vertex positions flattened as `[x0, y0, z0, x1, ...]`.
    pub fn flat_positions(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
    }

    /// The same surface with every face's winding reversed.
    pub fn flipped(&self) -> MeshGraph {
        let faces = self.faces().iter().map(|&[a, b, c]| [a, c, b]).collect();
        MeshGraph {
            vertices: self.vertices.clone(),
            topology: Arc::new(Topology::from_faces(faces)),
            role: self.role,
        }
    }
}

/// Unit regular tetrahedron with outward counter-clockwise faces.
pub fn tetrahedron() -> MeshGraph {
    let s = 1.0 / 3f64.sqrt();
    let vertices = vec![
        Vec3::new(s, s, s),
        Vec3::new(s, -s, -s),
        Vec3::new(-s, s, -s),
        Vec3::new(-s, -s, s),
    ];
    let faces = vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
    MeshGraph::new(vertices, faces, MeshRole::Template).expect("static indices are valid")
}
