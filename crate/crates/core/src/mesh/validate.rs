use serde::{Deserialize, Serialize};

use super::MeshGraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// Edge with a single incident face; `indices` holds its two vertices.
    BoundaryEdge,
    /// Edge with three or more incident faces; `indices` holds its two vertices.
    NonManifoldEdge,
    /// Edge traversed in the same direction by both incident faces.
    InconsistentWinding,
    /// Face with a repeated vertex or zero area; `indices` holds the face index.
    DegenerateFace,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub indices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub pass: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn from_violations(violations: Vec<Violation>) -> Self {
        ValidationReport {
            pass: violations.is_empty(),
            violations,
        }
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }
}

/// Per canonical edge, the faces that use it and whether each traverses it
/// from the lower to the higher vertex index.
pub(crate) fn edge_incidence(mesh: &MeshGraph) -> Vec<Vec<(usize, bool)>> {
    let topo = mesh.topology();
    let mut inc = vec![Vec::new(); mesh.num_edges()];
    for (fi, f) in mesh.faces().iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            if a == b {
                continue;
            }
            let e = topo.edge_index(a, b).expect("edge list is derived from faces");
            inc[e].push((fi, a < b));
        }
    }
    inc
}

/// Lists every 2-manifold violation of `mesh`. Never fails.
pub fn validate_manifold(mesh: &MeshGraph) -> ValidationReport {
    let mut violations = Vec::new();
    let verts = mesh.vertices();

    for (fi, &[a, b, c]) in mesh.faces().iter().enumerate() {
        let repeated = a == b || b == c || a == c;
        let zero_area = !repeated && {
            let n = (verts[b] - verts[a]).cross(&(verts[c] - verts[a]));
            n.norm() == 0.0
        };
        if repeated || zero_area {
            violations.push(Violation {
                kind: ViolationKind::DegenerateFace,
                indices: vec![fi],
            });
        }
    }

    for (e, faces) in edge_incidence(mesh).iter().enumerate() {
        let [lo, hi] = mesh.edges()[e];
        let kind = match faces.len() {
            0 => continue,
            1 => Some(ViolationKind::BoundaryEdge),
            2 if faces[0].1 == faces[1].1 => Some(ViolationKind::InconsistentWinding),
            2 => None,
            _ => Some(ViolationKind::NonManifoldEdge),
        };
        if let Some(kind) = kind {
            violations.push(Violation {
                kind,
                indices: vec![lo, hi],
            });
        }
    }

    ValidationReport::from_violations(violations)
}
