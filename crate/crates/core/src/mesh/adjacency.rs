use super::validate::edge_incidence;
use super::MeshGraph;
use crate::{Error, Result};

/// Four neighbouring edges per edge.
///
/// For edge `{i, j}` with `i < j`, the first incident face is the one that
/// traverses `i -> j`. Its remaining two edges, taken in winding order starting
/// after the shared edge, are `(e1, e2)`; the second face gives `(e3, e4)` the
/// same way. Hence `e1` and `e3` each touch one endpoint of the shared edge at
/// the "leading" corner, and `e2`/`e4` close the two triangles.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeAdjacency {
    neighbors: Vec<[usize; 4]>,
}

impl EdgeAdjacency {
    /// Wraps an explicit neighbour table (no validation).
    pub fn from_neighbors(neighbors: Vec<[usize; 4]>) -> Self {
        EdgeAdjacency { neighbors }
    }

    pub fn neighbors(&self, edge: usize) -> [usize; 4] {
        self.neighbors[edge]
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn as_slice(&self) -> &[[usize; 4]] {
        &self.neighbors
    }
}

/// The two edges of `face` following the directed edge `from -> to`.
fn following_edges(mesh: &MeshGraph, face: [usize; 3], from: usize, to: usize) -> [usize; 2] {
    let k = (0..3)
        .find(|&k| face[k] == from && face[(k + 1) % 3] == to)
        .expect("face contains the directed edge");
    let third = face[(k + 2) % 3];
    let topo = mesh.topology();
    [
        topo.edge_index(to, third).expect("edge of face"),
        topo.edge_index(third, from).expect("edge of face"),
    ]
}

/// Builds the four-neighbour edge relation. Requires every edge to have exactly
/// two consistently wound incident faces.
pub fn build_edge_adjacency(mesh: &MeshGraph) -> Result<EdgeAdjacency> {
    let incidence = edge_incidence(mesh);
    let mut neighbors = Vec::with_capacity(mesh.num_edges());
    for (e, faces) in incidence.iter().enumerate() {
        let [lo, hi] = mesh.edges()[e];
        let (first, second) = match faces.as_slice() {
            [a, b] if a.1 != b.1 => {
                if a.1 {
                    (a.0, b.0)
                } else {
                    (b.0, a.0)
                }
            }
            [_, _] => {
                return Err(Error::Structural(format!(
                    "edge {e} ({lo}, {hi}) is wound the same way by both faces"
                )))
            }
            _ => {
                return Err(Error::Structural(format!(
                    "edge {e} ({lo}, {hi}) has {} incident faces, expected 2",
                    faces.len()
                )))
            }
        };
        let [e1, e2] = following_edges(mesh, mesh.faces()[first], lo, hi);
        let [e3, e4] = following_edges(mesh, mesh.faces()[second], hi, lo);
        neighbors.push([e1, e2, e3, e4]);
    }
    Ok(EdgeAdjacency { neighbors })
}

/// Row-stochastic vertex averaging operator with self loops, in CSR form.
///
/// Row `i` holds `1 / (deg(i) + 1)` at column `i` and at each neighbour.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexAdjacency {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl VertexAdjacency {
    pub fn num_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// Dense copy, row-major `n x n`. Test and debugging helper.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.num_rows();
        let mut out = vec![vec![0.0; n]; n];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        out
    }

    /// `A X` for a row-major `n x width` matrix `x`.
    pub fn apply(&self, x: &[f64], width: usize) -> Vec<f64> {
        let n = self.num_rows();
        assert_eq!(x.len(), n * width);
        let mut out = vec![0.0; n * width];
        for i in 0..n {
            let dst = &mut out[i * width..(i + 1) * width];
            for (j, a) in self.row(i) {
                for (d, s) in dst.iter_mut().zip(&x[j * width..(j + 1) * width]) {
                    *d += a * s;
                }
            }
        }
        out
    }

    /// `A^T X` for a row-major `n x width` matrix `x`.
    pub fn apply_transpose(&self, x: &[f64], width: usize) -> Vec<f64> {
        let n = self.num_rows();
        assert_eq!(x.len(), n * width);
        let mut out = vec![0.0; n * width];
        for i in 0..n {
            let src = &x[i * width..(i + 1) * width];
            for (j, a) in self.row(i) {
                for (d, s) in out[j * width..(j + 1) * width].iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        out
    }
}

pub fn build_vertex_adjacency(mesh: &MeshGraph) -> VertexAdjacency {
    let n = mesh.num_vertices();
    let mut nbrs: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for &[a, b] in mesh.edges() {
        nbrs[a].push(b);
        nbrs[b].push(a);
    }
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    row_ptr.push(0);
    for mut row in nbrs {
        row.sort_unstable();
        let w = 1.0 / row.len() as f64;
        vals.extend(std::iter::repeat_n(w, row.len()));
        cols.extend(row);
        row_ptr.push(cols.len());
    }
    VertexAdjacency { row_ptr, cols, vals }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{make_icosphere, tetrahedron, MeshRole};
    use crate::Vec3;
    use std::collections::BTreeSet;

    #[test]
    fn tetrahedron_neighbors_match_incidence_enumeration() {
        let t = tetrahedron();
        let adj = build_edge_adjacency(&t).unwrap();
        for (e, &[a, b]) in t.edges().iter().enumerate() {
            // brute force: edges touching a or b but not both
            let expected: BTreeSet<usize> = t
                .edges()
                .iter()
                .enumerate()
                .filter(|(_, &[c, d])| {
                    let touches_a = c == a || d == a;
                    let touches_b = c == b || d == b;
                    touches_a ^ touches_b
                })
                .map(|(i, _)| i)
                .collect();
            let got: BTreeSet<usize> = adj.neighbors(e).into_iter().collect();
            assert_eq!(got.len(), 4, "edge {e} has repeated neighbours");
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn canonical_order_follows_winding() {
        let t = tetrahedron();
        let adj = build_edge_adjacency(&t).unwrap();
        let e01 = t.topology().edge_index(0, 1).unwrap();
        // [0,1,2] traverses 0 -> 1 and continues 1 -> 2, 2 -> 0
        let [e1, e2, e3, e4] = adj.neighbors(e01);
        let idx = |a, b| t.topology().edge_index(a, b).unwrap();
        assert_eq!((e1, e2), (idx(1, 2), idx(2, 0)));
        // second face [0,3,1] traversed 1 -> 0 continues 0 -> 3, 3 -> 1
        assert_eq!((e3, e4), (idx(0, 3), idx(3, 1)));
    }

    #[test]
    fn icosahedron_adjacency_symmetric() {
        let ico = make_icosphere(0).unwrap();
        let adj = build_edge_adjacency(&ico).unwrap();
        assert_eq!(adj.len(), 30);
        for e in 0..30 {
            for n in adj.neighbors(e) {
                assert!(adj.neighbors(n).contains(&e), "{e} -> {n} not symmetric");
            }
        }
    }

    #[test]
    fn single_triangle_is_rejected() {
        let tri = MeshGraph::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            vec![[0, 1, 2]],
            MeshRole::Body,
        )
        .unwrap();
        let err = build_edge_adjacency(&tri).unwrap_err();
        assert!(matches!(err, Error::Structural(ref m) if m.contains("edge 0")));
    }

    #[test]
    fn k3_rows_are_thirds() {
        let tri = MeshGraph::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            vec![[0, 1, 2]],
            MeshRole::Body,
        )
        .unwrap();
        let a = build_vertex_adjacency(&tri).to_dense();
        for row in a {
            for v in row {
                assert_eq!(v, 1.0 / 3.0);
            }
        }
    }

    #[test]
    fn icosahedron_rows_are_sixths() {
        let a = build_vertex_adjacency(&make_icosphere(0).unwrap());
        for i in 0..12 {
            let row: Vec<_> = a.row(i).collect();
            assert_eq!(row.len(), 6);
            assert!(row.iter().all(|&(_, v)| v == 1.0 / 6.0));
        }
    }

    #[test]
    fn tetrahedron_averaging_matches_dense_multiply() {
        let t = tetrahedron();
        let a = build_vertex_adjacency(&t);
        let x = t.flat_positions();
        let got = a.apply(&x, 3);
        let dense = a.to_dense();
        for i in 0..4 {
            // the tetrahedron graph is complete: every vertex averages all four
            let centroid: Vec3 = t.vertices().iter().sum::<Vec3>() / 4.0;
            for k in 0..3 {
                let oracle: f64 = (0..4).map(|j| dense[i][j] * x[j * 3 + k]).sum();
                assert!((got[i * 3 + k] - oracle).abs() < 1e-15);
                assert!((got[i * 3 + k] - centroid[k]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn transpose_apply_matches_dense() {
        let ico = make_icosphere(1).unwrap();
        let a = build_vertex_adjacency(&ico);
        let n = ico.num_vertices();
        let x: Vec<f64> = (0..n * 2).map(|i| (i as f64 * 0.37).sin()).collect();
        let got = a.apply_transpose(&x, 2);
        let d = a.to_dense();
        for j in 0..n {
            for k in 0..2 {
                let oracle: f64 = (0..n).map(|i| d[i][j] * x[i * 2 + k]).sum();
                assert!((got[j * 2 + k] - oracle).abs() < 1e-14);
            }
        }
    }
}
