use super::Mat;
use crate::mesh::MeshGraph;

/// Mean of incident edge rows at every vertex. Vertices without edges get zero.
pub fn edge_to_vertex(edge_values: &Mat, mesh: &MeshGraph) -> Mat {
    assert_eq!(edge_values.rows, mesh.num_edges());
    let cols = edge_values.cols;
    let mut out = Mat::zeros(mesh.num_vertices(), cols);
    let mut degree = vec![0usize; mesh.num_vertices()];
    for (e, &[a, b]) in mesh.edges().iter().enumerate() {
        for v in [a, b] {
            degree[v] += 1;
            for (o, x) in out.row_mut(v).iter_mut().zip(edge_values.row(e)) {
                *o += x;
            }
        }
    }
    for (v, &d) in degree.iter().enumerate() {
        if d > 0 {
            out.row_mut(v).iter_mut().for_each(|o| *o /= d as f64);
        }
    }
    out
}

pub fn edge_to_vertex_backward(upstream: &Mat, mesh: &MeshGraph) -> Mat {
    assert_eq!(upstream.rows, mesh.num_vertices());
    let cols = upstream.cols;
    let mut degree = vec![0usize; mesh.num_vertices()];
    for &[a, b] in mesh.edges() {
        degree[a] += 1;
        degree[b] += 1;
    }
    let mut out = Mat::zeros(mesh.num_edges(), cols);
    for (e, &[a, b]) in mesh.edges().iter().enumerate() {
        for v in [a, b] {
            let w = 1.0 / degree[v] as f64;
            for (o, g) in out.row_mut(e).iter_mut().zip(upstream.row(v)) {
                *o += w * g;
            }
        }
    }
    out
}
