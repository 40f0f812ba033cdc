use super::MeshGraph;
use crate::{Error, Result, Vec3};

/// Unnormalized face normals `(b - a) x (c - a)`; length is twice the area.
pub fn face_normals_raw(mesh: &MeshGraph) -> Vec<Vec3> {
    let v = mesh.vertices();
    mesh.faces()
        .iter()
        .map(|&[a, b, c]| (v[b] - v[a]).cross(&(v[c] - v[a])))
        .collect()
}

fn accumulate(mesh: &MeshGraph) -> Vec<Vec3> {
    let mut acc = vec![Vec3::zeros(); mesh.num_vertices()];
    for (f, n) in mesh.faces().iter().zip(face_normals_raw(mesh)) {
        for &i in f {
            acc[i] += n;
        }
    }
    acc
}

/// Area-weighted vertex normals, normalized to unit length.
pub fn vertex_normals(mesh: &MeshGraph) -> Result<Vec<Vec3>> {
    accumulate(mesh)
        .into_iter()
        .enumerate()
        .map(|(i, n)| {
            let len = n.norm();
            if len > 0.0 && len.is_finite() {
                Ok(n / len)
            } else {
                Err(Error::DegenerateNormal { vertex: i })
            }
        })
        .collect()
}

/// Pulls a gradient on the unit vertex normals back to vertex positions.
pub fn vertex_normals_backward(mesh: &MeshGraph, grad_normals: &[Vec3]) -> Result<Vec<Vec3>> {
    assert_eq!(grad_normals.len(), mesh.num_vertices());
    let acc = accumulate(mesh);
    // d/d(acc) of acc/|acc|: (g - u (u.g)) / |acc|
    let mut grad_acc = Vec::with_capacity(acc.len());
    for (i, (n, g)) in acc.iter().zip(grad_normals).enumerate() {
        let len = n.norm();
        if len == 0.0 {
            return Err(Error::DegenerateNormal { vertex: i });
        }
        let u = n / len;
        grad_acc.push((g - u * u.dot(g)) / len);
    }
    let v = mesh.vertices();
    let mut grad = vec![Vec3::zeros(); v.len()];
    for &[a, b, c] in mesh.faces() {
        let g = grad_acc[a] + grad_acc[b] + grad_acc[c];
        let e1 = v[b] - v[a];
        let e2 = v[c] - v[a];
        let d1 = e2.cross(&g);
        let d2 = g.cross(&e1);
        grad[b] += d1;
        grad[c] += d2;
        grad[a] -= d1 + d2;
    }
    Ok(grad)
}
