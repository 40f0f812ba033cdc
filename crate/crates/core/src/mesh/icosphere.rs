use std::collections::HashMap;

use super::{MeshGraph, MeshRole};
use crate::{Error, Result, Vec3};

pub const MAX_SUBDIVISIONS: u32 = 5;

/// Unit icosphere: an icosahedron subdivided `subdivisions` times by edge
/// midpoints, with every vertex projected back to the unit sphere.
pub fn make_icosphere(subdivisions: u32) -> Result<MeshGraph> {
    if subdivisions > MAX_SUBDIVISIONS {
        return Err(Error::InvalidArgument(format!(
            "icosphere subdivisions must be <= {MAX_SUBDIVISIONS}, got {subdivisions}"
        )));
    }
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .into_iter()
    .map(|(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                vertices.push(((vertices[a] + vertices[b]) * 0.5).normalize());
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    MeshGraph::new(vertices, faces, MeshRole::Template)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::validate_manifold;

    #[test]
    fn counts_follow_recurrences() {
        let mut prev = make_icosphere(0).unwrap();
        assert_eq!((prev.num_vertices(), prev.num_edges(), prev.num_faces()), (12, 30, 20));
        for n in 1..=3 {
            let m = make_icosphere(n).unwrap();
            assert_eq!(m.num_vertices(), prev.num_vertices() + prev.num_edges());
            assert_eq!(m.num_edges(), 2 * prev.num_edges() + 3 * prev.num_faces());
            assert_eq!(m.num_faces(), 4 * prev.num_faces());
            assert_eq!(m.euler_characteristic(), 2);
            assert!(validate_manifold(&m).pass);
            prev = m;
        }
        let one = make_icosphere(1).unwrap();
        assert_eq!((one.num_vertices(), one.num_edges(), one.num_faces()), (42, 120, 80));
    }

    #[test]
    fn vertices_on_unit_sphere_and_outward() {
        let m = make_icosphere(2).unwrap();
        assert!(m.vertices().iter().all(|v| (v.norm() - 1.0).abs() < 1e-14));
        for &[a, b, c] in m.faces() {
            let [a, b, c] = [a, b, c].map(|i| m.vertices()[i]);
            assert!((b - a).cross(&(c - a)).dot(&(a + b + c)) > 0.0);
        }
    }

    #[test]
    fn too_many_subdivisions() {
        assert!(make_icosphere(6).is_err());
    }
}
