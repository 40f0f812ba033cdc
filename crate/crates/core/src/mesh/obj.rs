//! Wavefront OBJ subset: `v x y z` and triangular `f i j k` records.

use std::fmt::Write as _;

use super::{MeshGraph, MeshRole};
use crate::{Error, Result, Vec3};

fn parse_index(token: &str, line: usize) -> Result<usize> {
    // accept `i`, `i/t`, `i//n`, `i/t/n`; only the position index is used
    let head = token.split('/').next().unwrap_or(token);
    let idx: i64 = head.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid face index '{token}'"),
    })?;
    if idx < 1 {
        return Err(Error::Parse {
            line,
            message: format!("face index {idx} is not a positive 1-based index"),
        });
    }
    Ok(idx as usize - 1)
}

/// Parses OBJ text. Lines other than `v` and `f` are ignored. Loaded meshes
/// carry [`MeshRole::GroundTruth`].
pub fn load_obj(bytes: &[u8]) -> Result<MeshGraph> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 0,
        message: format!("input is not UTF-8: {e}"),
    })?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = content.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<&str> = tokens.collect();
                if coords.len() != 3 && coords.len() != 4 {
                    return Err(Error::Parse {
                        line,
                        message: format!("vertex needs 3 coordinates, found {}", coords.len()),
                    });
                }
                let mut xyz = [0.0f64; 3];
                for (slot, tok) in xyz.iter_mut().zip(&coords) {
                    *slot = tok.parse().map_err(|_| Error::Parse {
                        line,
                        message: format!("invalid coordinate '{tok}'"),
                    })?;
                }
                if xyz.iter().any(|c| !c.is_finite()) {
                    return Err(Error::Parse {
                        line,
                        message: "non-finite coordinate".into(),
                    });
                }
                vertices.push(Vec3::from(xyz));
            }
            Some("f") => {
                let idx: Vec<&str> = tokens.collect();
                if idx.len() != 3 {
                    return Err(Error::Parse {
                        line,
                        message: format!(
                            "only triangular faces are supported, found {} indices",
                            idx.len()
                        ),
                    });
                }
                let mut face = [0usize; 3];
                for (slot, tok) in face.iter_mut().zip(&idx) {
                    *slot = parse_index(tok, line)?;
                }
                faces.push(face);
            }
            _ => {}
        }
    }
    MeshGraph::new(vertices, faces, MeshRole::GroundTruth)
}

/// Serializes a mesh as OBJ. Coordinates use the shortest representation that
/// parses back to the identical `f64`.
pub fn write_obj(mesh: &MeshGraph) -> Result<Vec<u8>> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let mut out = String::new();
    for v in mesh.vertices() {
        writeln!(out, "v {:?} {:?} {:?}", v.x, v.y, v.z).unwrap();
    }
    for f in mesh.faces() {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    Ok(out.into_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{make_icosphere, tetrahedron};

    const TETRA: &str = "# tetra\nv 1 1 1\nv 1 -1 -1\nv -1 1 -1\nv -1 -1 1\n\
                         f 1 2 3\nf 1 4 2\nf 1 3 4\nf 2 4 3\n";

    #[test]
    fn tetrahedron_counts() {
        let m = load_obj(TETRA.as_bytes()).unwrap();
        assert_eq!((m.num_vertices(), m.num_edges(), m.num_faces()), (4, 6, 4));
    }

    #[test]
    fn out_of_range_index() {
        let src = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 2 5\n";
        assert!(matches!(load_obj(src.as_bytes()), Err(Error::Structural(_))));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let src = "v 0 0 0\nv 1 zero 0\n";
        match load_obj(src.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn quads_rejected() {
        let src = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
        match load_obj(src.as_bytes()) {
            Err(Error::Parse { line: 5, message }) => assert!(message.contains("triangular")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn slash_forms_and_ignored_records() {
        let src = "o thing\nvn 0 0 1\nvt 0 0\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2//1 3/2\n";
        let m = load_obj(src.as_bytes()).unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn write_tetrahedron() {
        let text = String::from_utf8(write_obj(&tetrahedron()).unwrap()).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 4);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 4);
    }

    #[test]
    fn icosphere_round_trip_is_exact() {
        let m = make_icosphere(1).unwrap();
        let back = load_obj(&write_obj(&m).unwrap()).unwrap();
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.faces(), m.faces());
        assert_eq!(back.edges(), m.edges());
    }

    #[test]
    fn empty_mesh_cannot_be_written() {
        let empty = MeshGraph::new(vec![], vec![], MeshRole::Body).unwrap();
        assert!(matches!(write_obj(&empty), Err(Error::EmptyMesh)));
    }
}
