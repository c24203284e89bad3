//! Minimal Wavefront OBJ reader/writer: `v`, `vt` and triangular `f`
//! records. Other record types are ignored.

use std::fmt::Write as _;
use std::path::Path;

use super::{TriMesh, UvChart};
use crate::error::{Error, Result};
use crate::{Vec2, Vec3};

pub fn load_obj(path: impl AsRef<Path>) -> Result<TriMesh> {
    load_obj_with_uv(path).map(|(mesh, _)| mesh)
}

/// Loads a mesh and, when every face references `vt` records, the per-face
/// UV triangles.
pub fn load_obj_with_uv(path: impl AsRef<Path>) -> Result<(TriMesh, Option<Vec<[Vec2; 3]>>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, path)
}

fn parse_obj(text: &str, path: &Path) -> Result<(TriMesh, Option<Vec<[Vec2; 3]>>)> {
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut texcoords: Vec<Vec2> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut face_tex: Vec<Option<[usize; 3]>> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        let Some(tag) = tokens.next() else { continue };
        let err = |msg: String| Error::parse(path, lineno + 1, msg);
        match tag {
            "v" => {
                let xs = parse_floats(tokens, 3).map_err(err)?;
                vertices.push(Vec3::new(xs[0], xs[1], xs[2]));
            }
            "vt" => {
                let xs = parse_floats(tokens, 2).map_err(err)?;
                texcoords.push(Vec2::new(xs[0], xs[1]));
            }
            "f" => {
                let refs: Vec<&str> = tokens.collect();
                if refs.len() != 3 {
                    return Err(Error::Topology(format!(
                        "{}:{}: face with {} corners, only triangles are supported",
                        path.display(),
                        lineno + 1,
                        refs.len()
                    )));
                }
                let mut vi = [0usize; 3];
                let mut ti = [0usize; 3];
                let mut has_tex = true;
                for (k, r) in refs.iter().enumerate() {
                    let mut parts = r.split('/');
                    let v = parts.next().unwrap_or("");
                    vi[k] = resolve_index(v, vertices.len())
                        .map_err(|m| err(m))
                        .and_then(|i| {
                            i.ok_or_else(|| {
                                Error::Topology(format!(
                                    "{}:{}: vertex reference `{v}` out of range",
                                    path.display(),
                                    lineno + 1
                                ))
                            })
                        })?;
                    match parts.next() {
                        Some(t) if !t.is_empty() => {
                            ti[k] = resolve_index(t, texcoords.len())
                                .map_err(|m| err(m))?
                                .ok_or_else(|| err(format!("texture reference `{t}` out of range")))?;
                        }
                        _ => has_tex = false,
                    }
                }
                faces.push(vi);
                face_tex.push(has_tex.then_some(ti));
            }
            _ => {}
        }
    }

    let mesh = TriMesh::new(vertices, faces)?;
    let uvs = if !face_tex.is_empty() && face_tex.iter().all(Option::is_some) {
        Some(
            face_tex
                .into_iter()
                .map(|t| t.unwrap().map(|i| texcoords[i]))
                .collect(),
        )
    } else {
        None
    };
    Ok((mesh, uvs))
}

fn parse_floats<'a>(tokens: impl Iterator<Item = &'a str>, n: usize) -> Result<Vec<f64>, String> {
    let xs: Vec<f64> = tokens
        .take(n)
        .map(|t| t.parse::<f64>().map_err(|_| format!("malformed number `{t}`")))
        .collect::<Result<_, _>>()?;
    if xs.len() < n {
        return Err(format!("expected {n} coordinates, found {}", xs.len()));
    }
    Ok(xs)
}

/// Resolves a 1-based (or negative, relative) OBJ index. `Ok(None)` means
/// the index is syntactically valid but out of range.
fn resolve_index(token: &str, len: usize) -> Result<Option<usize>, String> {
    let i: i64 = token
        .parse()
        .map_err(|_| format!("malformed index `{token}`"))?;
    let resolved = match i {
        0 => None,
        i if i > 0 => Some(i as usize - 1),
        i => (len as i64 + i).try_into().ok(),
    };
    Ok(resolved.filter(|&r| r < len))
}

/// Writes `v` records, optional per-corner `vt` records and `f` records.
pub fn save_obj(path: impl AsRef<Path>, mesh: &TriMesh, chart: Option<&UvChart>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    if let Some(chart) = chart {
        for tri in chart.face_uvs() {
            for p in tri {
                let _ = writeln!(out, "vt {} {}", p.x, p.y);
            }
        }
        for (f, face) in mesh.faces().iter().enumerate() {
            let _ = writeln!(
                out,
                "f {}/{} {}/{} {}/{}",
                face[0] + 1,
                3 * f + 1,
                face[1] + 1,
                3 * f + 2,
                face[2] + 1,
                3 * f + 3
            );
        }
    } else {
        for face in mesh.faces() {
            let _ = writeln!(out, "f {} {} {}", face[0] + 1, face[1] + 1, face[2] + 1);
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{icosphere, latlong_chart};

    fn parse(text: &str) -> Result<(TriMesh, Option<Vec<[Vec2; 3]>>)> {
        parse_obj(text, Path::new("test.obj"))
    }

    #[test]
    fn minimal_triangle() {
        let (m, uv) = parse("# one\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        assert_eq!(m.num_vertices(), 3);
        assert_eq!(m.num_faces(), 1);
        assert!(uv.is_none());
    }

    #[test]
    fn slashed_and_negative_references() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nvn 0 0 1\nf -3/1/1 -2/2/1 -1/3/1\n";
        let (m, uv) = parse(text).unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2]]);
        assert_eq!(uv.unwrap()[0][1], Vec2::new(1.0, 0.0));
    }

    #[test]
    fn quad_is_a_topology_error() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
        assert!(matches!(parse(text), Err(Error::Topology(_))));
    }

    #[test]
    fn malformed_and_out_of_range() {
        assert!(matches!(parse("v 0 zero 0\n"), Err(Error::Parse { line: 1, .. })));
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n";
        assert!(matches!(parse(text), Err(Error::Topology(_))));
    }

    #[test]
    fn icosphere_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sphere.obj");
        let mesh = icosphere(2);
        let chart = latlong_chart(&mesh, 64, 64);
        save_obj(&path, &mesh, Some(&chart)).unwrap();
        let (back, uv) = load_obj_with_uv(&path).unwrap();
        assert_eq!(back.num_vertices(), mesh.num_vertices());
        assert_eq!(back.faces(), mesh.faces());
        assert_eq!(back.vertices, mesh.vertices);
        assert_eq!(uv.unwrap(), chart.face_uvs());
    }
}
