use std::collections::HashMap;
use std::f64::consts::{PI, TAU};

use super::{TriMesh, UvChart};
use crate::{Vec2, Vec3};

/// Unit icosphere with poles on ±z, subdivided `levels` times.
///
/// The base icosahedron places its two rings at longitudes `72k` and
/// `36 + 72k` degrees, so the mesh is mirror-symmetric about the `y = 0`
/// plane at every subdivision level.
pub fn icosphere(levels: usize) -> TriMesh {
    let zr = 1.0 / 5f64.sqrt();
    let rr = 2.0 / 5f64.sqrt();
    let mut vertices = vec![Vec3::new(0.0, 0.0, 1.0)];
    for k in 0..5 {
        let a = TAU * k as f64 / 5.0;
        vertices.push(Vec3::new(rr * a.cos(), rr * a.sin(), zr));
    }
    for k in 0..5 {
        let a = TAU * k as f64 / 5.0 + PI / 5.0;
        vertices.push(Vec3::new(rr * a.cos(), rr * a.sin(), -zr));
    }
    vertices.push(Vec3::new(0.0, 0.0, -1.0));

    let mut faces = Vec::with_capacity(20);
    for k in 0..5 {
        let u0 = 1 + k;
        let u1 = 1 + (k + 1) % 5;
        let l0 = 6 + k;
        let l1 = 6 + (k + 1) % 5;
        faces.push([0, u0, u1]);
        faces.push([u0, l0, u1]);
        faces.push([u1, l0, l1]);
        faces.push([l0, 11, l1]);
    }

    for _ in 0..levels {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut mid = |i: usize, j: usize, vertices: &mut Vec<Vec3>| -> usize {
            *midpoint.entry((i.min(j), i.max(j))).or_insert_with(|| {
                vertices.push(((vertices[i] + vertices[j]) * 0.5).normalize());
                vertices.len() - 1
            })
        };
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.push([a, ab, ca]);
            next.push([ab, b, bc]);
            next.push([ca, bc, c]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    for v in &mut vertices {
        for k in 0..3 {
            if v[k].abs() < 1e-12 {
                v[k] = 0.0;
            }
        }
    }
    TriMesh::new(vertices, faces).expect("icosphere topology is valid")
}

/// Latitude-longitude unwrap of a sphere-like mesh centred at the origin.
///
/// `u` follows longitude and `v` follows colatitude (`v = 0` at +z). Faces
/// straddling the longitude seam are unwrapped continuously and the whole
/// chart is rescaled so every coordinate stays in `[0, 1]`. A pole vertex
/// takes the mean longitude of the other two corners of each face.
pub fn latlong_chart(mesh: &TriMesh, height: usize, width: usize) -> UvChart {
    let angles: Vec<(Option<f64>, f64)> = mesh
        .vertices
        .iter()
        .map(|p| {
            let n = p.normalize();
            let colat = n.z.clamp(-1.0, 1.0).acos();
            let lon = if n.x.abs() < 1e-12 && n.y.abs() < 1e-12 {
                None
            } else {
                let y = if n.y.abs() < 1e-12 { 0.0 } else { n.y };
                Some(y.atan2(n.x).rem_euclid(TAU))
            };
            (lon, colat)
        })
        .collect();

    let mut raw: Vec<[(f64, f64); 3]> = Vec::with_capacity(mesh.num_faces());
    let mut max_lon: f64 = TAU;
    for face in mesh.faces() {
        let mut lons: Vec<f64> = face.iter().filter_map(|&i| angles[i].0).collect();
        let lo = lons.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = lons.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let seam = hi - lo > PI;
        let fix = |l: f64| if seam && l < PI { l + TAU } else { l };
        lons.iter_mut().for_each(|l| *l = fix(*l));
        let pole_lon = lons.iter().sum::<f64>() / lons.len() as f64;
        let mut corner = [(0.0, 0.0); 3];
        for (k, &i) in face.iter().enumerate() {
            let lon = angles[i].0.map(fix).unwrap_or(pole_lon);
            max_lon = max_lon.max(lon);
            corner[k] = (lon, angles[i].1);
        }
        raw.push(corner);
    }

    let face_uvs = raw
        .into_iter()
        .map(|c| c.map(|(lon, colat)| Vec2::new(lon / max_lon, colat / PI)))
        .collect();
    UvChart::new(face_uvs, height, width).expect("lat-long chart is valid")
}
