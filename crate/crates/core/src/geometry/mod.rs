//! Triangle meshes with a shared, immutable topology, the fixed UV chart and
//! the neighbourhood machinery (one-rings, cotangent weights, Laplacian).

mod chart;
mod icosphere;
mod laplacian;
mod obj;

use std::collections::HashMap;
use std::sync::Arc;

pub use chart::{uv_to_surface, TexelTable, UvChart};
pub use icosphere::{icosphere, latlong_chart};
pub use laplacian::{
    cotangent_weights, laplacian_smoothness, laplacian_smoothness_with_grad, CotanWeights,
};
pub use obj::{load_obj, load_obj_with_uv, save_obj};

use crate::error::{Error, Result};
use crate::{Vec2, Vec3};

/// Face connectivity shared by every mesh of a problem.
///
/// One-rings are stored in CSR form, sorted ascending, so that ring
/// iteration order (and every reduction over it) is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    num_vertices: usize,
    faces: Vec<[usize; 3]>,
    ring_offsets: Vec<usize>,
    ring_indices: Vec<usize>,
}

impl Topology {
    pub fn new(num_vertices: usize, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mut edge_faces: HashMap<(usize, usize), u32> = HashMap::new();
        for (f, face) in faces.iter().enumerate() {
            for &i in face {
                if i >= num_vertices {
                    return Err(Error::Topology(format!(
                        "face {f} references vertex {i} but the mesh has {num_vertices} vertices"
                    )));
                }
            }
            let [a, b, c] = *face;
            if a == b || b == c || a == c {
                return Err(Error::Topology(format!("face {f} repeats a vertex: {face:?}")));
            }
            for (i, j) in [(a, b), (b, c), (c, a)] {
                let count = edge_faces.entry((i.min(j), i.max(j))).or_insert(0);
                *count += 1;
                if *count > 2 {
                    return Err(Error::Topology(format!(
                        "edge ({}, {}) is shared by more than two faces",
                        i.min(j),
                        i.max(j)
                    )));
                }
            }
        }

        let mut rings: Vec<Vec<usize>> = vec![Vec::new(); num_vertices];
        for &(i, j) in edge_faces.keys() {
            rings[i].push(j);
            rings[j].push(i);
        }
        let mut ring_offsets = Vec::with_capacity(num_vertices + 1);
        let mut ring_indices = Vec::with_capacity(edge_faces.len() * 2);
        ring_offsets.push(0);
        for ring in &mut rings {
            ring.sort_unstable();
            ring_indices.extend_from_slice(ring);
            ring_offsets.push(ring_indices.len());
        }
        Ok(Self {
            num_vertices,
            faces,
            ring_offsets,
            ring_indices,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    /// Neighbours of `i` sorted ascending. Panics on an invalid index; use
    /// [`TriMesh::one_ring`] for a checked lookup.
    pub fn ring(&self, i: usize) -> &[usize] {
        &self.ring_indices[self.ring_offsets[i]..self.ring_offsets[i + 1]]
    }

    pub(crate) fn ring_range(&self, i: usize) -> std::ops::Range<usize> {
        self.ring_offsets[i]..self.ring_offsets[i + 1]
    }

    /// Undirected edges `(i, j)` with `i < j`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_vertices)
            .flat_map(move |i| self.ring(i).iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    /// FNV-1a digest of the connectivity, used to tag basis manifests.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut feed = |x: u64| {
            for byte in x.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        feed(self.num_vertices as u64);
        for face in &self.faces {
            for &i in face {
                feed(i as u64);
            }
        }
        h
    }
}

/// Vertex positions on a shared topology.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    topology: Arc<Topology>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let topology = Arc::new(Topology::new(vertices.len(), faces)?);
        Ok(Self { vertices, topology })
    }

    pub fn from_topology(topology: Arc<Topology>, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != topology.num_vertices() {
            return Err(Error::Dimension(format!(
                "{} vertices for a topology of {}",
                vertices.len(),
                topology.num_vertices()
            )));
        }
        Ok(Self { vertices, topology })
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        self.topology.faces()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.topology.num_faces()
    }

    /// Vertices sharing an edge with `i`.
    pub fn one_ring(&self, i: usize) -> Result<&[usize]> {
        if i >= self.num_vertices() {
            return Err(Error::VertexOutOfRange {
                index: i,
                len: self.num_vertices(),
            });
        }
        Ok(self.topology.ring(i))
    }

    pub fn surface_position(&self, p: &SurfacePoint) -> Result<Vec3> {
        if p.face >= self.num_faces() {
            return Err(Error::FaceOutOfRange {
                index: p.face,
                len: self.num_faces(),
            });
        }
        Ok(surface_position(&self.vertices, self.faces(), p))
    }
}

/// A point on the mesh surface: a face and barycentric coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub face: usize,
    pub bary: [f64; 3],
}

impl SurfacePoint {
    pub fn new(face: usize, bary: [f64; 3]) -> Result<Self> {
        let sum: f64 = bary.iter().sum();
        if bary.iter().any(|&b| b < -1e-9 || !b.is_finite()) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "barycentric coordinates {bary:?} are not a convex combination"
            )));
        }
        Ok(Self { face, bary })
    }

    pub fn vertex(face: usize, corner: usize) -> Self {
        let mut bary = [0.0; 3];
        bary[corner] = 1.0;
        Self { face, bary }
    }

    /// Index (0..3) of the corner with the largest weight.
    pub fn dominant_corner(&self) -> usize {
        let mut best = 0;
        for k in 1..3 {
            if self.bary[k] > self.bary[best] {
                best = k;
            }
        }
        best
    }
}

/// Unchecked barycentric evaluation; `p.face` must be valid for `faces`.
pub fn surface_position(vertices: &[Vec3], faces: &[[usize; 3]], p: &SurfacePoint) -> Vec3 {
    let [a, b, c] = faces[p.face];
    vertices[a] * p.bary[0] + vertices[b] * p.bary[1] + vertices[c] * p.bary[2]
}

/// Barycentric coordinates of `p` with respect to the 2D triangle `tri`.
/// Returns `None` for a degenerate triangle.
pub fn barycentric_2d(tri: &[Vec2; 3], p: Vec2) -> Option<[f64; 3]> {
    let v0 = tri[1] - tri[0];
    let v1 = tri[2] - tri[0];
    let v2 = p - tri[0];
    let den = v0.x * v1.y - v1.x * v0.y;
    if den.abs() < 1e-300 {
        return None;
    }
    let b1 = (v2.x * v1.y - v1.x * v2.y) / den;
    let b2 = (v0.x * v2.y - v2.x * v0.y) / den;
    Some([1.0 - b1 - b2, b1, b2])
}

pub(crate) fn signed_area_2d(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y))
}
