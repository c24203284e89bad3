use std::collections::HashMap;
use std::sync::Arc;

use super::{Topology, TriMesh};
use crate::error::{Error, Result};
use crate::Vec3;

/// Clamped cotangent weights laid out parallel to the topology's one-rings.
#[derive(Debug, Clone)]
pub struct CotanWeights {
    topology: Arc<Topology>,
    ring_weights: Vec<f64>,
}

impl CotanWeights {
    /// Neighbours of `i` paired with `w_ij`.
    pub fn ring(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.topology.ring_range(i);
        self.topology
            .ring(i)
            .iter()
            .copied()
            .zip(self.ring_weights[range].iter().copied())
    }

    /// `w_ij`, or `None` when `(i, j)` is not an edge.
    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        let ring = self.topology.ring(i);
        let k = ring.binary_search(&j).ok()?;
        Some(self.ring_weights[self.topology.ring_range(i).start + k])
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }
}

/// `w_ij = (cot a_ij + cot b_ij) / 2` over the angles opposite each edge;
/// boundary edges keep their single half-cotangent and negative sums are
/// clamped to zero.
pub fn cotangent_weights(mesh: &TriMesh) -> Result<CotanWeights> {
    let topo = mesh.topology();
    let v = &mesh.vertices;
    let mut acc: HashMap<(usize, usize), f64> = HashMap::new();
    for (f, &[a, b, c]) in topo.faces().iter().enumerate() {
        let corners = [(a, b, c), (b, c, a), (c, a, b)];
        let double_area = (v[b] - v[a]).cross(&(v[c] - v[a])).norm();
        if !(double_area > 1e-300) {
            return Err(Error::DegenerateFace(f));
        }
        for (o, i, j) in corners {
            let e1 = v[i] - v[o];
            let e2 = v[j] - v[o];
            let cot = e1.dot(&e2) / e1.cross(&e2).norm();
            *acc.entry((i.min(j), i.max(j))).or_insert(0.0) += 0.5 * cot;
        }
    }
    let mut ring_weights = vec![0.0; topo.ring_indices.len()];
    for i in 0..topo.num_vertices() {
        let start = topo.ring_range(i).start;
        for (k, &j) in topo.ring(i).iter().enumerate() {
            ring_weights[start + k] = acc[&(i.min(j), i.max(j))].max(0.0);
        }
    }
    Ok(CotanWeights {
        topology: topo.clone(),
        ring_weights,
    })
}

/// Mean squared norm of the uniform Laplacian `v_i - mean(N(i))`.
pub fn laplacian_smoothness(topology: &Topology, vertices: &[Vec3]) -> Result<f64> {
    Ok(laplacian_deltas(topology, vertices)?
        .iter()
        .map(|d| d.norm_squared())
        .sum::<f64>()
        / vertices.len().max(1) as f64)
}

/// Smoothness value and its gradient with respect to every vertex.
pub fn laplacian_smoothness_with_grad(
    topology: &Topology,
    vertices: &[Vec3],
) -> Result<(f64, Vec<Vec3>)> {
    let deltas = laplacian_deltas(topology, vertices)?;
    let n = vertices.len().max(1) as f64;
    let value = deltas.iter().map(|d| d.norm_squared()).sum::<f64>() / n;
    let mut grad: Vec<Vec3> = deltas.iter().map(|d| d * (2.0 / n)).collect();
    for (i, d) in deltas.iter().enumerate() {
        let ring = topology.ring(i);
        let share = d * (2.0 / (n * ring.len() as f64));
        for &j in ring {
            grad[j] -= share;
        }
    }
    Ok((value, grad))
}

fn laplacian_deltas(topology: &Topology, vertices: &[Vec3]) -> Result<Vec<Vec3>> {
    if vertices.len() != topology.num_vertices() {
        return Err(Error::Dimension(format!(
            "{} vertices for a topology of {}",
            vertices.len(),
            topology.num_vertices()
        )));
    }
    (0..vertices.len())
        .map(|i| {
            let ring = topology.ring(i);
            if ring.is_empty() {
                return Err(Error::IsolatedVertex(i));
            }
            let mean = ring.iter().fold(Vec3::zeros(), |acc, &j| acc + vertices[j]) / ring.len() as f64;
            Ok(vertices[i] - mean)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::icosphere;

    fn equilateral(h: f64) -> Vec<Vec3> {
        vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.5, h, 0.0),
        ]
    }

    #[test]
    fn interior_edge_of_two_equilateral_triangles() {
        let h = 3f64.sqrt() / 2.0;
        let mut v = equilateral(h);
        v.push(Vec3::new(0.5, -h, 0.0));
        let mesh = TriMesh::new(v, vec![[0, 1, 2], [1, 0, 3]]).unwrap();
        let w = cotangent_weights(&mesh).unwrap();
        let cot60 = 1.0 / 3f64.sqrt();
        assert!((w.weight(0, 1).unwrap() - cot60).abs() < 1e-12);
        assert!((w.weight(0, 2).unwrap() - 0.5 * cot60).abs() < 1e-12);
        assert_eq!(w.weight(0, 1), w.weight(1, 0));
        assert_eq!(w.weight(2, 3), None);
    }

    #[test]
    fn boundary_edge_of_single_triangle() {
        let mesh = TriMesh::new(equilateral(3f64.sqrt() / 2.0), vec![[0, 1, 2]]).unwrap();
        let w = cotangent_weights(&mesh).unwrap();
        for (i, j) in [(0, 1), (1, 2), (0, 2)] {
            assert!((w.weight(i, j).unwrap() - 0.5 / 3f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn obtuse_opposite_angles_clamp_to_zero() {
        // Both apexes sit close to the shared edge, so both opposite angles are obtuse.
        let v = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.5, 0.1, 0.0),
            Vec3::new(0.5, -0.1, 0.0),
        ];
        let mesh = TriMesh::new(v, vec![[0, 1, 2], [1, 0, 3]]).unwrap();
        let w = cotangent_weights(&mesh).unwrap();
        assert_eq!(w.weight(0, 1), Some(0.0));
    }

    #[test]
    fn degenerate_face_is_named() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0];
        let mesh = TriMesh::new(v, vec![[0, 1, 2]]).unwrap();
        assert!(matches!(cotangent_weights(&mesh), Err(Error::DegenerateFace(0))));
    }

    #[test]
    fn smoothness_zero_cases() {
        let mesh = icosphere(1);
        let same = vec![Vec3::new(0.3, 0.1, -2.0); mesh.num_vertices()];
        assert!(laplacian_smoothness(mesh.topology(), &same).unwrap() < 1e-28);

        // Regular triangulated grid: interior vertices are ring centroids.
        let n = 5;
        let mut v = Vec::new();
        for r in 0..n {
            for c in 0..n {
                v.push(Vec3::new(c as f64, r as f64, 0.0));
            }
        }
        let mut faces = Vec::new();
        for r in 0..n - 1 {
            for c in 0..n - 1 {
                let i = r * n + c;
                faces.push([i, i + 1, i + n + 1]);
                faces.push([i, i + n + 1, i + n]);
            }
        }
        let grid = TriMesh::new(v.clone(), faces).unwrap();
        let deltas = laplacian_deltas(grid.topology(), &v).unwrap();
        for r in 1..n - 1 {
            for c in 1..n - 1 {
                assert!(deltas[r * n + c].norm() < 1e-12);
            }
        }
    }

    #[test]
    fn smoothness_gradient_matches_finite_differences() {
        let mesh = icosphere(0);
        let mut v = mesh.vertices.clone();
        for (k, p) in v.iter_mut().enumerate() {
            p.x += 0.05 * (k as f64 * 1.3).sin();
            p.z *= 1.0 + 0.1 * (k as f64).cos();
        }
        let (_, grad) = laplacian_smoothness_with_grad(mesh.topology(), &v).unwrap();
        let h = 1e-6;
        for i in 0..v.len() {
            for d in 0..3 {
                let mut vp = v.clone();
                vp[i][d] += h;
                let mut vm = v.clone();
                vm[i][d] -= h;
                let fd = (laplacian_smoothness(mesh.topology(), &vp).unwrap()
                    - laplacian_smoothness(mesh.topology(), &vm).unwrap())
                    / (2.0 * h);
                assert!((fd - grad[i][d]).abs() < 1e-8, "{fd} vs {}", grad[i][d]);
            }
        }
    }

    #[test]
    fn isolated_vertex_is_an_error() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
        let mesh = TriMesh::new(v.clone(), vec![[0, 1, 2]]).unwrap();
        assert!(matches!(
            laplacian_smoothness(mesh.topology(), &v),
            Err(Error::IsolatedVertex(3))
        ));
    }
}
