//! As-rigid-as-possible energy between a base shape and its deformation.
//!
//! Per-vertex rotations are fitted in closed form (local step) on every
//! evaluation and then held fixed while differentiating, so the returned
//! gradients are those of the energy with frozen rotations.

use nalgebra::{DMatrix, DVector, Matrix3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::CotanWeights;
use crate::Vec3;

/// Best-fit rotations, plus the vertices whose covariance was too
/// degenerate to define one (those fall back to the identity).
#[derive(Debug, Clone)]
pub struct ArapRotations {
    pub rotations: Vec<Matrix3<f64>>,
    pub flagged: Vec<usize>,
}

/// ARAP energy and its gradients with the fitted rotations held constant.
#[derive(Debug, Clone)]
pub struct ArapEval {
    pub energy: f64,
    pub grad_deformed: Vec<Vec3>,
    pub grad_base: Vec<Vec3>,
    pub rotations: ArapRotations,
}

fn check_dims(base: &[Vec3], deformed: &[Vec3], weights: &CotanWeights) -> Result<()> {
    let n = weights.topology().num_vertices();
    if base.len() != n || deformed.len() != n {
        return Err(Error::Dimension(format!(
            "ARAP needs {n} vertices, got base {} and deformed {}",
            base.len(),
            deformed.len()
        )));
    }
    Ok(())
}

/// `R_i = argmin_R sum_j w_ij |(v_i - v_j) - R (b_i - b_j)|^2` via the SVD of
/// the weighted edge covariance, with the reflection case corrected by
/// negating the singular direction of smallest singular value.
pub fn best_rotations(base: &[Vec3], deformed: &[Vec3], weights: &CotanWeights) -> Result<ArapRotations> {
    check_dims(base, deformed, weights)?;
    let fitted: Vec<Option<Matrix3<f64>>> = (0..base.len())
        .into_par_iter()
        .map(|i| {
            let mut cov = Matrix3::zeros();
            for (j, w) in weights.ring(i) {
                let e = base[i] - base[j];
                let e_def = deformed[i] - deformed[j];
                cov += e * e_def.transpose() * w;
            }
            fit_rotation(&cov)
        })
        .collect();
    let mut flagged = Vec::new();
    let rotations = fitted
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.unwrap_or_else(|| {
                flagged.push(i);
                Matrix3::identity()
            })
        })
        .collect();
    Ok(ArapRotations { rotations, flagged })
}

fn fit_rotation(cov: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let s = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    if !(s[order[0]] > 1e-300) || s[order[1]] <= 1e-12 * s[order[0]] {
        return None;
    }
    let v = v_t.transpose();
    let mut r = v * u.transpose();
    if r.determinant() < 0.0 {
        let mut u = u;
        let k = order[2];
        for row in 0..3 {
            u[(row, k)] = -u[(row, k)];
        }
        r = v * u.transpose();
    }
    Some(r)
}

pub fn arap_energy(base: &[Vec3], deformed: &[Vec3], weights: &CotanWeights) -> Result<f64> {
    arap_energy_with_grad(base, deformed, weights).map(|e| e.energy)
}

/// Energy `sum_i sum_{j in N(i)} w_ij |(v_i - v_j) - R_i (b_i - b_j)|^2`
/// and its gradients w.r.t. both the deformed and the base vertices.
pub fn arap_energy_with_grad(base: &[Vec3], deformed: &[Vec3], weights: &CotanWeights) -> Result<ArapEval> {
    let rotations = best_rotations(base, deformed, weights)?;
    let n = base.len();
    let mut energy = 0.0;
    let mut grad_deformed = vec![Vec3::zeros(); n];
    let mut grad_base = vec![Vec3::zeros(); n];
    for i in 0..n {
        let r = &rotations.rotations[i];
        for (j, w) in weights.ring(i) {
            let residual = (deformed[i] - deformed[j]) - r * (base[i] - base[j]);
            energy += w * residual.norm_squared();
            let g = residual * (2.0 * w);
            grad_deformed[i] += g;
            grad_deformed[j] -= g;
            let gb = r.transpose() * g;
            grad_base[i] -= gb;
            grad_base[j] += gb;
        }
    }
    Ok(ArapEval {
        energy,
        grad_deformed,
        grad_base,
        rotations,
    })
}

/// One global step: the deformed positions minimising the energy for fixed
/// `rotations`, with vertex `anchor` pinned at its current position.
pub fn arap_global_step(
    base: &[Vec3],
    deformed: &[Vec3],
    weights: &CotanWeights,
    rotations: &[Matrix3<f64>],
    anchor: usize,
) -> Result<Vec<Vec3>> {
    check_dims(base, deformed, weights)?;
    let n = base.len();
    if anchor >= n {
        return Err(Error::VertexOutOfRange { index: anchor, len: n });
    }
    let free: Vec<usize> = (0..n).filter(|&i| i != anchor).collect();
    let mut slot = vec![usize::MAX; n];
    for (k, &i) in free.iter().enumerate() {
        slot[i] = k;
    }
    let m = free.len();
    let mut lap = DMatrix::<f64>::zeros(m, m);
    let mut rhs = [DVector::<f64>::zeros(m), DVector::<f64>::zeros(m), DVector::<f64>::zeros(m)];
    for &i in &free {
        let row = slot[i];
        for (j, w) in weights.ring(i) {
            lap[(row, row)] += w;
            let b = (rotations[i] + rotations[j]) * (base[i] - base[j]) * (0.5 * w);
            for d in 0..3 {
                rhs[d][row] += b[d];
            }
            if j == anchor {
                for d in 0..3 {
                    rhs[d][row] += w * deformed[anchor][d];
                }
            } else {
                lap[(row, slot[j])] -= w;
            }
        }
    }
    let chol = lap
        .cholesky()
        .ok_or_else(|| Error::Topology("ARAP system is singular (disconnected mesh?)".into()))?;
    let mut out = deformed.to_vec();
    let sol: Vec<DVector<f64>> = rhs.iter().map(|r| chol.solve(r)).collect();
    for (k, &i) in free.iter().enumerate() {
        out[i] = Vec3::new(sol[0][k], sol[1][k], sol[2][k]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{cotangent_weights, icosphere, TriMesh};
    use nalgebra::{Rotation3, Unit};

    fn bumpy(levels: usize) -> TriMesh {
        let mut m = icosphere(levels);
        for (k, v) in m.vertices.iter_mut().enumerate() {
            *v *= 1.0 + 0.1 * (3.0 * k as f64).sin();
        }
        m
    }

    fn rotation(axis: Vec3, angle: f64) -> Matrix3<f64> {
        *Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).matrix()
    }

    #[test]
    fn identity_fit() {
        let m = bumpy(1);
        let w = cotangent_weights(&m).unwrap();
        let r = best_rotations(&m.vertices, &m.vertices, &w).unwrap();
        assert!(r.flagged.is_empty());
        for rot in &r.rotations {
            assert!((rot - Matrix3::identity()).norm() < 1e-12);
        }
    }

    #[test]
    fn global_rotation_is_recovered() {
        let m = bumpy(1);
        let w = cotangent_weights(&m).unwrap();
        let q = rotation(Vec3::new(0.3, -1.0, 0.4), 1.1);
        let moved: Vec<Vec3> = m.vertices.iter().map(|v| q * v).collect();
        let r = best_rotations(&m.vertices, &moved, &w).unwrap();
        for rot in &r.rotations {
            assert!((rot - q).norm() < 1e-9);
        }
    }

    #[test]
    fn uniform_scale_fits_identity() {
        let m = bumpy(1);
        let w = cotangent_weights(&m).unwrap();
        let scaled: Vec<Vec3> = m.vertices.iter().map(|v| v * 2.0).collect();
        let r = best_rotations(&m.vertices, &scaled, &w).unwrap();
        for rot in &r.rotations {
            assert!((rot - Matrix3::identity()).norm() < 1e-9);
        }
    }

    #[test]
    fn unit_tetrahedron_scale_energy_matches_double_loop() {
        let v = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        let m = TriMesh::new(v.clone(), vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]]).unwrap();
        let w = cotangent_weights(&m).unwrap();
        let scaled: Vec<Vec3> = v.iter().map(|p| p * 2.0).collect();
        let mut oracle = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    oracle += w.weight(i, j).unwrap() * (v[i] - v[j]).norm_squared();
                }
            }
        }
        let e = arap_energy(&v, &scaled, &w).unwrap();
        assert!((e - oracle).abs() < 1e-12, "{e} vs {oracle}");
    }

    #[test]
    fn spike_is_localised() {
        let m = bumpy(1);
        let w = cotangent_weights(&m).unwrap();
        let mut spiked = m.vertices.clone();
        spiked[7] += Vec3::new(0.0, 0.0, 0.5);
        assert!(arap_energy(&m.vertices, &spiked, &w).unwrap() > 1e-3);
        spiked[7] = m.vertices[7];
        assert!(arap_energy(&m.vertices, &spiked, &w).unwrap() < 1e-20);
    }

    #[test]
    fn rigid_motions_have_zero_energy_and_energy_is_invariant() {
        let m = bumpy(1);
        let w = cotangent_weights(&m).unwrap();
        let q = rotation(Vec3::new(1.0, 2.0, -0.5), 2.3);
        let t = Vec3::new(0.4, -1.2, 3.0);
        let moved: Vec<Vec3> = m.vertices.iter().map(|v| q * v + t).collect();
        assert!(arap_energy(&m.vertices, &moved, &w).unwrap() < 1e-10);

        let deformed: Vec<Vec3> = m
            .vertices
            .iter()
            .enumerate()
            .map(|(k, v)| v + Vec3::new(0.05 * (k as f64).sin(), 0.0, 0.03 * (k as f64).cos()))
            .collect();
        let e0 = arap_energy(&m.vertices, &deformed, &w).unwrap();
        let b1: Vec<Vec3> = m.vertices.iter().map(|v| q * v + t).collect();
        let d1: Vec<Vec3> = deformed.iter().map(|v| q * v + t).collect();
        let e1 = arap_energy(&b1, &d1, &w).unwrap();
        assert!(e0 > 0.0);
        assert!((e0 - e1).abs() < 1e-9);
    }

    #[test]
    fn frozen_rotation_gradient_matches_resolved_finite_differences() {
        let m = bumpy(0);
        let w = cotangent_weights(&m).unwrap();
        let deformed: Vec<Vec3> = m
            .vertices
            .iter()
            .enumerate()
            .map(|(k, v)| v * 1.1 + Vec3::new(0.08 * (k as f64 * 1.7).sin(), 0.05, -0.06 * (k as f64).cos()))
            .collect();
        let eval = arap_energy_with_grad(&m.vertices, &deformed, &w).unwrap();
        let h = 1e-6;
        let scale = eval
            .grad_deformed
            .iter()
            .chain(&eval.grad_base)
            .map(|g| g.amax())
            .fold(0.0, f64::max);
        for i in 0..m.num_vertices() {
            for d in 0..3 {
                let mut p = deformed.clone();
                p[i][d] += h;
                let mut q = deformed.clone();
                q[i][d] -= h;
                let fd = (arap_energy(&m.vertices, &p, &w).unwrap() - arap_energy(&m.vertices, &q, &w).unwrap())
                    / (2.0 * h);
                assert!((fd - eval.grad_deformed[i][d]).abs() / scale < 1e-6);

                let mut p = m.vertices.clone();
                p[i][d] += h;
                let mut q = m.vertices.clone();
                q[i][d] -= h;
                let fd = (arap_energy(&p, &deformed, &w).unwrap() - arap_energy(&q, &deformed, &w).unwrap())
                    / (2.0 * h);
                assert!((fd - eval.grad_base[i][d]).abs() / scale < 1e-6);
            }
        }
    }

    #[test]
    fn global_step_does_not_increase_energy() {
        let m = bumpy(1);
        let w = cotangent_weights(&m).unwrap();
        let deformed: Vec<Vec3> = m
            .vertices
            .iter()
            .enumerate()
            .map(|(k, v)| v + Vec3::new(0.1 * (k as f64 * 0.7).sin(), 0.07 * (k as f64).cos(), 0.0))
            .collect();
        let eval = arap_energy_with_grad(&m.vertices, &deformed, &w).unwrap();
        let stepped = arap_global_step(&m.vertices, &deformed, &w, &eval.rotations.rotations, 0).unwrap();
        let fixed_rot_energy: f64 = (0..m.num_vertices())
            .map(|i| {
                w.ring(i)
                    .map(|(j, wij)| {
                        wij * ((stepped[i] - stepped[j]) - eval.rotations.rotations[i] * (m.vertices[i] - m.vertices[j]))
                            .norm_squared()
                    })
                    .sum::<f64>()
            })
            .sum();
        assert!(fixed_rot_energy <= eval.energy + 1e-12);
        assert!(arap_energy(&m.vertices, &stepped, &w).unwrap() <= eval.energy + 1e-12);
    }
}
