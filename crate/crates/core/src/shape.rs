//! Shape model: a softmax-weighted combination of basis meshes plus a free
//! per-vertex motion offset, K-Means basis extraction, and mirror
//! symmetrisation of offsets for the self-supervised mode.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::WeakPerspectiveCamera;
use crate::error::{Error, Result};
use crate::{Vec2, Vec3};

/// `N_b` basis meshes sharing one topology.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeBasisSet {
    bases: Vec<Vec<Vec3>>,
}

impl ShapeBasisSet {
    pub fn new(bases: Vec<Vec<Vec3>>) -> Result<Self> {
        let Some(first) = bases.first() else {
            return Err(Error::InvalidArgument("a basis set needs at least one basis".into()));
        };
        let n = first.len();
        if let Some((i, b)) = bases.iter().enumerate().find(|(_, b)| b.len() != n) {
            return Err(Error::Dimension(format!(
                "basis {i} has {} vertices, basis 0 has {n}",
                b.len()
            )));
        }
        Ok(Self { bases })
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    pub fn num_vertices(&self) -> usize {
        self.bases[0].len()
    }

    pub fn bases(&self) -> &[Vec<Vec3>] {
        &self.bases
    }

    /// Single-basis set holding the elementwise mean of all bases.
    pub fn mean(&self) -> Self {
        let n = self.len() as f64;
        let mean = (0..self.num_vertices())
            .map(|v| self.bases.iter().fold(Vec3::zeros(), |acc, b| acc + b[v]) / n)
            .collect();
        Self { bases: vec![mean] }
    }

    /// `sum_i w_i V_i` for convex weights `w`.
    pub fn combine(&self, weights: &[f64]) -> Vec<Vec3> {
        let mut out = vec![Vec3::zeros(); self.num_vertices()];
        for (w, basis) in weights.iter().zip(&self.bases) {
            for (o, v) in out.iter_mut().zip(basis) {
                *o += v * *w;
            }
        }
        out
    }

    /// `dL/dlogits` given `dL/dV_base` and the softmax weights in use.
    pub fn logit_grad(&self, weights: &[f64], grad_base: &[Vec3]) -> Vec<f64> {
        let dw: Vec<f64> = self
            .bases
            .iter()
            .map(|b| b.iter().zip(grad_base).map(|(v, g)| v.dot(g)).sum())
            .collect();
        let mean: f64 = weights.iter().zip(&dw).map(|(w, d)| w * d).sum();
        weights.iter().zip(&dw).map(|(w, d)| w * (d - mean)).collect()
    }
}

/// Basis logits and motion offsets of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeParams {
    pub logits: Vec<f64>,
    pub offsets: Vec<Vec3>,
}

impl ShapeParams {
    /// Uniform basis weights and zero motion.
    pub fn neutral(num_bases: usize, num_vertices: usize) -> Self {
        Self {
            logits: vec![0.0; num_bases],
            offsets: vec![Vec3::zeros(); num_vertices],
        }
    }
}

/// Per-frame optimisable state.
///
/// The texture flow is not stored directly: it is the projection of every
/// texel's surface point under the frame's own shape and camera, plus the
/// free residual `flow_offset` (see [`crate::render::TextureFlow`]).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameState {
    pub camera: WeakPerspectiveCamera,
    pub shape: ShapeParams,
    pub flow_offset: Vec<Vec2>,
}

impl FrameState {
    pub fn identity(num_bases: usize, num_vertices: usize, num_texels: usize) -> Self {
        Self {
            camera: WeakPerspectiveCamera::identity(),
            shape: ShapeParams::neutral(num_bases, num_vertices),
            flow_offset: vec![Vec2::zeros(); num_texels],
        }
    }
}

/// `V_base` and `V = V_base + dV` of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedShape {
    pub weights: Vec<f64>,
    pub base: Vec<Vec3>,
    pub full: Vec<Vec3>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn compose_shape(bases: &ShapeBasisSet, params: &ShapeParams) -> Result<ComposedShape> {
    if params.logits.len() != bases.len() {
        return Err(Error::Dimension(format!(
            "{} logits for {} bases",
            params.logits.len(),
            bases.len()
        )));
    }
    if params.offsets.len() != bases.num_vertices() {
        return Err(Error::Dimension(format!(
            "{} offsets for {} vertices",
            params.offsets.len(),
            bases.num_vertices()
        )));
    }
    let weights = softmax(&params.logits);
    let base = bases.combine(&weights);
    let full = base.iter().zip(&params.offsets).map(|(b, d)| b + d).collect();
    Ok(ComposedShape {
        weights,
        base,
        full,
    })
}

/// Outcome of [`kmeans`], including the per-iteration objective.
#[derive(Debug, Clone)]
pub struct KMeans {
    pub bases: ShapeBasisSet,
    pub assignments: Vec<usize>,
    pub objective_trace: Vec<f64>,
}

/// Cluster centres of `meshes` (flattened vertex vectors) as basis meshes.
pub fn kmeans_bases(meshes: &[Vec<Vec3>], num_bases: usize, seed: u64) -> Result<ShapeBasisSet> {
    kmeans(meshes, num_bases, seed).map(|k| k.bases)
}

/// Lloyd's algorithm with k-means++ seeding from a seeded generator. An
/// emptied cluster is re-seeded with the point farthest from its centre.
pub fn kmeans(meshes: &[Vec<Vec3>], k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::InvalidArgument("number of bases must be positive".into()));
    }
    if meshes.len() < k {
        return Err(Error::InvalidArgument(format!(
            "{} meshes cannot form {k} clusters",
            meshes.len()
        )));
    }
    ShapeBasisSet::new(meshes.to_vec())?;
    let n = meshes[0].len();
    let dist2 = |a: &[Vec3], b: &[Vec3]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<Vec3>> = vec![meshes[rng.random_range(0..meshes.len())].clone()];
    while centers.len() < k {
        let d: Vec<f64> = meshes
            .iter()
            .map(|m| centers.iter().map(|c| dist2(m, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = d.len() - 1;
            for (i, &di) in d.iter().enumerate() {
                if r < di {
                    chosen = i;
                    break;
                }
                r -= di;
            }
            chosen
        } else {
            rng.random_range(0..meshes.len())
        };
        centers.push(meshes[pick].clone());
    }

    let mut assignments = vec![usize::MAX; meshes.len()];
    let mut objective_trace = Vec::new();
    for _ in 0..300 {
        let mut changed = false;
        for (i, m) in meshes.iter().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for (c, center) in centers.iter().enumerate() {
                let d = dist2(m, center);
                if d < best.0 {
                    best = (d, c);
                }
            }
            if assignments[i] != best.1 {
                assignments[i] = best.1;
                changed = true;
            }
        }
        for c in 0..k {
            if !assignments.contains(&c) {
                let far = (0..meshes.len())
                    .max_by(|&a, &b| {
                        let da = dist2(&meshes[a], &centers[assignments[a]]);
                        let db = dist2(&meshes[b], &centers[assignments[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("non-empty");
                assignments[far] = c;
                changed = true;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<Vec3>> = meshes
                .iter()
                .zip(&assignments)
                .filter(|(_, &a)| a == c)
                .map(|(m, _)| m)
                .collect();
            let count = members.len() as f64;
            *center = (0..n)
                .map(|v| members.iter().fold(Vec3::zeros(), |acc, m| acc + m[v]) / count)
                .collect();
        }
        objective_trace.push(
            meshes
                .iter()
                .zip(&assignments)
                .map(|(m, &a)| dist2(m, &centers[a]))
                .sum(),
        );
        if !changed {
            break;
        }
    }
    Ok(KMeans {
        bases: ShapeBasisSet::new(centers)?,
        assignments,
        objective_trace,
    })
}

/// Left/right vertex correspondence across a coordinate plane.
#[derive(Debug, Clone, PartialEq)]
pub struct MirrorPairing {
    pub partner: Vec<usize>,
    /// Coordinate axis normal to the symmetry plane.
    pub axis: usize,
}

impl MirrorPairing {
    /// Matches every vertex with the vertex nearest to its reflection.
    pub fn from_positions(vertices: &[Vec3], axis: usize, tol: f64) -> Result<Self> {
        if axis > 2 {
            return Err(Error::InvalidArgument(format!("axis {axis} is not 0, 1 or 2")));
        }
        let mut partner = Vec::with_capacity(vertices.len());
        for (i, v) in vertices.iter().enumerate() {
            let mut m = *v;
            m[axis] = -m[axis];
            let (j, d) = vertices
                .iter()
                .enumerate()
                .map(|(j, w)| (j, (w - m).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("non-empty");
            if d > tol {
                return Err(Error::InvalidArgument(format!(
                    "vertex {i} has no mirror partner within {tol}"
                )));
            }
            partner.push(j);
        }
        for (i, &j) in partner.iter().enumerate() {
            if partner[j] != i {
                return Err(Error::InvalidArgument(format!(
                    "mirror pairing is not an involution at vertex {i}"
                )));
            }
        }
        Ok(Self { partner, axis })
    }
}

/// Replaces every offset by the mean of itself and its partner's reflected
/// offset. The operator is a symmetric projection, so it is also its own
/// adjoint for back-propagation.
pub fn mirror_symmetrize(offsets: &[Vec3], pairing: Option<&MirrorPairing>) -> Result<Vec<Vec3>> {
    let pairing = pairing.ok_or(Error::MissingPairing)?;
    if pairing.partner.len() != offsets.len() {
        return Err(Error::Dimension(format!(
            "pairing covers {} vertices, deformation has {}",
            pairing.partner.len(),
            offsets.len()
        )));
    }
    Ok(offsets
        .iter()
        .zip(&pairing.partner)
        .map(|(d, &j)| {
            let mut m = offsets[j];
            m[pairing.axis] = -m[pairing.axis];
            (d + m) * 0.5
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::icosphere;
    use proptest::prelude::{prop_assert, proptest};

    fn gaussian(rng: &mut impl Rng) -> f64 {
        let u1: f64 = rng.random::<f64>().max(1e-300);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    fn sphere_bases() -> ShapeBasisSet {
        let s = icosphere(1).vertices;
        let stretched: Vec<Vec3> = s.iter().map(|v| Vec3::new(1.5 * v.x, v.y, 0.5 * v.z)).collect();
        let shifted: Vec<Vec3> = s.iter().map(|v| v + Vec3::new(0.2, 0.0, -0.1)).collect();
        ShapeBasisSet::new(vec![s, stretched, shifted]).unwrap()
    }

    #[test]
    fn one_hot_logits_select_a_basis() {
        let b = sphere_bases();
        let mut p = ShapeParams::neutral(3, b.num_vertices());
        p.logits = vec![-20.0, 20.0, -20.0];
        let c = compose_shape(&b, &p).unwrap();
        let err = c
            .full
            .iter()
            .zip(&b.bases()[1])
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-6);
    }

    #[test]
    fn identical_bases_give_that_mesh() {
        let s = icosphere(1).vertices;
        let b = ShapeBasisSet::new(vec![s.clone(), s.clone()]).unwrap();
        let p = ShapeParams {
            logits: vec![0.3, -1.7],
            offsets: vec![Vec3::zeros(); s.len()],
        };
        let c = compose_shape(&b, &p).unwrap();
        for (x, y) in c.base.iter().zip(&s) {
            assert!((x - y).norm() < 1e-15);
        }
    }

    #[test]
    fn equal_logits_give_the_midpoint() {
        let b = sphere_bases();
        let two = ShapeBasisSet::new(b.bases()[..2].to_vec()).unwrap();
        let c = compose_shape(&two, &ShapeParams::neutral(2, two.num_vertices())).unwrap();
        for ((x, p), q) in c.full.iter().zip(&two.bases()[0]).zip(&two.bases()[1]) {
            assert!((x - (p + q) / 2.0).norm() < 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let b = sphere_bases();
        let p = ShapeParams::neutral(2, b.num_vertices());
        assert!(matches!(compose_shape(&b, &p), Err(Error::Dimension(_))));
        let p = ShapeParams::neutral(3, 5);
        assert!(matches!(compose_shape(&b, &p), Err(Error::Dimension(_))));
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let b = sphere_bases();
        let g: Vec<Vec3> = (0..b.num_vertices())
            .map(|i| Vec3::new((i as f64).sin(), (i as f64 * 0.3).cos(), 0.2))
            .collect();
        let loss = |logits: &[f64]| -> f64 {
            let w = softmax(logits);
            b.combine(&w).iter().zip(&g).map(|(v, gi)| v.dot(gi)).sum()
        };
        let logits = vec![0.2, -0.5, 0.9];
        let analytic = b.logit_grad(&softmax(&logits), &g);
        let h = 1e-6;
        for k in 0..3 {
            let mut lp = logits.clone();
            lp[k] += h;
            let mut lm = logits.clone();
            lm[k] -= h;
            let fd = (loss(&lp) - loss(&lm)) / (2.0 * h);
            assert!((fd - analytic[k]).abs() / fd.abs().max(1e-8) < 1e-5);
        }
    }

    #[test]
    fn kmeans_two_identical_pairs() {
        let b = sphere_bases();
        let meshes = vec![
            b.bases()[0].clone(),
            b.bases()[1].clone(),
            b.bases()[0].clone(),
            b.bases()[1].clone(),
        ];
        for seed in 0..5 {
            let centers = kmeans_bases(&meshes, 2, seed).unwrap();
            let mut found = [false; 2];
            for c in centers.bases() {
                for (k, proto) in b.bases()[..2].iter().enumerate() {
                    if c == proto {
                        found[k] = true;
                    }
                }
            }
            assert_eq!(found, [true, true], "seed {seed}");
        }
    }

    #[test]
    fn kmeans_single_cluster_is_the_mean() {
        let b = sphere_bases();
        let centers = kmeans_bases(b.bases(), 1, 3).unwrap();
        let mean = b.mean();
        for (x, y) in centers.bases()[0].iter().zip(&mean.bases()[0]) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn kmeans_recovers_noisy_prototypes() {
        let b = sphere_bases();
        let noise = 0.01;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut meshes = Vec::new();
        for i in 0..60 {
            let proto = &b.bases()[i % 3];
            meshes.push(
                proto
                    .iter()
                    .map(|v| {
                        v + Vec3::new(gaussian(&mut rng), gaussian(&mut rng), gaussian(&mut rng)) * noise
                    })
                    .collect::<Vec<_>>(),
            );
        }
        let result = kmeans(&meshes, 3, 5).unwrap();
        for center in result.bases.bases() {
            // Brute-force nearest prototype, measured as RMS vertex error.
            let best = b
                .bases()
                .iter()
                .map(|p| {
                    let ss: f64 = p.iter().zip(center).map(|(x, y)| (x - y).norm_squared()).sum();
                    (ss / p.len() as f64).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            assert!(best < 2.0 * noise, "centre off by {best}");
        }
        for w in result.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn kmeans_rejects_too_few_meshes() {
        let b = sphere_bases();
        assert!(kmeans_bases(b.bases(), 4, 0).is_err());
    }

    #[test]
    fn mirror_rules() {
        let sphere = icosphere(2);
        let pairing = MirrorPairing::from_positions(&sphere.vertices, 1, 1e-9).unwrap();
        let zero = vec![Vec3::zeros(); sphere.num_vertices()];
        assert_eq!(mirror_symmetrize(&zero, Some(&pairing)).unwrap(), zero);

        let i = (0..sphere.num_vertices()).find(|&i| pairing.partner[i] != i).unwrap();
        let j = pairing.partner[i];
        let mut d = zero.clone();
        d[i] = Vec3::new(0.2, 0.4, -0.6);
        let s = mirror_symmetrize(&d, Some(&pairing)).unwrap();
        assert!((s[i] - Vec3::new(0.1, 0.2, -0.3)).norm() < 1e-15);
        assert!((s[j] - Vec3::new(0.1, -0.2, -0.3)).norm() < 1e-15);

        let fixed = (0..sphere.num_vertices()).find(|&i| pairing.partner[i] == i).unwrap();
        let mut d = zero.clone();
        d[fixed] = Vec3::new(0.3, 0.5, 0.1);
        assert_eq!(mirror_symmetrize(&d, Some(&pairing)).unwrap()[fixed].y, 0.0);
        assert!(matches!(mirror_symmetrize(&d, None), Err(Error::MissingPairing)));
    }

    proptest! {
        #[test]
        fn softmax_shift_invariance(a in -5.0..5.0f64, b in -5.0..5.0f64, c in -5.0..5.0f64, shift in -50.0..50.0f64) {
            let bases = sphere_bases();
            let mut p = ShapeParams::neutral(3, bases.num_vertices());
            p.logits = vec![a, b, c];
            let v0 = compose_shape(&bases, &p).unwrap().full;
            p.logits.iter_mut().for_each(|l| *l += shift);
            let v1 = compose_shape(&bases, &p).unwrap().full;
            for (x, y) in v0.iter().zip(&v1) {
                prop_assert!((x - y).norm() < 1e-12);
            }
        }

        #[test]
        fn symmetrize_is_idempotent(seed in 0u64..1000, tx in -1.0..1.0f64, tz in -1.0..1.0f64) {
            let sphere = icosphere(1);
            let pairing = MirrorPairing::from_positions(&sphere.vertices, 1, 1e-9).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d: Vec<Vec3> = (0..sphere.num_vertices())
                .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()) - Vec3::repeat(0.5))
                .collect();
            let once = mirror_symmetrize(&d, Some(&pairing)).unwrap();
            let twice = mirror_symmetrize(&once, Some(&pairing)).unwrap();
            for (x, y) in once.iter().zip(&twice) {
                prop_assert!((x - y).norm() < 1e-15);
            }
            let t = Vec3::new(tx, 0.0, tz);
            let moved: Vec<Vec3> = d.iter().map(|v| v + t).collect();
            let lhs = mirror_symmetrize(&moved, Some(&pairing)).unwrap();
            for (x, y) in lhs.iter().zip(&once) {
                prop_assert!((x - (y + t)).norm() < 1e-14);
            }
        }
    }
}
