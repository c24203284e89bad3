//! Finite-difference verification of the analytic gradients of every loss
//! term on a small seeded instance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{flatten_grad, flatten_state, unflatten_into, Block, Layout, BLOCKS};
use crate::camera::WeakPerspectiveCamera;
use crate::error::{Error, Result};
use crate::geometry::{cotangent_weights, icosphere, latlong_chart, SurfacePoint};
use crate::image::Image;
use crate::losses::{
    window_objective_frozen, window_rasters, FrameData, ImageDistance, KeypointSet, LossWeights, ObjectiveContext,
};
use crate::render::{render_silhouette, SoftRasterConfig};
use crate::shape::{FrameState, MirrorPairing, ShapeBasisSet, ShapeParams};
use crate::{Vec2, Vec3};

/// Registered losses and their relative-error tolerances. Terms that are
/// smooth in the parameters get the tight bound; terms mediated by the
/// renderer or by ARAP rotation fitting get the loose one.
pub const LOSSES: [(&str, f64); 9] = [
    ("keypoint", 1e-6),
    ("laplacian", 1e-6),
    ("part", 1e-6),
    ("arap", 1e-3),
    ("silhouette", 1e-3),
    ("texture", 1e-3),
    ("texture_swap", 1e-3),
    ("base_swap", 1e-3),
    ("total", 1e-3),
];

pub fn tolerance(loss: &str) -> Result<f64> {
    LOSSES
        .iter()
        .find(|(n, _)| *n == loss)
        .map(|(_, t)| *t)
        .ok_or_else(|| Error::UnknownLoss(loss.to_string()))
}

/// Outcome for one loss and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub loss: String,
    pub seed: u64,
    pub tolerance: f64,
    /// Per-block error: the largest `|analytic - fd|` in the block divided
    /// by the block's largest `|fd|`.
    pub blocks: Vec<(Block, f64)>,
}

impl GradcheckReport {
    pub fn max_error(&self) -> f64 {
        self.blocks.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() < self.tolerance
    }
}

/// Blocks whose finite differences all stay below this are compared in
/// absolute terms.
const NEGLIGIBLE: f64 = 1e-9;

fn weights_for(loss: &str) -> Result<LossWeights> {
    let mut w = LossWeights::zero();
    if loss == "total" {
        for k in crate::losses::WEIGHT_KEYS {
            w.set(k, 1.0)?;
        }
    } else {
        tolerance(loss)?;
        w.set(loss, 1.0)?;
    }
    Ok(w)
}

/// Checks the gradient of `loss` on a two-frame instance with a 12-vertex
/// mesh and 16x16 images. Rasterised visibility is held fixed, as it is
/// during optimisation.
pub fn gradcheck(loss: &str, seed: u64) -> Result<GradcheckReport> {
    let tol = tolerance(loss)?;
    let weights = weights_for(loss)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mesh = icosphere(0);
    let nv = mesh.num_vertices();
    let stretch = Vec3::new(rng.random_range(1.1..1.4), rng.random_range(0.7..0.9), rng.random_range(0.9..1.1));
    let other: Vec<Vec3> = mesh.vertices.iter().map(|v| v.component_mul(&stretch)).collect();
    let bases = ShapeBasisSet::new(vec![mesh.vertices.clone(), other])?;
    let chart = latlong_chart(&mesh, 8, 8);
    let texels = chart.texel_table();
    let cotan = cotangent_weights(&mesh)?;
    let mirror = MirrorPairing::from_positions(&mesh.vertices, 1, 1e-9)?;
    let raster = SoftRasterConfig::new(1e-3, 1e-4, 16, 16)?;
    let k3d: Vec<SurfacePoint> = (0..5)
        .map(|_| {
            let a: f64 = rng.random_range(0.05..0.9);
            let b: f64 = rng.random_range(0.05..(0.95 - a));
            SurfacePoint::new(rng.random_range(0..mesh.num_faces()), [a, b, 1.0 - a - b])
        })
        .collect::<Result<_>>()?;
    let members: Vec<Vec<usize>> = vec![
        (0..nv).filter(|&v| mesh.vertices[v].x > 0.0).collect(),
        (0..nv).filter(|&v| mesh.vertices[v].x <= 0.0).collect(),
    ];

    let mut images = Vec::new();
    let mut masks = Vec::new();
    let mut keypoints = Vec::new();
    let mut samples = Vec::new();
    let mut states = Vec::new();
    for _ in 0..2 {
        let yaw: f64 = rng.random_range(-0.5..0.5);
        let truth = WeakPerspectiveCamera::new(
            rng.random_range(0.5..0.7),
            Vec2::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)),
            [(yaw / 2.0).cos(), 0.0, (yaw / 2.0).sin(), 0.0],
        )?;
        let sil = render_silhouette(&mesh.vertices, mesh.faces(), &truth, &raster);
        masks.push(Image::from_binary(16, 16, &sil.threshold(0.5))?);
        let phase: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        images.push(Image::from_fn(16, 16, 3, |r, c, k| {
            0.5 + 0.4 * ((0.6 * r as f64 + 0.35 * c as f64) * (1.0 + 0.2 * k as f64) + 6.0 * phase[k]).sin()
        }));
        keypoints.push(KeypointSet {
            points: (0..5)
                .map(|_| Vec2::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6)))
                .collect(),
            visible: (0..5).map(|i| i != 2).collect(),
        });
        samples.push(
            (0..2)
                .map(|p| {
                    (0..6)
                        .map(|_| Vec2::new(rng.random_range(-0.6..0.0) + 0.6 * p as f64, rng.random_range(-0.5..0.5)))
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>(),
        );
        let jitter = |rng: &mut ChaCha8Rng, s: f64| rng.random_range(-s..s);
        let q = [1.0, jitter(&mut rng, 0.1), yaw / 2.0 + jitter(&mut rng, 0.1), jitter(&mut rng, 0.1)];
        states.push(FrameState {
            camera: WeakPerspectiveCamera::new(truth.scale * rng.random_range(0.9..1.1), truth.translation, q)?,
            shape: ShapeParams {
                logits: vec![jitter(&mut rng, 0.5), jitter(&mut rng, 0.5)],
                offsets: (0..nv)
                    .map(|_| Vec3::new(jitter(&mut rng, 0.05), jitter(&mut rng, 0.05), jitter(&mut rng, 0.05)))
                    .collect(),
            },
            flow_offset: (0..texels.len())
                .map(|_| Vec2::new(jitter(&mut rng, 0.03), jitter(&mut rng, 0.03)))
                .collect(),
        });
    }

    let ctx = ObjectiveContext {
        bases: &bases,
        topology: mesh.topology(),
        chart: &chart,
        texels: &texels,
        cotan: &cotan,
        raster,
        distance: ImageDistance::default(),
        weights,
        keypoints3d: Some(&k3d),
        part_members: Some(&members),
        mirror: (loss == "total").then_some(&mirror),
    };
    let frames: Vec<FrameData> = (0..2)
        .map(|k| FrameData {
            image: &images[k],
            mask: &masks[k],
            keypoints: Some(&keypoints[k]),
            part_samples: &samples[k],
        })
        .collect();
    let pairs = [(0, 1)];
    let rasters = window_rasters(&ctx, &states)?;
    let eval = window_objective_frozen(&ctx, &frames, &states, &pairs, &rasters, true)?;
    let analytic: Vec<Vec<f64>> = eval.grads.expect("gradients requested").iter().map(flatten_grad).collect();

    let layout = Layout::of(&states[0]);
    let objective = |s: &[FrameState]| -> Result<f64> {
        Ok(window_objective_frozen(&ctx, &frames, s, &pairs, &rasters, false)?.total)
    };
    let mut worst = [0.0f64; 4];
    let mut scale = [0.0f64; 4];
    for f in 0..states.len() {
        let base = flatten_state(&states[f]);
        for (bi, block) in BLOCKS.iter().enumerate() {
            for k in layout.range(*block) {
                let h = 1e-5 * base[k].abs().max(1.0);
                let mut probe = states.clone();
                let mut x = base.clone();
                x[k] = base[k] + h;
                unflatten_into(&mut probe[f], &x);
                let hi = objective(&probe)?;
                x[k] = base[k] - h;
                unflatten_into(&mut probe[f], &x);
                let lo = objective(&probe)?;
                let fd = (hi - lo) / (2.0 * h);
                worst[bi] = worst[bi].max((fd - analytic[f][k]).abs());
                scale[bi] = scale[bi].max(fd.abs());
            }
        }
    }
    Ok(GradcheckReport {
        loss: loss.to_string(),
        seed,
        tolerance: tol,
        blocks: BLOCKS
            .iter()
            .enumerate()
            .map(|(bi, b)| (*b, worst[bi] / scale[bi].max(NEGLIGIBLE)))
            .collect(),
    })
}
