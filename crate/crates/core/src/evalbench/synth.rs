use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adaptation::{Mode, VideoProblem};
use crate::camera::{Projector, WeakPerspectiveCamera};
use crate::error::{Error, Result};
use crate::geometry::{icosphere, latlong_chart, surface_position, SurfacePoint, Topology, TriMesh, UvChart};
use crate::image::{ndc_to_pixel, Image, LabelMap};
use crate::losses::{KeypointSet, LossWeights};
use crate::render::{rasterize_mesh, render_silhouette, SoftRasterConfig, NO_FACE};
use crate::shape::{compose_shape, MirrorPairing, ShapeBasisSet, ShapeParams};
use crate::{Vec2, Vec3};

/// Number of ground-truth parts.
pub const SYNTH_PARTS: usize = 6;
/// Number of keypoints.
pub const SYNTH_KEYPOINTS: usize = 15;

/// Settings of the synthetic sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub num_frames: usize,
    pub resolution: usize,
    pub texture_resolution: usize,
    /// Per-pixel probability of flipping an observed mask pixel.
    pub mask_noise: f64,
    /// Per-pixel probability of replacing a foreground part label with a
    /// random one.
    pub part_noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_frames: 60,
            resolution: 64,
            texture_resolution: 32,
            mask_noise: 0.0,
            part_noise: 0.0,
        }
    }
}

/// Everything the generator knows about the sequence.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub vertices: Vec<Vec<Vec3>>,
    pub cameras: Vec<WeakPerspectiveCamera>,
    pub logits: Vec<Vec<f64>>,
    pub offsets: Vec<Vec<Vec3>>,
    pub keypoints2d: Vec<KeypointSet>,
    pub keypoints3d: Vec<SurfacePoint>,
    /// Noise-free masks (the problem may carry noisy ones).
    pub masks: Vec<Image>,
    /// Template rest positions (unit sphere, body along x, up along y).
    pub rest: Vec<Vec3>,
}

#[derive(Debug, Clone)]
pub struct SyntheticVideo {
    pub problem: VideoProblem,
    pub truth: GroundTruth,
}

/// Unit icosphere (two subdivisions) with its lat-long chart, turned so
/// that the poles lie on the y axis and the mirror plane is `z = 0`.
pub fn synthetic_template(texture_resolution: usize) -> (TriMesh, UvChart, MirrorPairing) {
    let sphere = icosphere(2);
    let chart = latlong_chart(&sphere, texture_resolution, texture_resolution);
    let turned: Vec<Vec3> = sphere.vertices.iter().map(|v| Vec3::new(v.x, v.z, -v.y)).collect();
    let mesh = TriMesh::from_topology(sphere.topology().clone(), turned).expect("same topology");
    let mirror = MirrorPairing::from_positions(&mesh.vertices, 2, 1e-9).expect("the icosphere is mirror-symmetric");
    (mesh, chart, mirror)
}

/// Four mirror-symmetric body shapes that differ in profile (taper, hump,
/// bend) but share their axis-aligned extents: 2 long in x, 1 high in y and
/// 0.9 wide in z. Under a weak-perspective camera a body that is uniformly
/// wider or taller is indistinguishable from a rotated, rescaled one, so
/// extents alone would not be recoverable from silhouettes.
pub fn synthetic_bases(rest: &[Vec3]) -> ShapeBasisSet {
    let shapes: [fn(&Vec3) -> Vec3; 4] = [
        |p| Vec3::new(p.x, p.y, p.z),
        |p| Vec3::new(p.x, p.y * (1.0 + 0.45 * p.x) + 0.15 * p.x * p.x, p.z * (1.0 + 0.3 * p.x)),
        |p| {
            let hump = 0.6 * p.y.max(0.0) * (-(p.x / 0.35).powi(2)).exp();
            Vec3::new(p.x, p.y + hump, p.z)
        },
        |p| Vec3::new(p.x, p.y * (1.0 - 0.4 * p.x) - 0.2 * p.x * p.x, p.z * (1.0 - 0.3 * p.x.abs())),
    ];
    let extent = Vec3::new(2.0, 1.0, 0.9);
    let bases = shapes
        .iter()
        .map(|f| {
            let raw: Vec<Vec3> = rest.iter().map(f).collect();
            let lo = raw.iter().fold(Vec3::repeat(f64::INFINITY), |a, v| a.inf(v));
            let hi = raw.iter().fold(Vec3::repeat(f64::NEG_INFINITY), |a, v| a.sup(v));
            // x and y are recentred; z is only rescaled so the mirror plane stays at z = 0
            let mid = Vec3::new(0.5 * (lo.x + hi.x), 0.5 * (lo.y + hi.y), 0.0);
            let span = hi - lo;
            raw.iter().map(|v| (v - mid).component_div(&span).component_mul(&extent)).collect()
        })
        .collect();
    ShapeBasisSet::new(bases).expect("shared topology")
}

fn smooth_colour(p: &Vec3, palette: &[[f64; 3]; 3]) -> [f64; 3] {
    let a = 0.5 + 0.5 * (6.0 * p.x + 2.0 * p.y).sin();
    let b = 0.5 + 0.5 * (5.0 * p.z - 3.0 * p.x).sin() * (4.0 * p.y).cos();
    let mut c = [0.0; 3];
    for k in 0..3 {
        c[k] = (palette[0][k] * (1.0 - a) + palette[1][k] * a) * (0.75 + 0.25 * b) + 0.15 * palette[2][k] * (1.0 - b);
    }
    c
}

fn background(r: usize, c: usize, res: usize) -> [f64; 3] {
    let (y, x) = (r as f64 / res as f64, c as f64 / res as f64);
    [0.15 + 0.1 * x, 0.2 + 0.1 * y, 0.3 + 0.05 * (x + y)]
}

fn part_of(p: &Vec3) -> u8 {
    let xi = if p.x < -1.0 / 3.0 {
        0
    } else if p.x < 1.0 / 3.0 {
        1
    } else {
        2
    };
    1 + 2 * xi + (p.y >= 0.0) as u8
}

/// Fifteen surface points spread over the `z > 0` side of the template,
/// away from the poles and the chart seam.
fn keypoint_sites(mesh: &TriMesh, chart: &UvChart) -> Vec<SurfacePoint> {
    let table = chart.texel_table();
    let mut out = Vec::with_capacity(SYNTH_KEYPOINTS);
    for colat in [0.36, 0.5, 0.64] {
        for lon in [0.2, 0.35, 0.5, 0.65, 0.8] {
            // direction on the original (unturned) sphere: longitude in (pi, 2 pi)
            let (theta, phi) = (colat * PI, PI + lon * PI);
            let d = Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
            let turned = Vec3::new(d.x, d.z, -d.y);
            let best = (0..table.len())
                .filter(|&t| table.charted[t])
                .min_by(|&a, &b| {
                    let pa = surface_position(&mesh.vertices, mesh.faces(), &table.points[a]);
                    let pb = surface_position(&mesh.vertices, mesh.faces(), &table.points[b]);
                    (pa - turned).norm_squared().total_cmp(&(pb - turned).norm_squared())
                })
                .expect("charted texels");
            out.push(table.points[best]);
        }
    }
    out
}

fn axis_angle(axis: Vector3<f64>, angle: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
}

/// Seeded synthetic video: a textured blob with a fixed basis mixture whose
/// asymmetric motion (tail wag and head nod) and camera vary smoothly over
/// time.
pub fn make_synthetic_video(cfg: &SyntheticConfig) -> Result<SyntheticVideo> {
    if cfg.num_frames == 0 {
        return Err(Error::InvalidArgument("frames must be at least 1".into()));
    }
    if cfg.resolution < 8 || cfg.texture_resolution < 4 {
        return Err(Error::InvalidArgument(format!(
            "resolution {} / texture resolution {} too small",
            cfg.resolution, cfg.texture_resolution
        )));
    }
    if !(0.0..=1.0).contains(&cfg.mask_noise) || !(0.0..=1.0).contains(&cfg.part_noise) {
        return Err(Error::InvalidArgument("noise probabilities must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mesh, chart, mirror) = synthetic_template(cfg.texture_resolution);
    let bases = synthetic_bases(&mesh.vertices);
    let dominant = rng.random_range(0..bases.len());
    let secondary = (dominant + rng.random_range(1..bases.len())) % bases.len();
    let phase: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..TAU)).collect();
    let palette: [[f64; 3]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(0.35..0.95)));
    let res = cfg.resolution;
    let raster_cfg = SoftRasterConfig::new(1e-4, 1e-4, res, res)?;
    let keypoints3d = keypoint_sites(&mesh, &chart);
    let faces = mesh.faces();
    let rest = mesh.vertices.clone();

    struct Frame {
        vertices: Vec<Vec3>,
        camera: WeakPerspectiveCamera,
        logits: Vec<f64>,
        offsets: Vec<Vec3>,
        image: Image,
        mask: Image,
        parts: LabelMap,
        keypoints: KeypointSet,
    }

    let frames: Vec<Frame> = (0..cfg.num_frames)
        .into_par_iter()
        .map(|k| -> Result<Frame> {
            let t = k as f64;
            let mut logits = vec![0.0; bases.len()];
            logits[dominant] = 3.0;
            logits[secondary] = 1.2 * phase[0].sin();
            let wag = 0.09 * (TAU * t / 20.0 + phase[1]).sin();
            let nod = 0.05 * (TAU * t / 30.0 + phase[2]).sin();
            let offsets: Vec<Vec3> = rest
                .iter()
                .map(|p| {
                    let tail = ((-p.x - 0.2) / 0.8).max(0.0);
                    let head = ((p.x - 0.4) / 0.6).max(0.0);
                    Vec3::new(0.0, nod * head * head, wag * tail * tail)
                })
                .collect();
            let shape = compose_shape(&bases, &ShapeParams { logits: logits.clone(), offsets: offsets.clone() })?;
            let q = axis_angle(Vector3::y(), 25f64.to_radians() * (TAU * t / 60.0 + phase[3]).sin())
                * axis_angle(Vector3::x(), 10f64.to_radians() * (TAU * t / 45.0 + phase[4]).sin())
                * axis_angle(Vector3::z(), 6f64.to_radians() * (TAU * t / 70.0 + phase[5]).sin());
            let camera = WeakPerspectiveCamera::new(
                0.55 + 0.05 * (TAU * t / 50.0 + phase[6]).sin(),
                Vec2::new(0.06 * (TAU * t / 40.0 + phase[7]).sin(), 0.04 * (TAU * t / 65.0 + phase[6]).cos()),
                [q.w, q.i, q.j, q.k],
            )?;
            let proj = Projector::new(&camera);
            let v = shape.full;
            let raster = rasterize_mesh(&v, faces, &proj, res, res);
            let sil = render_silhouette(&v, faces, &camera, &raster_cfg).threshold(0.5);
            let mask = Image::from_binary(res, res, &sil)?;
            let mut parts = LabelMap::new(res, res);
            let image = Image::from_fn(res, res, 3, |r, c, ch| {
                let pix = r * res + c;
                let f = raster.face[pix];
                if f == NO_FACE {
                    return background(r, c, res)[ch];
                }
                let sp = SurfacePoint { face: f as usize, bary: raster.bary[pix] };
                smooth_colour(&surface_position(&rest, faces, &sp), &palette)[ch]
            });
            for pix in 0..res * res {
                let f = raster.face[pix];
                if sil[pix] && f != NO_FACE {
                    let sp = SurfacePoint { face: f as usize, bary: raster.bary[pix] };
                    parts.labels[pix] = part_of(&surface_position(&rest, faces, &sp));
                }
            }
            let mut points = Vec::with_capacity(SYNTH_KEYPOINTS);
            let mut visible = Vec::with_capacity(SYNTH_KEYPOINTS);
            for sp in &keypoints3d {
                let pos = surface_position(&v, faces, sp);
                let p = proj.project(&pos);
                let vis = ndc_to_pixel(res, res, p).is_some_and(|(r, c)| {
                    let pix = r * res + c;
                    raster.face[pix] != NO_FACE && proj.depth(&pos) >= raster.depth[pix] - 0.05
                });
                points.push(p);
                visible.push(vis);
            }
            Ok(Frame {
                vertices: v,
                camera,
                logits,
                offsets,
                image,
                mask,
                parts,
                keypoints: KeypointSet { points, visible },
            })
        })
        .collect::<Result<_>>()?;

    // noise is drawn sequentially so it does not depend on scheduling
    let mut noisy_masks = Vec::with_capacity(frames.len());
    let mut part_maps = Vec::with_capacity(frames.len());
    for f in &frames {
        let mut m = f.mask.clone();
        if cfg.mask_noise > 0.0 {
            for v in m.data_mut() {
                if rng.random_bool(cfg.mask_noise) {
                    *v = 1.0 - *v;
                }
            }
        }
        noisy_masks.push(m);
        let mut p = f.parts.clone();
        if cfg.part_noise > 0.0 {
            for l in &mut p.labels {
                if *l != 0 && rng.random_bool(cfg.part_noise) {
                    *l = rng.random_range(1..=SYNTH_PARTS as u8);
                }
            }
        }
        part_maps.push(p);
    }

    let topology: Arc<Topology> = mesh.topology().clone();
    let problem = VideoProblem {
        frames: frames.iter().map(|f| f.image.clone()).collect(),
        masks: noisy_masks,
        parts: part_maps,
        num_parts: SYNTH_PARTS,
        keypoints: Some(frames.iter().map(|f| f.keypoints.clone()).collect()),
        keypoints3d: Some(keypoints3d.clone()),
        topology,
        chart,
        bases,
        mirror: Some(mirror),
        weights: LossWeights::adaptation(),
        mode: Mode::Weak,
    };
    let truth = GroundTruth {
        vertices: frames.iter().map(|f| f.vertices.clone()).collect(),
        cameras: frames.iter().map(|f| f.camera).collect(),
        logits: frames.iter().map(|f| f.logits.clone()).collect(),
        offsets: frames.iter().map(|f| f.offsets.clone()).collect(),
        keypoints2d: frames.iter().map(|f| f.keypoints.clone()).collect(),
        keypoints3d,
        masks: frames.into_iter().map(|f| f.mask).collect(),
        rest,
    };
    Ok(SyntheticVideo { problem, truth })
}
