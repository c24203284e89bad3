use crate::camera::{Projector, WeakPerspectiveCamera, CAMERA_PARAMS};
use crate::error::{Error, Result};
use crate::geometry::{surface_position, SurfacePoint, TexelTable};
use crate::image::{pixel_center, Image};
use crate::render::{sample_texture_flow, TextureFlow};
use crate::{Vec2, Vec3};

/// 2D keypoints (NDC) with visibility flags.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    pub points: Vec<Vec2>,
    pub visible: Vec<bool>,
}

impl KeypointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn num_visible(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }
}

/// Mean L2 re-projection error over the visible keypoints.
pub fn loss_keypoint(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    k3d: &[SurfacePoint],
    cam: &WeakPerspectiveCamera,
    k2d: &KeypointSet,
) -> Result<f64> {
    loss_keypoint_with_grad(vertices, faces, k3d, cam, k2d).map(|(v, _, _)| v)
}

/// [`loss_keypoint`] with gradients w.r.t. the vertices and the camera. A
/// keypoint projecting exactly onto its target contributes a zero
/// subgradient.
pub fn loss_keypoint_with_grad(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    k3d: &[SurfacePoint],
    cam: &WeakPerspectiveCamera,
    k2d: &KeypointSet,
) -> Result<(f64, Vec<Vec3>, [f64; CAMERA_PARAMS])> {
    if k3d.len() != k2d.len() || k2d.visible.len() != k2d.len() {
        return Err(Error::Dimension(format!(
            "{} surface keypoints, {} image keypoints, {} visibility flags",
            k3d.len(),
            k2d.len(),
            k2d.visible.len()
        )));
    }
    let mut grad_v = vec![Vec3::zeros(); vertices.len()];
    let mut grad_c = [0.0; CAMERA_PARAMS];
    let visible = k2d.num_visible();
    if visible == 0 {
        log::warn!("keypoint loss has no visible keypoints; returning 0");
        return Ok((0.0, grad_v, grad_c));
    }
    let proj = Projector::new(cam);
    let n = visible as f64;
    let mut value = 0.0;
    for ((sp, target), &vis) in k3d.iter().zip(&k2d.points).zip(&k2d.visible) {
        if !vis {
            continue;
        }
        let pos = surface_position(vertices, faces, sp);
        let r = proj.project(&pos) - target;
        let len = r.norm();
        value += len;
        if len > 0.0 {
            let gv = proj.backward(&pos, r / (len * n), &mut grad_c);
            let face = faces[sp.face];
            for c in 0..3 {
                grad_v[face[c]] += gv * sp.bary[c];
            }
        }
    }
    Ok((value / n, grad_v, grad_c))
}

/// One isotropic Gaussian channel per keypoint (`sigma` in NDC); invisible
/// keypoints get an all-zero channel.
pub fn keypoint_heatmaps(k2d: &KeypointSet, height: usize, width: usize, sigma: f64) -> Image {
    let n = k2d.len();
    let inv = 1.0 / (2.0 * sigma * sigma);
    Image::from_fn(height, width, n, |r, c, k| {
        if !k2d.visible[k] {
            return 0.0;
        }
        let d = pixel_center(height, width, r, c) - k2d.points[k];
        (-d.norm_squared() * inv).exp()
    })
}

/// Maps an image-space heat map into UV space through a texture flow.
pub fn heatmap_to_uv(heatmap: &Image, flow: &TextureFlow) -> Image {
    sample_texture_flow(heatmap, flow)
}

/// Instance-averaged UV heat maps and the surface point of each channel's
/// strongest charted texel.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalKeypointMap {
    pub heat: Image,
    pub texels: Vec<(usize, usize)>,
    pub points: Vec<SurfacePoint>,
}

/// Elementwise mean of UV heat maps. Each element is summed in sorted
/// order, which makes the result exactly independent of instance order.
pub(crate) fn order_free_mean(instances: &[Image]) -> Result<Image> {
    let first = instances
        .first()
        .ok_or_else(|| Error::InvalidArgument("aggregation needs at least one instance".into()))?;
    for inst in instances {
        first.check_shape(inst)?;
    }
    let n = instances.len() as f64;
    let mut scratch = vec![0.0; instances.len()];
    let data = (0..first.data().len())
        .map(|e| {
            for (s, inst) in scratch.iter_mut().zip(instances) {
                *s = inst.data()[e];
            }
            scratch.sort_by(f64::total_cmp);
            scratch.iter().sum::<f64>() / n
        })
        .collect();
    Image::from_data(first.height(), first.width(), first.channels(), data)
}

pub fn aggregate_canonical_keypoints(instances: &[Image], table: &TexelTable) -> Result<CanonicalKeypointMap> {
    let heat = order_free_mean(instances)?;
    if heat.height() != table.height || heat.width() != table.width {
        return Err(Error::Dimension(format!(
            "UV heat maps are {}x{}, the texel table is {}x{}",
            heat.height(),
            heat.width(),
            table.height,
            table.width
        )));
    }
    let mut texels = Vec::with_capacity(heat.channels());
    let mut points = Vec::with_capacity(heat.channels());
    for k in 0..heat.channels() {
        let best = (0..heat.num_pixels())
            .filter(|&t| table.charted[t])
            .fold(None, |acc: Option<(usize, f64)>, t| {
                let v = heat.pixel(t)[k];
                match acc {
                    Some((_, bv)) if bv >= v => acc,
                    _ => Some((t, v)),
                }
            })
            .ok_or(Error::UnchartedTexel { u: f64::NAN, v: f64::NAN })?;
        texels.push((best.0 / heat.width(), best.0 % heat.width()));
        points.push(table.points[best.0]);
    }
    Ok(CanonicalKeypointMap { heat, texels, points })
}
