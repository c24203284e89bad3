use super::image_terms::{niou_with_grad, ImageDistance};
use crate::camera::{Projector, WeakPerspectiveCamera, CAMERA_PARAMS};
use crate::error::Result;
use crate::geometry::UvChart;
use crate::image::Image;
use crate::render::{render_texture_backward, render_texture_raster, Raster, SilhouettePass, SoftRasterConfig};
use crate::Vec3;

/// `dist(R(raster, texture) * mask, image * mask)` and its gradient w.r.t.
/// the texture. Visibility comes from the fixed raster.
pub fn texture_term(
    chart: &UvChart,
    dist: &ImageDistance,
    raster: &Raster,
    texture: &Image,
    image: &Image,
    mask: &Image,
) -> Result<(f64, Image)> {
    let rendered = render_texture_raster(raster, chart, texture).masked(mask)?;
    let target = image.masked(mask)?;
    let (value, grad_img) = dist.eval_with_grad(&rendered, &target)?;
    let grad_img = grad_img.masked(mask)?;
    let mut grad_tex = Image::new(texture.height(), texture.width(), texture.channels());
    render_texture_backward(raster, chart, &grad_img, &mut grad_tex);
    Ok((value, grad_tex))
}

/// One frame as seen by the texture-swap term: its rasterised geometry, its
/// UV texture, the observed image and the observed mask.
#[derive(Debug, Clone, Copy)]
pub struct TexturedFrame<'a> {
    pub raster: &'a Raster,
    pub texture: &'a Image,
    pub image: &'a Image,
    pub mask: &'a Image,
}

/// Renders each frame's geometry with the other frame's texture.
pub fn loss_texture_swap(chart: &UvChart, dist: &ImageDistance, i: &TexturedFrame, j: &TexturedFrame) -> Result<f64> {
    loss_texture_swap_with_grad(chart, dist, i, j).map(|(v, _, _)| v)
}

/// [`loss_texture_swap`] with gradients w.r.t. the textures of `i` and `j`.
pub fn loss_texture_swap_with_grad(
    chart: &UvChart,
    dist: &ImageDistance,
    i: &TexturedFrame,
    j: &TexturedFrame,
) -> Result<(f64, Image, Image)> {
    let (vi, grad_tex_j) = texture_term(chart, dist, i.raster, j.texture, i.image, i.mask)?;
    let (vj, grad_tex_i) = texture_term(chart, dist, j.raster, i.texture, j.image, j.mask)?;
    Ok((vi + vj, grad_tex_i, grad_tex_j))
}

/// Gradients of a silhouette term.
#[derive(Debug, Clone)]
pub struct SilhouetteGrad {
    pub vertices: Vec<Vec3>,
    pub camera: [f64; CAMERA_PARAMS],
}

/// `niou(R(V, cam), mask)` with gradients w.r.t. `V` and the camera.
pub fn silhouette_term(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    proj: &Projector,
    cfg: &SoftRasterConfig,
    mask: &Image,
) -> Result<(f64, SilhouetteGrad)> {
    let pass = SilhouettePass::new(vertices, faces, proj, cfg);
    let (value, grad_mask) = niou_with_grad(pass.mask(), mask)?;
    let mut grad = SilhouetteGrad {
        vertices: vec![Vec3::zeros(); vertices.len()],
        camera: [0.0; CAMERA_PARAMS],
    };
    pass.backward(vertices, faces, proj, cfg, &grad_mask, &mut grad.vertices, &mut grad.camera);
    Ok((value, grad))
}

/// One frame as seen by the base-swap term.
#[derive(Debug, Clone, Copy)]
pub struct BaseSwapFrame<'a> {
    pub base: &'a [Vec3],
    pub offsets: &'a [Vec3],
    pub camera: &'a WeakPerspectiveCamera,
    pub mask: &'a Image,
}

/// Gradients of [`loss_base_swap_with_grad`] for both frames.
#[derive(Debug, Clone)]
pub struct BaseSwapGrad {
    pub base_i: Vec<Vec3>,
    pub offsets_i: Vec<Vec3>,
    pub camera_i: [f64; CAMERA_PARAMS],
    pub base_j: Vec<Vec3>,
    pub offsets_j: Vec<Vec3>,
    pub camera_j: [f64; CAMERA_PARAMS],
}

/// `niou(R(V_base^j + dV^i, cam^i), S^i) + niou(R(V_base^i + dV^j, cam^j), S^j)`.
pub fn loss_base_swap(faces: &[[usize; 3]], cfg: &SoftRasterConfig, i: &BaseSwapFrame, j: &BaseSwapFrame) -> Result<f64> {
    loss_base_swap_with_grad(faces, cfg, i, j).map(|(v, _)| v)
}

pub fn loss_base_swap_with_grad(
    faces: &[[usize; 3]],
    cfg: &SoftRasterConfig,
    i: &BaseSwapFrame,
    j: &BaseSwapFrame,
) -> Result<(f64, BaseSwapGrad)> {
    let swapped = |base: &[Vec3], offsets: &[Vec3]| -> Vec<Vec3> { base.iter().zip(offsets).map(|(b, d)| b + d).collect() };
    let vi = swapped(j.base, i.offsets);
    let (li, gi) = silhouette_term(&vi, faces, &Projector::new(i.camera), cfg, i.mask)?;
    let vj = swapped(i.base, j.offsets);
    let (lj, gj) = silhouette_term(&vj, faces, &Projector::new(j.camera), cfg, j.mask)?;
    Ok((
        li + lj,
        BaseSwapGrad {
            base_i: gj.vertices.clone(),
            offsets_i: gi.vertices.clone(),
            camera_i: gi.camera,
            base_j: gi.vertices,
            offsets_j: gj.vertices,
            camera_j: gj.camera,
        },
    ))
}
