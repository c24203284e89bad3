//! Desk-scale differentiable rendering.
//!
//! Silhouettes use soft rasterisation: every face covers a pixel with
//! probability `sigmoid(sign * dist^2 / sigma)`, where `dist` is the distance
//! from the pixel centre to the face boundary and `sign` is `+1` inside, and
//! the per-face probabilities are combined as `1 - prod (1 - d_f)`. Textured
//! images use hard z-buffered visibility and are differentiable only w.r.t.
//! the texture image. Texture flows map UV texels to image coordinates.

mod flow;
mod raster;
mod soft;

pub use flow::{sample_texture_flow, sample_texture_flow_backward, texture_flow, texture_flow_backward, TextureFlow};
pub use raster::{rasterize, render_texture_backward, render_texture_raster, Raster, NO_FACE};
pub use soft::{soft_silhouette, soft_silhouette_backward, Silhouette};

use crate::camera::{Projector, WeakPerspectiveCamera, CAMERA_PARAMS};
use crate::error::{Error, Result};
use crate::geometry::UvChart;
use crate::image::Image;
use crate::{Vec2, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftRasterConfig {
    /// Boundary sharpness in squared NDC units.
    pub sigma: f64,
    /// Kept for configuration compatibility; the product aggregation does
    /// not use a temperature.
    pub gamma: f64,
    pub height: usize,
    pub width: usize,
}

impl Default for SoftRasterConfig {
    fn default() -> Self {
        Self {
            sigma: 1e-4,
            gamma: 1e-4,
            height: 64,
            width: 64,
        }
    }
}

impl SoftRasterConfig {
    pub fn new(sigma: f64, gamma: f64, height: usize, width: usize) -> Result<Self> {
        if !(sigma > 0.0) || !(gamma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma and gamma must be positive, got {sigma} and {gamma}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("image size must be positive".into()));
        }
        Ok(Self {
            sigma,
            gamma,
            height,
            width,
        })
    }

    pub fn with_sigma(self, sigma: f64) -> Self {
        Self { sigma, ..self }
    }
}

/// Soft silhouette of a mesh seen through `cam`.
pub fn render_silhouette(vertices: &[Vec3], faces: &[[usize; 3]], cam: &WeakPerspectiveCamera, cfg: &SoftRasterConfig) -> Image {
    let proj = Projector::new(cam);
    let pts: Vec<Vec2> = vertices.iter().map(|v| proj.project(v)).collect();
    soft_silhouette(&pts, faces, cfg).mask
}

/// Forward silhouette pass that keeps what the backward pass needs.
#[derive(Debug, Clone)]
pub struct SilhouettePass {
    pub points: Vec<Vec2>,
    pub silhouette: Silhouette,
}

impl SilhouettePass {
    pub fn new(vertices: &[Vec3], faces: &[[usize; 3]], proj: &Projector, cfg: &SoftRasterConfig) -> Self {
        let points: Vec<Vec2> = vertices.iter().map(|v| proj.project(v)).collect();
        let silhouette = soft_silhouette(&points, faces, cfg);
        Self { points, silhouette }
    }

    pub fn mask(&self) -> &Image {
        &self.silhouette.mask
    }

    /// Accumulates `dL/dV` and `dL/dcam` given `dL/dmask`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        vertices: &[Vec3],
        faces: &[[usize; 3]],
        proj: &Projector,
        cfg: &SoftRasterConfig,
        grad_mask: &[f64],
        grad_vertices: &mut [Vec3],
        grad_camera: &mut [f64; CAMERA_PARAMS],
    ) {
        let gp = soft_silhouette_backward(&self.points, faces, cfg, &self.silhouette, grad_mask);
        for (i, g) in gp.into_iter().enumerate() {
            if g.x != 0.0 || g.y != 0.0 {
                grad_vertices[i] += proj.backward(&vertices[i], g, grad_camera);
            }
        }
    }
}

/// Hard raster of a mesh seen through `proj`.
pub fn rasterize_mesh(vertices: &[Vec3], faces: &[[usize; 3]], proj: &Projector, height: usize, width: usize) -> Raster {
    let pts: Vec<Vec2> = vertices.iter().map(|v| proj.project(v)).collect();
    let depth: Vec<f64> = vertices.iter().map(|v| proj.depth(v)).collect();
    rasterize(&pts, &depth, faces, height, width)
}

/// Textured render: nearest visible face, chart lookup, bilinear texture
/// sample. Background is black.
pub fn render_texture(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    cam: &WeakPerspectiveCamera,
    texture: &Image,
    chart: &UvChart,
    cfg: &SoftRasterConfig,
) -> Image {
    let raster = rasterize_mesh(vertices, faces, &Projector::new(cam), cfg.height, cfg.width);
    render_texture_raster(&raster, chart, texture)
}
