use crate::camera::{Projector, CAMERA_PARAMS};
use crate::geometry::{surface_position, TexelTable};
use crate::image::{Bilinear, Image};
use crate::{Vec2, Vec3};

/// Per-texel image coordinates (NDC), row-major over the UV grid.
///
/// A flow is formed as the projection of each texel's surface point under a
/// frame's own shape and camera, plus a free per-texel residual, and then
/// clamped to `[-1, 1]^2`. Uncharted texels use their nearest surface point
/// so the whole grid stays defined.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureFlow {
    pub height: usize,
    pub width: usize,
    pub coords: Vec<Vec2>,
    /// Whether each coordinate hit the clamp (and so has zero derivative).
    pub clamped: Vec<[bool; 2]>,
}

impl TextureFlow {
    /// Wraps raw coordinates, clamping them to `[-1, 1]^2`.
    pub fn from_coords(height: usize, width: usize, coords: Vec<Vec2>) -> Self {
        let mut clamped = Vec::with_capacity(coords.len());
        let coords = coords
            .into_iter()
            .map(|p| {
                clamped.push([p.x.abs() > 1.0, p.y.abs() > 1.0]);
                Vec2::new(p.x.clamp(-1.0, 1.0), p.y.clamp(-1.0, 1.0))
            })
            .collect();
        Self {
            height,
            width,
            coords,
            clamped,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

pub fn texture_flow(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    projector: &Projector,
    texels: &TexelTable,
    offset: &[Vec2],
) -> TextureFlow {
    let coords = texels
        .points
        .iter()
        .zip(offset)
        .map(|(sp, o)| projector.project(&surface_position(vertices, faces, sp)) + o)
        .collect();
    TextureFlow::from_coords(texels.height, texels.width, coords)
}

/// Back-propagates `dL/dflow` to vertices, camera and the residual.
#[allow(clippy::too_many_arguments)]
pub fn texture_flow_backward(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    projector: &Projector,
    texels: &TexelTable,
    flow: &TextureFlow,
    grad_flow: &[Vec2],
    grad_vertices: &mut [Vec3],
    grad_camera: &mut [f64; CAMERA_PARAMS],
    grad_offset: &mut [Vec2],
) {
    for (k, sp) in texels.points.iter().enumerate() {
        let mut g = grad_flow[k];
        let [cx, cy] = flow.clamped[k];
        if cx {
            g.x = 0.0;
        }
        if cy {
            g.y = 0.0;
        }
        if g.x == 0.0 && g.y == 0.0 {
            continue;
        }
        grad_offset[k] += g;
        let pos = surface_position(vertices, faces, sp);
        let gv = projector.backward(&pos, g, grad_camera);
        let face = faces[sp.face];
        for c in 0..3 {
            grad_vertices[face[c]] += gv * sp.bary[c];
        }
    }
}

/// `I_uv(u, v)`: bilinear samples of `frame` at each flow coordinate.
pub fn sample_texture_flow(frame: &Image, flow: &TextureFlow) -> Image {
    let mut out = Image::new(flow.height, flow.width, frame.channels());
    for (k, p) in flow.coords.iter().enumerate() {
        Bilinear::ndc(frame.height(), frame.width(), *p).sample(frame, out.pixel_mut(k));
    }
    out
}

/// Gradients of [`sample_texture_flow`] w.r.t. the flow coordinates and,
/// optionally, the frame.
pub fn sample_texture_flow_backward(
    frame: &Image,
    flow: &TextureFlow,
    grad_uv: &Image,
    mut grad_frame: Option<&mut Image>,
) -> Vec<Vec2> {
    flow.coords
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let st = Bilinear::ndc(frame.height(), frame.width(), *p);
            let g = grad_uv.pixel(k);
            if let Some(gf) = grad_frame.as_deref_mut() {
                st.scatter(gf, g);
            }
            st.coord_grad(frame, g)
        })
        .collect()
}
