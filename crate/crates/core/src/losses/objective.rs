use rayon::prelude::*;

use super::image_terms::ImageDistance;
use super::keypoint::{loss_keypoint_with_grad, KeypointSet};
use super::parts::part_term;
use super::swap::{
    loss_base_swap_with_grad, loss_texture_swap_with_grad, silhouette_term, texture_term, BaseSwapFrame, BaseSwapGrad,
    TexturedFrame,
};
use super::weights::LossWeights;
use crate::arap::arap_energy_with_grad;
use crate::camera::{Projector, CAMERA_PARAMS};
use crate::error::{Error, Result};
use crate::geometry::{laplacian_smoothness_with_grad, CotanWeights, SurfacePoint, TexelTable, Topology, UvChart};
use crate::image::Image;
use crate::render::{
    rasterize_mesh, sample_texture_flow, sample_texture_flow_backward, texture_flow, texture_flow_backward, Raster,
    SoftRasterConfig, TextureFlow,
};
use crate::shape::{compose_shape, mirror_symmetrize, FrameState, MirrorPairing, ShapeBasisSet, ShapeParams};
use crate::{Vec2, Vec3};

/// Everything the objective needs that is shared by all frames.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveContext<'a> {
    pub bases: &'a ShapeBasisSet,
    pub topology: &'a Topology,
    pub chart: &'a UvChart,
    pub texels: &'a TexelTable,
    pub cotan: &'a CotanWeights,
    pub raster: SoftRasterConfig,
    pub distance: ImageDistance,
    pub weights: LossWeights,
    pub keypoints3d: Option<&'a [SurfacePoint]>,
    /// Vertex indices of every part (from the video-level part map).
    pub part_members: Option<&'a [Vec<usize>]>,
    /// When set, offsets are mirror-symmetrised before use.
    pub mirror: Option<&'a MirrorPairing>,
}

/// Observations of one frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameData<'a> {
    pub image: &'a Image,
    pub mask: &'a Image,
    pub keypoints: Option<&'a KeypointSet>,
    pub part_samples: &'a [Vec<Vec2>],
}

/// Unweighted values of every term, normalised as in the window objective:
/// per-frame terms are averaged over frames, the part term is its sum over
/// frames divided by the frame count, and the swap terms are averaged over
/// the sampled pairs. Terms with zero weight are not evaluated and read 0.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TermValues {
    pub silhouette: f64,
    pub texture: f64,
    pub laplacian: f64,
    pub arap: f64,
    pub keypoint: f64,
    pub part: f64,
    pub texture_swap: f64,
    pub base_swap: f64,
}

impl TermValues {
    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        w.silhouette * self.silhouette
            + w.texture * self.texture
            + w.laplacian * self.laplacian
            + w.arap * self.arap
            + w.keypoint * self.keypoint
            + w.part * self.part
            + w.texture_swap * self.texture_swap
            + w.base_swap * self.base_swap
    }

    fn add(&mut self, o: &TermValues) {
        self.silhouette += o.silhouette;
        self.texture += o.texture;
        self.laplacian += o.laplacian;
        self.arap += o.arap;
        self.keypoint += o.keypoint;
        self.part += o.part;
        self.texture_swap += o.texture_swap;
        self.base_swap += o.base_swap;
    }
}

/// Gradient of the objective w.r.t. one frame's state, laid out like
/// [`FrameState`].
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGrad {
    pub camera: [f64; CAMERA_PARAMS],
    pub logits: Vec<f64>,
    pub offsets: Vec<Vec3>,
    pub flow_offset: Vec<Vec2>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub total: f64,
    pub terms: TermValues,
    pub grads: Option<Vec<FrameGrad>>,
}

/// Per-frame forward quantities.
struct Forward {
    weights: Vec<f64>,
    base: Vec<Vec3>,
    offsets: Vec<Vec3>,
    full: Vec<Vec3>,
    proj: Projector,
    raster: Option<Raster>,
    flow: Option<TextureFlow>,
    texture: Option<Image>,
}

/// Gradient accumulators of one frame: `full` feeds both `V_base` and `dV`,
/// `base` only `V_base`, `offsets` only the (symmetrised) `dV`.
struct Acc {
    full: Vec<Vec3>,
    base: Vec<Vec3>,
    offsets: Vec<Vec3>,
    camera: [f64; CAMERA_PARAMS],
    texture: Option<Image>,
}

impl Acc {
    fn new(nv: usize) -> Self {
        Self {
            full: vec![Vec3::zeros(); nv],
            base: vec![Vec3::zeros(); nv],
            offsets: vec![Vec3::zeros(); nv],
            camera: [0.0; CAMERA_PARAMS],
            texture: None,
        }
    }

    fn add_texture(&mut self, g: &Image, scale: f64) {
        let t = self
            .texture
            .get_or_insert_with(|| Image::new(g.height(), g.width(), g.channels()));
        for (a, b) in t.data_mut().iter_mut().zip(g.data()) {
            *a += scale * b;
        }
    }
}

fn axpy(dst: &mut [Vec3], src: &[Vec3], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s * scale;
    }
}

fn axpy_cam(dst: &mut [f64; CAMERA_PARAMS], src: &[f64; CAMERA_PARAMS], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s * scale;
    }
}

fn check(term: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { term, iteration: 0 })
    }
}

fn forward(
    ctx: &ObjectiveContext,
    state: &FrameState,
    data: &FrameData,
    frozen: Option<&Raster>,
    textured: bool,
) -> Result<Forward> {
    let offsets = match ctx.mirror {
        Some(m) => mirror_symmetrize(&state.shape.offsets, Some(m))?,
        None => state.shape.offsets.clone(),
    };
    let composed = compose_shape(
        ctx.bases,
        &ShapeParams {
            logits: state.shape.logits.clone(),
            offsets: offsets.clone(),
        },
    )?;
    let proj = Projector::new(&state.camera);
    let faces = ctx.topology.faces();
    let (raster, flow, texture) = if textured {
        if state.flow_offset.len() != ctx.texels.len() {
            return Err(Error::Dimension(format!(
                "{} flow offsets for {} texels",
                state.flow_offset.len(),
                ctx.texels.len()
            )));
        }
        let raster = match frozen {
            Some(r) => r.clone(),
            None => rasterize_mesh(&composed.full, faces, &proj, ctx.raster.height, ctx.raster.width),
        };
        let flow = texture_flow(&composed.full, faces, &proj, ctx.texels, &state.flow_offset);
        let texture = sample_texture_flow(data.image, &flow);
        (Some(raster), Some(flow), Some(texture))
    } else {
        (None, None, None)
    };
    Ok(Forward {
        weights: composed.weights,
        base: composed.base,
        offsets,
        full: composed.full,
        proj,
        raster,
        flow,
        texture,
    })
}

/// Unnormalised per-frame terms; gradients are accumulated with the term
/// weight times `scale`.
fn frame_terms(
    ctx: &ObjectiveContext,
    state: &FrameState,
    data: &FrameData,
    fwd: &Forward,
    scale: f64,
) -> Result<(TermValues, Acc)> {
    let w = &ctx.weights;
    let faces = ctx.topology.faces();
    let mut t = TermValues::default();
    let mut acc = Acc::new(fwd.full.len());
    if w.silhouette != 0.0 {
        let (v, g) = silhouette_term(&fwd.full, faces, &fwd.proj, &ctx.raster, data.mask)?;
        t.silhouette = check("silhouette", v)?;
        axpy(&mut acc.full, &g.vertices, w.silhouette * scale);
        axpy_cam(&mut acc.camera, &g.camera, w.silhouette * scale);
    }
    if w.texture != 0.0 {
        let (raster, tex) = (fwd.raster.as_ref().expect("textured"), fwd.texture.as_ref().expect("textured"));
        let (v, g) = texture_term(ctx.chart, &ctx.distance, raster, tex, data.image, data.mask)?;
        t.texture = check("texture", v)?;
        acc.add_texture(&g, w.texture * scale);
    }
    if w.laplacian != 0.0 {
        let (v, g) = laplacian_smoothness_with_grad(ctx.topology, &fwd.full)?;
        t.laplacian = check("laplacian", v)?;
        axpy(&mut acc.full, &g, w.laplacian * scale);
    }
    if w.arap != 0.0 {
        let e = arap_energy_with_grad(&fwd.base, &fwd.full, ctx.cotan)?;
        t.arap = check("arap", e.energy)?;
        axpy(&mut acc.full, &e.grad_deformed, w.arap * scale);
        axpy(&mut acc.base, &e.grad_base, w.arap * scale);
    }
    if w.keypoint != 0.0 {
        if let (Some(k3d), Some(k2d)) = (ctx.keypoints3d, data.keypoints) {
            let (v, gv, gc) = loss_keypoint_with_grad(&fwd.full, faces, k3d, &state.camera, k2d)?;
            t.keypoint = check("keypoint", v)?;
            axpy(&mut acc.full, &gv, w.keypoint * scale);
            axpy_cam(&mut acc.camera, &gc, w.keypoint * scale);
        }
    }
    if w.part != 0.0 {
        if let Some(members) = ctx.part_members {
            let v = part_term(
                &fwd.full,
                &fwd.proj,
                members,
                data.part_samples,
                w.part * scale,
                Some(&mut acc.full),
                Some(&mut acc.camera),
            )?;
            t.part = check("part", v)?;
        }
    }
    Ok((t, acc))
}

struct PairOut {
    texture_swap: f64,
    base_swap: f64,
    tex_i: Option<Image>,
    tex_j: Option<Image>,
    base: Option<BaseSwapGrad>,
}

fn pair_terms(ctx: &ObjectiveContext, states: &[FrameState], frames: &[FrameData], fwds: &[Forward], i: usize, j: usize) -> Result<PairOut> {
    let w = &ctx.weights;
    let mut out = PairOut {
        texture_swap: 0.0,
        base_swap: 0.0,
        tex_i: None,
        tex_j: None,
        base: None,
    };
    if w.texture_swap != 0.0 {
        let tf = |k: usize| TexturedFrame {
            raster: fwds[k].raster.as_ref().expect("textured"),
            texture: fwds[k].texture.as_ref().expect("textured"),
            image: frames[k].image,
            mask: frames[k].mask,
        };
        let (v, gi, gj) = loss_texture_swap_with_grad(ctx.chart, &ctx.distance, &tf(i), &tf(j))?;
        out.texture_swap = check("texture_swap", v)?;
        out.tex_i = Some(gi);
        out.tex_j = Some(gj);
    }
    if w.base_swap != 0.0 {
        let bf = |k: usize| BaseSwapFrame {
            base: &fwds[k].base,
            offsets: &fwds[k].offsets,
            camera: &states[k].camera,
            mask: frames[k].mask,
        };
        let (v, g) = loss_base_swap_with_grad(ctx.topology.faces(), &ctx.raster, &bf(i), &bf(j))?;
        out.base_swap = check("base_swap", v)?;
        out.base = Some(g);
    }
    Ok(out)
}

fn finish(ctx: &ObjectiveContext, state: &FrameState, data: &FrameData, fwd: &Forward, acc: Acc) -> Result<FrameGrad> {
    let Acc {
        mut full,
        base,
        offsets,
        mut camera,
        texture,
    } = acc;
    let mut flow_offset = vec![Vec2::zeros(); state.flow_offset.len()];
    if let (Some(grad_uv), Some(flow)) = (texture, fwd.flow.as_ref()) {
        let grad_flow = sample_texture_flow_backward(data.image, flow, &grad_uv, None);
        texture_flow_backward(
            &fwd.full,
            ctx.topology.faces(),
            &fwd.proj,
            ctx.texels,
            flow,
            &grad_flow,
            &mut full,
            &mut camera,
            &mut flow_offset,
        );
    }
    let d_eff: Vec<Vec3> = full.iter().zip(&offsets).map(|(a, b)| a + b).collect();
    let d_offsets = match ctx.mirror {
        Some(m) => mirror_symmetrize(&d_eff, Some(m))?,
        None => d_eff,
    };
    let d_base: Vec<Vec3> = full.iter().zip(&base).map(|(a, b)| a + b).collect();
    Ok(FrameGrad {
        camera,
        logits: ctx.bases.logit_grad(&fwd.weights, &d_base),
        offsets: d_offsets,
        flow_offset,
    })
}

fn evaluate(
    ctx: &ObjectiveContext,
    frames: &[FrameData],
    states: &[FrameState],
    pairs: &[(usize, usize)],
    want_grad: bool,
    frozen: Option<&[Raster]>,
) -> Result<Evaluation> {
    let n = frames.len();
    if n == 0 || states.len() != n {
        return Err(Error::Dimension(format!("{} frames with {} states", n, states.len())));
    }
    if let Some(r) = frozen {
        if r.len() != n {
            return Err(Error::Dimension(format!("{} frozen rasters for {n} frames", r.len())));
        }
    }
    if let Some(&(i, j)) = pairs.iter().find(|(i, j)| *i >= n || *j >= n) {
        return Err(Error::InvalidArgument(format!("pair ({i}, {j}) outside a window of {n} frames")));
    }
    let w = ctx.weights;
    let textured = w.texture != 0.0 || (w.texture_swap != 0.0 && !pairs.is_empty());
    let fwds: Vec<Forward> = (0..n)
        .into_par_iter()
        .map(|k| forward(ctx, &states[k], &frames[k], frozen.map(|r| &r[k]), textured))
        .collect::<Result<_>>()?;

    let scale = 1.0 / n as f64;
    let per: Vec<(TermValues, Acc)> = (0..n)
        .into_par_iter()
        .map(|k| frame_terms(ctx, &states[k], &frames[k], &fwds[k], scale))
        .collect::<Result<_>>()?;
    let mut terms = TermValues::default();
    let mut accs = Vec::with_capacity(n);
    for (t, a) in per {
        terms.add(&t);
        accs.push(a);
    }
    for v in [
        &mut terms.silhouette,
        &mut terms.texture,
        &mut terms.laplacian,
        &mut terms.arap,
        &mut terms.keypoint,
        &mut terms.part,
    ] {
        *v *= scale;
    }

    if !pairs.is_empty() && (w.texture_swap != 0.0 || w.base_swap != 0.0) {
        let ps = 1.0 / pairs.len() as f64;
        let outs: Vec<PairOut> = pairs
            .par_iter()
            .map(|&(i, j)| pair_terms(ctx, states, frames, &fwds, i, j))
            .collect::<Result<_>>()?;
        for (&(i, j), o) in pairs.iter().zip(outs) {
            terms.texture_swap += o.texture_swap;
            terms.base_swap += o.base_swap;
            if !want_grad {
                continue;
            }
            if let (Some(gi), Some(gj)) = (o.tex_i, o.tex_j) {
                accs[i].add_texture(&gi, w.texture_swap * ps);
                accs[j].add_texture(&gj, w.texture_swap * ps);
            }
            if let Some(g) = o.base {
                let s = w.base_swap * ps;
                axpy(&mut accs[i].base, &g.base_i, s);
                axpy(&mut accs[i].offsets, &g.offsets_i, s);
                axpy_cam(&mut accs[i].camera, &g.camera_i, s);
                axpy(&mut accs[j].base, &g.base_j, s);
                axpy(&mut accs[j].offsets, &g.offsets_j, s);
                axpy_cam(&mut accs[j].camera, &g.camera_j, s);
            }
        }
        terms.texture_swap *= ps;
        terms.base_swap *= ps;
    }

    let total = check("total", terms.weighted_sum(&w))?;
    let grads = if want_grad {
        let grads: Vec<FrameGrad> = accs
            .into_par_iter()
            .enumerate()
            .map(|(k, acc)| finish(ctx, &states[k], &frames[k], &fwds[k], acc))
            .collect::<Result<_>>()?;
        Some(grads)
    } else {
        None
    };
    Ok(Evaluation { total, terms, grads })
}

/// Window objective: weighted per-frame terms averaged over the frames plus
/// the swap terms averaged over `pairs` (indices into `frames`).
pub fn window_objective(
    ctx: &ObjectiveContext,
    frames: &[FrameData],
    states: &[FrameState],
    pairs: &[(usize, usize)],
    want_grad: bool,
) -> Result<Evaluation> {
    evaluate(ctx, frames, states, pairs, want_grad, None)
}

/// [`window_objective`] with the per-frame visibility rasters held fixed.
/// The optimiser treats rasterisation as a stop-gradient, so this is the
/// function its gradients actually differentiate.
pub fn window_objective_frozen(
    ctx: &ObjectiveContext,
    frames: &[FrameData],
    states: &[FrameState],
    pairs: &[(usize, usize)],
    rasters: &[Raster],
    want_grad: bool,
) -> Result<Evaluation> {
    evaluate(ctx, frames, states, pairs, want_grad, Some(rasters))
}

/// Hard rasters of every frame at the given states.
pub fn window_rasters(ctx: &ObjectiveContext, states: &[FrameState]) -> Result<Vec<Raster>> {
    states
        .par_iter()
        .map(|s| {
            let c = compose_shape(
                ctx.bases,
                &ShapeParams {
                    logits: s.shape.logits.clone(),
                    offsets: match ctx.mirror {
                        Some(m) => mirror_symmetrize(&s.shape.offsets, Some(m))?,
                        None => s.shape.offsets.clone(),
                    },
                },
            )?;
            Ok(rasterize_mesh(
                &c.full,
                ctx.topology.faces(),
                &Projector::new(&s.camera),
                ctx.raster.height,
                ctx.raster.width,
            ))
        })
        .collect()
}
