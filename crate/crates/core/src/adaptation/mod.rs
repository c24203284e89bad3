//! Online adaptation: per-frame parameters fitted by gradient descent over
//! sliding windows of frames, with the cross-frame consistency terms
//! coupling the frames of a window.
//!
//! There is no predictor network. Each frame's [`FrameState`] is optimised
//! directly, and frames shared by consecutive windows carry their state
//! forward, which plays the role that shared network weights would
//! otherwise play.

mod adam;
pub mod gradcheck;

use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use adam::{flatten_grad, flatten_state, unflatten_into, AdamConfig, AdamState, Block, Layout, BLOCKS};

use crate::camera::{Projector, WeakPerspectiveCamera};
use crate::error::{Error, Result};
use crate::geometry::{cotangent_weights, CotanWeights, SurfacePoint, TexelTable, Topology, TriMesh, UvChart};
use crate::image::{Image, LabelMap};
use crate::losses::{
    build_part_uv, sample_part_pixels, window_objective, FrameData, ImageDistance, KeypointSet, LossWeights,
    ObjectiveContext,
};
use crate::render::{render_silhouette, sample_texture_flow, texture_flow, SoftRasterConfig, TextureFlow};
use crate::shape::{compose_shape, mirror_symmetrize, FrameState, MirrorPairing, ShapeBasisSet, ShapeParams};
use crate::{Vec2, Vec3};

/// Supervision regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Basis set as given, keypoints and base swapping available.
    #[default]
    Weak,
    /// A single mean basis, mirror-symmetric offsets, and neither the
    /// keypoint nor the base-swap term.
    SelfSupervised,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weak" => Ok(Mode::Weak),
            "selfsup" => Ok(Mode::SelfSupervised),
            other => Err(Error::InvalidArgument(format!("unknown mode `{other}` (expected weak or selfsup)"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Weak => "weak",
            Mode::SelfSupervised => "selfsup",
        })
    }
}

/// Sliding-window schedule: window length, stride and iterations per
/// window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSchedule {
    pub window: usize,
    pub stride: usize,
    pub iterations: usize,
}

impl Default for WindowSchedule {
    fn default() -> Self {
        Self {
            window: 50,
            stride: 10,
            iterations: 40,
        }
    }
}

impl WindowSchedule {
    pub fn new(window: usize, stride: usize, iterations: usize) -> Result<Self> {
        if stride == 0 || stride > window {
            return Err(Error::InvalidArgument(format!(
                "stride must satisfy 1 <= stride <= window, got stride {stride}, window {window}"
            )));
        }
        Ok(Self {
            window,
            stride,
            iterations,
        })
    }

    /// Iterations during which the motion offsets stay frozen.
    pub fn warmup(&self) -> usize {
        self.iterations.div_ceil(2)
    }
}

/// Half-open frame range `[start, end)` with the frame used as the
/// part-painting anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    pub end: usize,
    pub anchor: usize,
}

impl Window {
    /// `[start, end)` anchored at its middle frame.
    pub fn new(start: usize, end: usize) -> Self {
        Self {
            start,
            end,
            anchor: start + (end - start) / 2,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Windows starting at `0, N_s, 2 N_s, ...`; the last one ends at `N_f`.
pub fn make_windows(num_frames: usize, schedule: &WindowSchedule) -> Result<Vec<Window>> {
    if num_frames == 0 {
        return Err(Error::InvalidArgument("a video needs at least one frame".into()));
    }
    if schedule.stride == 0 || schedule.stride > schedule.window {
        return Err(Error::InvalidArgument(format!(
            "invalid schedule: window {}, stride {}",
            schedule.window, schedule.stride
        )));
    }
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + schedule.window).min(num_frames);
        out.push(Window::new(start, end));
        if start + schedule.window >= num_frames {
            break;
        }
        start += schedule.stride;
    }
    Ok(out)
}

/// Everything a video reconstruction needs.
#[derive(Debug, Clone)]
pub struct VideoProblem {
    pub frames: Vec<Image>,
    pub masks: Vec<Image>,
    /// Per-frame part label maps (0 = background, `k` = part `k - 1`).
    pub parts: Vec<LabelMap>,
    pub num_parts: usize,
    pub keypoints: Option<Vec<KeypointSet>>,
    /// Keypoints on the template surface.
    pub keypoints3d: Option<Vec<SurfacePoint>>,
    pub topology: Arc<Topology>,
    pub chart: UvChart,
    pub bases: ShapeBasisSet,
    pub mirror: Option<MirrorPairing>,
    pub weights: LossWeights,
    pub mode: Mode,
}

impl VideoProblem {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.frames.len();
        if n == 0 {
            return Err(Error::InvalidArgument("a video needs at least one frame".into()));
        }
        if self.masks.len() != n || self.parts.len() != n {
            return Err(Error::Dimension(format!(
                "{n} frames, {} masks, {} part maps",
                self.masks.len(),
                self.parts.len()
            )));
        }
        let (h, w) = (self.frames[0].height(), self.frames[0].width());
        for (k, f) in self.frames.iter().enumerate() {
            if f.height() != h || f.width() != w {
                return Err(Error::Dimension(format!("frame {k} is {}x{}, frame 0 is {h}x{w}", f.height(), f.width())));
            }
            f.check_shape(&self.frames[0])?;
            let m = &self.masks[k];
            if m.height() != h || m.width() != w || m.channels() != 1 {
                return Err(Error::Dimension(format!("mask {k} does not match the {h}x{w} frames")));
            }
            if self.parts[k].height != h || self.parts[k].width != w {
                return Err(Error::Dimension(format!("part map {k} does not match the {h}x{w} frames")));
            }
        }
        if let Some(k) = &self.keypoints {
            if k.len() != n {
                return Err(Error::Dimension(format!("{} keypoint sets for {n} frames", k.len())));
            }
        }
        if self.bases.num_vertices() != self.topology.num_vertices() {
            return Err(Error::Dimension(format!(
                "bases have {} vertices, topology has {}",
                self.bases.num_vertices(),
                self.topology.num_vertices()
            )));
        }
        if self.chart.num_faces() != self.topology.num_faces() {
            return Err(Error::Dimension(format!(
                "chart covers {} faces, topology has {}",
                self.chart.num_faces(),
                self.topology.num_faces()
            )));
        }
        if self.mode == Mode::SelfSupervised && self.mirror.is_none() {
            return Err(Error::MissingPairing);
        }
        Ok(())
    }
}

/// Optimisation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptConfig {
    pub schedule: WindowSchedule,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Soft-rasteriser sharpness; the image size comes from the frames.
    pub sigma: f64,
    pub gamma: f64,
    pub distance: ImageDistance,
    /// Foreground pixels sampled per part and frame for the part term.
    pub part_samples: usize,
    /// Ties the basis logits of all frames together.
    pub shared_beta: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            schedule: WindowSchedule::default(),
            adam: AdamConfig::default(),
            seed: 0,
            sigma: 1e-4,
            gamma: 1e-4,
            distance: ImageDistance::default(),
            part_samples: 128,
            shared_beta: false,
        }
    }
}

/// Loss trace of one optimised window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowReport {
    pub window: Window,
    pub trace: Vec<f64>,
}

/// One frame's reconstruction.
#[derive(Debug, Clone)]
pub struct FrameReconstruction {
    pub vertices: Vec<Vec3>,
    pub camera: WeakPerspectiveCamera,
    pub texture: Image,
}

#[derive(Debug, Clone)]
pub struct VideoResult {
    pub states: Vec<FrameState>,
    pub windows: Vec<WindowReport>,
}

/// A problem prepared for optimisation: mode-adjusted bases and weights,
/// cotangent weights, the texel table and the per-frame part samples.
#[derive(Debug)]
pub struct Adapter<'a> {
    problem: &'a VideoProblem,
    cfg: AdaptConfig,
    bases: ShapeBasisSet,
    weights: LossWeights,
    mirror: Option<&'a MirrorPairing>,
    texels: TexelTable,
    cotan: CotanWeights,
    raster: SoftRasterConfig,
    samples: Vec<Vec<Vec<Vec2>>>,
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    seed ^ salt.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl<'a> Adapter<'a> {
    pub fn new(problem: &'a VideoProblem, cfg: AdaptConfig) -> Result<Self> {
        problem.validate()?;
        let mut weights = problem.weights;
        let (bases, mirror) = match problem.mode {
            Mode::Weak => (problem.bases.clone(), None),
            Mode::SelfSupervised => {
                weights.keypoint = 0.0;
                weights.base_swap = 0.0;
                (problem.bases.mean(), problem.mirror.as_ref())
            }
        };
        // rest pose for the ARAP weights: the mean of all bases
        let rest = TriMesh::from_topology(problem.topology.clone(), problem.bases.mean().bases()[0].clone())?;
        let cotan = cotangent_weights(&rest)?;
        let (h, w) = (problem.frames[0].height(), problem.frames[0].width());
        let raster = SoftRasterConfig::new(cfg.sigma, cfg.gamma, h, w)?;
        let samples = (0..problem.num_frames())
            .into_par_iter()
            .map(|k| sample_part_pixels(&problem.parts[k], problem.num_parts, cfg.part_samples, mix_seed(cfg.seed, k as u64)))
            .collect();
        Ok(Self {
            problem,
            cfg,
            bases,
            weights,
            mirror,
            texels: problem.chart.texel_table(),
            cotan,
            raster,
            samples,
        })
    }

    pub fn config(&self) -> &AdaptConfig {
        &self.cfg
    }

    /// Weights after the mode adjustments.
    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    /// Basis set in use (the mean basis in self-supervised mode).
    pub fn bases(&self) -> &ShapeBasisSet {
        &self.bases
    }

    pub fn raster_config(&self) -> &SoftRasterConfig {
        &self.raster
    }

    /// Identity camera, uniform basis mixture, no motion, no flow residual.
    pub fn initial_state(&self) -> FrameState {
        FrameState::identity(self.bases.len(), self.bases.num_vertices(), self.texels.len())
    }

    fn context<'s>(&'s self, part_members: Option<&'s [Vec<usize>]>) -> ObjectiveContext<'s> {
        ObjectiveContext {
            bases: &self.bases,
            topology: &self.problem.topology,
            chart: &self.problem.chart,
            texels: &self.texels,
            cotan: &self.cotan,
            raster: self.raster,
            distance: self.cfg.distance,
            weights: self.weights,
            keypoints3d: self.problem.keypoints3d.as_deref(),
            part_members,
            mirror: self.mirror,
        }
    }

    fn effective_offsets(&self, s: &FrameState) -> Result<Vec<Vec3>> {
        match self.mirror {
            Some(m) => mirror_symmetrize(&s.shape.offsets, Some(m)),
            None => Ok(s.shape.offsets.clone()),
        }
    }

    /// Full mesh `V_base + dV` of a frame state.
    pub fn vertices(&self, s: &FrameState) -> Result<Vec<Vec3>> {
        let c = compose_shape(
            &self.bases,
            &ShapeParams {
                logits: s.shape.logits.clone(),
                offsets: self.effective_offsets(s)?,
            },
        )?;
        Ok(c.full)
    }

    pub fn flow(&self, s: &FrameState) -> Result<TextureFlow> {
        let v = self.vertices(s)?;
        Ok(texture_flow(
            &v,
            self.problem.topology.faces(),
            &Projector::new(&s.camera),
            &self.texels,
            &s.flow_offset,
        ))
    }

    /// Vertex membership of every part, aggregated over the window's frames
    /// through their current texture flows. `None` when no vertex gets a
    /// part.
    fn part_members(&self, window: &Window, states: &[FrameState]) -> Result<Option<Vec<Vec<usize>>>> {
        if self.weights.part == 0.0 || self.problem.num_parts == 0 {
            return Ok(None);
        }
        let flows: Vec<TextureFlow> = states.par_iter().map(|s| self.flow(s)).collect::<Result<_>>()?;
        let uv = build_part_uv(
            &self.problem.parts[window.start..window.end],
            &flows,
            &self.texels,
            self.problem.topology.faces(),
            self.bases.num_vertices(),
            self.problem.num_parts,
        )?;
        let members = uv.members();
        if members.iter().all(Vec::is_empty) {
            log::warn!("window {}..{}: no vertex received a part label", window.start, window.end);
            return Ok(None);
        }
        Ok(Some(members))
    }

    /// Runs `N_t` optimiser iterations on the frames of `window`, whose
    /// states are `states` (in window order). Returns the objective before
    /// every iteration.
    pub fn optimize_window(&self, window: &Window, states: &mut [FrameState]) -> Result<Vec<f64>> {
        if states.len() != window.len() || window.end > self.problem.num_frames() {
            return Err(Error::Dimension(format!(
                "window {}..{} with {} states for a {}-frame video",
                window.start,
                window.end,
                states.len(),
                self.problem.num_frames()
            )));
        }
        let p = self.problem;
        let frames: Vec<FrameData> = (window.start..window.end)
            .map(|k| FrameData {
                image: &p.frames[k],
                mask: &p.masks[k],
                keypoints: p.keypoints.as_ref().map(|v| &v[k]),
                part_samples: &self.samples[k],
            })
            .collect();
        let schedule = self.cfg.schedule;
        let warmup = schedule.warmup();
        let layout = Layout::of(&states[0]);
        let mut moments: Vec<AdamState> = (0..states.len()).map(|_| AdamState::new(layout.len())).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.cfg.seed, 1 << 32 | window.start as u64));
        let mut members = self.part_members(window, states)?;
        let mut trace = Vec::with_capacity(schedule.iterations);
        for it in 0..schedule.iterations {
            if it == warmup && it > 0 {
                members = self.part_members(window, states)?;
            }
            let pairs = sample_pairs(&mut rng, states.len());
            let ctx = self.context(members.as_deref());
            let eval = window_objective(&ctx, &frames, states, &pairs, true).map_err(|e| match e {
                Error::NonFinite { term, .. } => Error::NonFinite { term, iteration: it },
                other => other,
            })?;
            trace.push(eval.total);
            let mut grads = eval.grads.expect("gradients requested");
            if self.cfg.shared_beta {
                let n = grads.len() as f64;
                let mean: Vec<f64> = (0..self.bases.len())
                    .map(|b| grads.iter().map(|g| g.logits[b]).sum::<f64>() / n)
                    .collect();
                for g in &mut grads {
                    g.logits.clone_from(&mean);
                }
            }
            let active: &[Block] = if it < warmup {
                &[Block::Camera, Block::Logits, Block::FlowOffset]
            } else {
                &BLOCKS
            };
            let adam = self.cfg.adam;
            states
                .par_iter_mut()
                .zip(moments.par_iter_mut())
                .zip(grads.par_iter())
                .for_each(|((s, m), g)| {
                    let mut flat = flatten_state(s);
                    m.step(&adam, &layout, &mut flat, &flatten_grad(g), active);
                    unflatten_into(s, &flat);
                    s.camera.scale = s.camera.scale.max(1e-3);
                });
        }
        Ok(trace)
    }

    /// Optimises every window in order. Frames enter with the identity
    /// state (or, with shared logits, the logits of the window's first
    /// frame) and keep their state across overlapping windows.
    pub fn run(&self) -> Result<VideoResult> {
        let n = self.problem.num_frames();
        let windows = make_windows(n, &self.cfg.schedule)?;
        let mut states = vec![self.initial_state(); n];
        let mut reports = Vec::with_capacity(windows.len());
        let mut visited = 0;
        for (wi, w) in windows.iter().enumerate() {
            if self.cfg.shared_beta && w.start < visited {
                let logits = states[w.start].shape.logits.clone();
                for s in &mut states[visited.max(w.start)..w.end] {
                    s.shape.logits.clone_from(&logits);
                }
            }
            visited = visited.max(w.end);
            let trace = self.optimize_window(w, &mut states[w.start..w.end])?;
            log::info!(
                "window {}/{} frames {}..{}: objective {:.5} -> {:.5}",
                wi + 1,
                windows.len(),
                w.start,
                w.end,
                trace.first().copied().unwrap_or(f64::NAN),
                trace.last().copied().unwrap_or(f64::NAN)
            );
            reports.push(WindowReport { window: *w, trace });
        }
        Ok(VideoResult { states, windows: reports })
    }

    /// Mesh, canonical camera and UV texture of every frame.
    pub fn reconstruct(&self, states: &[FrameState]) -> Result<Vec<FrameReconstruction>> {
        states
            .par_iter()
            .enumerate()
            .map(|(k, s)| {
                let flow = self.flow(s)?;
                Ok(FrameReconstruction {
                    vertices: self.vertices(s)?,
                    camera: s.camera.canonical(),
                    texture: sample_texture_flow(&self.problem.frames[k], &flow),
                })
            })
            .collect()
    }

    /// Predicted silhouettes (soft render thresholded at 0.5).
    pub fn predicted_masks(&self, states: &[FrameState]) -> Result<Vec<Vec<bool>>> {
        states
            .par_iter()
            .map(|s| {
                let v = self.vertices(s)?;
                Ok(render_silhouette(&v, self.problem.topology.faces(), &s.camera, &self.raster).threshold(0.5))
            })
            .collect()
    }
}

/// Runs the whole video with `cfg`.
pub fn run_video(problem: &VideoProblem, cfg: AdaptConfig) -> Result<VideoResult> {
    Adapter::new(problem, cfg)?.run()
}

/// Mean distance between the parameter vectors of consecutive canonical
/// cameras; 0 for fewer than two cameras.
pub fn camera_jitter(cameras: &[WeakPerspectiveCamera]) -> f64 {
    if cameras.len() < 2 {
        return 0.0;
    }
    let params: Vec<[f64; 7]> = cameras.iter().map(|c| c.canonical().params()).collect();
    params
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .sum::<f64>()
        / (cameras.len() - 1) as f64
}

/// Draws `ceil(len / 2)` pairs as a random matching of the window, so
/// every frame sits in exactly one pair (an odd leftover is matched
/// with a random partner).
fn sample_pairs(rng: &mut ChaCha8Rng, len: usize) -> Vec<(usize, usize)> {
    if len < 2 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    let mut pairs: Vec<(usize, usize)> = order.chunks_exact(2).map(|c| (c[0], c[1])).collect();
    if len % 2 == 1 {
        let i = order[len - 1];
        pairs.push((i, (i + rng.random_range(1..len)) % len));
    }
    pairs
}
