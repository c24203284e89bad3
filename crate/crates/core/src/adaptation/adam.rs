use crate::camera::CAMERA_PARAMS;
use crate::losses::FrameGrad;
use crate::shape::FrameState;

/// Parameter blocks of a [`FrameState`], in flattening order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    Camera,
    Logits,
    Offsets,
    FlowOffset,
}

pub const BLOCKS: [Block; 4] = [Block::Camera, Block::Logits, Block::Offsets, Block::FlowOffset];

impl Block {
    pub fn name(self) -> &'static str {
        match self {
            Block::Camera => "camera",
            Block::Logits => "logits",
            Block::Offsets => "offsets",
            Block::FlowOffset => "flow_offset",
        }
    }
}

/// Flat layout `[camera | logits | offsets xyz | flow_offset xy]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub num_bases: usize,
    pub num_vertices: usize,
    pub num_texels: usize,
}

impl Layout {
    pub fn of(state: &FrameState) -> Self {
        Self {
            num_bases: state.shape.logits.len(),
            num_vertices: state.shape.offsets.len(),
            num_texels: state.flow_offset.len(),
        }
    }

    pub fn len(&self) -> usize {
        CAMERA_PARAMS + self.num_bases + 3 * self.num_vertices + 2 * self.num_texels
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn range(&self, block: Block) -> std::ops::Range<usize> {
        let a = CAMERA_PARAMS;
        let b = a + self.num_bases;
        let c = b + 3 * self.num_vertices;
        match block {
            Block::Camera => 0..a,
            Block::Logits => a..b,
            Block::Offsets => b..c,
            Block::FlowOffset => c..self.len(),
        }
    }
}

pub fn flatten_state(s: &FrameState) -> Vec<f64> {
    let mut out = Vec::with_capacity(Layout::of(s).len());
    out.extend(s.camera.params());
    out.extend(&s.shape.logits);
    out.extend(s.shape.offsets.iter().flat_map(|v| [v.x, v.y, v.z]));
    out.extend(s.flow_offset.iter().flat_map(|v| [v.x, v.y]));
    out
}

pub fn flatten_grad(g: &FrameGrad) -> Vec<f64> {
    let mut out = Vec::new();
    out.extend(g.camera);
    out.extend(&g.logits);
    out.extend(g.offsets.iter().flat_map(|v| [v.x, v.y, v.z]));
    out.extend(g.flow_offset.iter().flat_map(|v| [v.x, v.y]));
    out
}

/// Writes a flat vector back into `s` (whose layout it must match).
pub fn unflatten_into(s: &mut FrameState, flat: &[f64]) {
    let layout = Layout::of(s);
    assert_eq!(flat.len(), layout.len(), "flat parameter vector length");
    let cam = &flat[layout.range(Block::Camera)];
    s.camera.scale = cam[0];
    s.camera.translation = crate::Vec2::new(cam[1], cam[2]);
    s.camera.rotation = [cam[3], cam[4], cam[5], cam[6]];
    s.shape.logits.copy_from_slice(&flat[layout.range(Block::Logits)]);
    for (v, c) in s.shape.offsets.iter_mut().zip(flat[layout.range(Block::Offsets)].chunks_exact(3)) {
        *v = crate::Vec3::new(c[0], c[1], c[2]);
    }
    for (v, c) in s.flow_offset.iter_mut().zip(flat[layout.range(Block::FlowOffset)].chunks_exact(2)) {
        *v = crate::Vec2::new(c[0], c[1]);
    }
}

/// Adaptive-moment optimiser settings with one step size per block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr_camera: f64,
    pub lr_logits: f64,
    pub lr_offsets: f64,
    pub lr_flow: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    /// Step sizes that let 40 iterations per window move a camera from the
    /// identity to a typical fit.
    fn default() -> Self {
        Self {
            lr_camera: 0.02,
            lr_logits: 0.05,
            lr_offsets: 0.002,
            lr_flow: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    /// A single step size for every block.
    pub fn uniform(lr: f64) -> Self {
        Self {
            lr_camera: lr,
            lr_logits: lr,
            lr_offsets: lr,
            lr_flow: lr,
            ..Self::default()
        }
    }

    pub fn lr(&self, block: Block) -> f64 {
        match block {
            Block::Camera => self.lr_camera,
            Block::Logits => self.lr_logits,
            Block::Offsets => self.lr_offsets,
            Block::FlowOffset => self.lr_flow,
        }
    }
}

/// Moment estimates of one frame. Each block keeps its own step count so a
/// block that starts moving late (the motion offsets after warm-up) gets
/// the usual bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    steps: [i32; 4],
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            steps: [0; 4],
        }
    }

    /// One update of `params` along `-grad` for the blocks in `active`.
    pub fn step(&mut self, cfg: &AdamConfig, layout: &Layout, params: &mut [f64], grad: &[f64], active: &[Block]) {
        for (bi, block) in BLOCKS.iter().enumerate() {
            if !active.contains(block) {
                continue;
            }
            self.steps[bi] += 1;
            let t = self.steps[bi];
            let c1 = 1.0 - cfg.beta1.powi(t);
            let c2 = 1.0 - cfg.beta2.powi(t);
            let lr = cfg.lr(*block);
            for k in layout.range(*block) {
                let g = grad[k];
                self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * g;
                self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * g * g;
                let mh = self.m[k] / c1;
                let vh = self.v[k] / c2;
                params[k] -= lr * mh / (vh.sqrt() + cfg.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Vec2, Vec3};

    #[test]
    fn flatten_round_trip() {
        let mut s = FrameState::identity(2, 3, 4);
        s.shape.offsets[1] = Vec3::new(1.0, 2.0, 3.0);
        s.flow_offset[3] = Vec2::new(-1.0, 0.5);
        s.shape.logits[1] = 0.25;
        let flat = flatten_state(&s);
        assert_eq!(flat.len(), Layout::of(&s).len());
        let mut back = FrameState::identity(2, 3, 4);
        unflatten_into(&mut back, &flat);
        assert_eq!(back, s);
        assert_eq!(&flat[Layout::of(&s).range(Block::Offsets)][3..6], &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient() {
        let layout = Layout { num_bases: 1, num_vertices: 1, num_texels: 1 };
        let mut p = vec![0.0; layout.len()];
        let g: Vec<f64> = (0..layout.len()).map(|k| if k % 2 == 0 { 2.0 } else { -0.5 }).collect();
        let cfg = AdamConfig::uniform(0.1);
        let mut st = AdamState::new(layout.len());
        st.step(&cfg, &layout, &mut p, &g, &[Block::Camera, Block::Logits]);
        for k in 0..layout.len() {
            if k < layout.range(Block::Offsets).start {
                assert!((p[k] + 0.1 * g[k].signum()).abs() < 1e-7);
            } else {
                assert_eq!(p[k], 0.0);
            }
        }
    }

    #[test]
    fn minimises_a_quadratic() {
        let layout = Layout { num_bases: 0, num_vertices: 0, num_texels: 0 };
        let target = [0.5, -0.3, 0.2, 0.9, 0.1, -0.4, 0.0];
        let mut p = vec![0.0; 7];
        let mut st = AdamState::new(7);
        let cfg = AdamConfig::uniform(0.05);
        for _ in 0..500 {
            let g: Vec<f64> = p.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            st.step(&cfg, &layout, &mut p, &g, &BLOCKS);
        }
        for (a, b) in p.iter().zip(&target) {
            assert!((a - b).abs() < 1e-2);
        }
    }
}
