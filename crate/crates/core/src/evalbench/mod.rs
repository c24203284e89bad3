//! Evaluation metrics, metric reports, and the synthetic sequence that
//! supplies ground truth.

mod metrics;
mod report;
mod synth;

pub use metrics::{chamfer_3d, contour_f, default_contour_tolerance, mask_iou, pck, Mask};
pub use report::{FrameMetrics, MeanMetrics, MetricReport};
pub use synth::{
    make_synthetic_video, synthetic_bases, synthetic_template, GroundTruth, SyntheticConfig, SyntheticVideo,
    SYNTH_KEYPOINTS, SYNTH_PARTS,
};

use rayon::prelude::*;

use crate::camera::WeakPerspectiveCamera;
use crate::error::{Error, Result};
use crate::geometry::{surface_position, SurfacePoint};
use crate::losses::KeypointSet;
use crate::Vec3;

/// Keypoint threshold as a fraction of the ground-truth box diagonal.
pub const PCK_ALPHA: f64 = 0.1;

/// Prediction and ground truth of one frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameEval<'a> {
    pub pred_mask: &'a Mask,
    pub gt_mask: &'a Mask,
    pub pred_keypoints: Option<&'a [crate::Vec2]>,
    pub gt_keypoints: Option<&'a KeypointSet>,
    pub pred_vertices: Option<&'a [Vec3]>,
    pub gt_vertices: Option<&'a [Vec3]>,
}

/// Metrics of every frame. PCK is reported only for frames with visible
/// keypoints, Chamfer only when both meshes are present.
pub fn evaluate_frames(frames: &[FrameEval]) -> Result<MetricReport> {
    let frames = frames
        .par_iter()
        .enumerate()
        .map(|(k, f)| {
            let tol = default_contour_tolerance(f.gt_mask.height, f.gt_mask.width);
            let pck = match (f.pred_keypoints, f.gt_keypoints) {
                (Some(p), Some(g)) if g.num_visible() > 0 => Some(pck(p, g, PCK_ALPHA, f.gt_mask.bbox_diagonal())?),
                _ => None,
            };
            let chamfer = match (f.pred_vertices, f.gt_vertices) {
                (Some(p), Some(g)) => Some(chamfer_3d(p, g)?),
                _ => None,
            };
            Ok(FrameMetrics {
                frame: k,
                iou: mask_iou(f.pred_mask, f.gt_mask)?,
                contour: contour_f(f.pred_mask, f.gt_mask, tol)?,
                pck,
                chamfer,
            })
        })
        .collect::<Result<_>>()?;
    Ok(MetricReport { frames })
}

/// Image positions of surface keypoints on a posed mesh.
pub fn project_keypoints(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    keypoints: &[SurfacePoint],
    camera: &WeakPerspectiveCamera,
) -> Vec<crate::Vec2> {
    keypoints
        .iter()
        .map(|sp| camera.project_point(&surface_position(vertices, faces, sp)))
        .collect()
}

/// Scores predicted meshes, cameras and masks against the synthetic ground
/// truth (clean masks, true keypoints, true meshes).
pub fn evaluate_against_truth(
    truth: &GroundTruth,
    faces: &[[usize; 3]],
    pred_vertices: &[Vec<Vec3>],
    pred_cameras: &[WeakPerspectiveCamera],
    pred_masks: &[Mask],
) -> Result<MetricReport> {
    let n = truth.masks.len();
    if pred_vertices.len() != n || pred_cameras.len() != n || pred_masks.len() != n {
        return Err(Error::Dimension(format!(
            "{} meshes, {} cameras, {} masks for {n} frames",
            pred_vertices.len(),
            pred_cameras.len(),
            pred_masks.len()
        )));
    }
    let gt_masks: Vec<Mask> = truth.masks.iter().map(|m| Mask::from_image(m, 0.5)).collect();
    let pred_kp: Vec<Vec<crate::Vec2>> = (0..n)
        .map(|k| project_keypoints(&pred_vertices[k], faces, &truth.keypoints3d, &pred_cameras[k]))
        .collect();
    let evals: Vec<FrameEval> = (0..n)
        .map(|k| FrameEval {
            pred_mask: &pred_masks[k],
            gt_mask: &gt_masks[k],
            pred_keypoints: Some(&pred_kp[k]),
            gt_keypoints: Some(&truth.keypoints2d[k]),
            pred_vertices: Some(&pred_vertices[k]),
            gt_vertices: Some(&truth.vertices[k]),
        })
        .collect();
    evaluate_frames(&evals)
}
