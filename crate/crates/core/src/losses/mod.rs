//! Loss terms of the reconstruction objective and the window objective that
//! combines them with analytic gradients.

mod chamfer;
mod image_terms;
mod keypoint;
mod objective;
mod parts;
mod swap;
mod weights;

pub use chamfer::{chamfer_2d, chamfer_2d_with_grad};
pub use image_terms::{niou, niou_with_grad, ImageDistance};
pub use keypoint::{
    aggregate_canonical_keypoints, heatmap_to_uv, keypoint_heatmaps, loss_keypoint, loss_keypoint_with_grad,
    CanonicalKeypointMap, KeypointSet,
};
pub use objective::{
    window_objective, window_objective_frozen, window_rasters, Evaluation, FrameData, FrameGrad, ObjectiveContext,
    TermValues,
};
pub use parts::{
    build_part_uv, loss_part_correspondence, part_indicators, part_term, sample_part_pixels, PartFrame, PartUv,
};
pub use swap::{
    loss_base_swap, loss_base_swap_with_grad, loss_texture_swap, loss_texture_swap_with_grad, silhouette_term,
    texture_term, BaseSwapFrame, BaseSwapGrad, SilhouetteGrad, TexturedFrame,
};
pub use weights::{LossWeights, WEIGHT_KEYS};
