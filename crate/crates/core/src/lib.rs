//! Temporally consistent reconstruction of deforming triangle meshes from a
//! monocular frame sequence by analysis-by-synthesis.
//!
//! Every frame owns a weak-perspective camera, shape-basis logits, a
//! per-vertex motion offset and a texture flow. These parameters are fitted
//! directly by gradient descent over sliding windows of frames, under
//! silhouette, texture, smoothness and as-rigid-as-possible terms plus three
//! cross-frame consistency terms expressed in the mesh's fixed UV space.

pub mod adaptation;
pub mod arap;
pub mod camera;
pub mod error;
pub mod evalbench;
pub mod geometry;
pub mod image;
pub mod io;
pub mod losses;
pub mod render;
pub mod shape;

pub use error::{Error, Result};

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;
