//! Weak-perspective camera: rotate by a quaternion, drop depth, scale and
//! translate. Image coordinates are normalised device coordinates in
//! `[-1, 1]^2` with `y` up; larger rotated `z` is nearer to the viewer.

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::{Vec2, Vec3};

/// Number of scalar camera parameters: `s, tx, ty, qw, qx, qy, qz`.
pub const CAMERA_PARAMS: usize = 7;

/// Scale, 2D translation and a (possibly unnormalised) rotation quaternion.
///
/// The quaternion is stored raw so gradient steps can move it freely; every
/// projection normalises it first, and gradients flow through that
/// normalisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakPerspectiveCamera {
    pub scale: f64,
    pub translation: Vec2,
    /// `(w, x, y, z)`
    pub rotation: [f64; 4],
}

impl Default for WeakPerspectiveCamera {
    fn default() -> Self {
        Self::identity()
    }
}

impl WeakPerspectiveCamera {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            translation: Vec2::zeros(),
            rotation: [1.0, 0.0, 0.0, 0.0],
        }
    }

    pub fn new(scale: f64, translation: Vec2, rotation: [f64; 4]) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidArgument(format!("camera scale {scale} must be positive")));
        }
        normalize_quaternion(rotation)?;
        Ok(Self {
            scale,
            translation,
            rotation,
        })
    }

    /// `(s, tx, ty, qw, qx, qy, qz)`
    pub fn params(&self) -> [f64; CAMERA_PARAMS] {
        let [w, x, y, z] = self.rotation;
        [self.scale, self.translation.x, self.translation.y, w, x, y, z]
    }

    pub fn from_params(p: &[f64]) -> Result<Self> {
        if p.len() != CAMERA_PARAMS {
            return Err(Error::Dimension(format!("{} camera parameters, expected 7", p.len())));
        }
        Self::new(p[0], Vec2::new(p[1], p[2]), [p[3], p[4], p[5], p[6]])
    }

    /// Camera with a unit quaternion in the `w >= 0` hemisphere, for output.
    pub fn canonical(&self) -> Self {
        let mut q = normalize_quaternion(self.rotation).unwrap_or([1.0, 0.0, 0.0, 0.0]);
        if q[0] < 0.0 {
            q = q.map(|c| -c);
        }
        Self {
            rotation: q,
            ..*self
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let q = normalize_quaternion(self.rotation).unwrap_or([1.0, 0.0, 0.0, 0.0]);
        quaternion_matrix(q)
    }

    pub fn project_point(&self, v: &Vec3) -> Vec2 {
        Projector::new(self).project(v)
    }

    pub fn project_vertices(&self, vertices: &[Vec3]) -> Vec<Vec2> {
        let p = Projector::new(self);
        vertices.iter().map(|v| p.project(v)).collect()
    }
}

pub fn normalize_quaternion(q: [f64; 4]) -> Result<[f64; 4]> {
    let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    if !(n > 1e-12) {
        return Err(Error::DegenerateQuaternion(n));
    }
    Ok(q.map(|c| c / n))
}

pub fn project_point(cam: &WeakPerspectiveCamera, v: &Vec3) -> Vec2 {
    cam.project_point(v)
}

pub fn project_vertices(cam: &WeakPerspectiveCamera, vertices: &[Vec3]) -> Vec<Vec2> {
    cam.project_vertices(vertices)
}

fn quaternion_matrix([w, x, y, z]: [f64; 4]) -> Matrix3<f64> {
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Partial derivatives of [`quaternion_matrix`] w.r.t. `(w, x, y, z)`.
fn quaternion_matrix_partials([w, x, y, z]: [f64; 4]) -> [Matrix3<f64>; 4] {
    let t = 2.0;
    [
        Matrix3::new(0.0, -t * z, t * y, t * z, 0.0, -t * x, -t * y, t * x, 0.0),
        Matrix3::new(
            0.0,
            t * y,
            t * z,
            t * y,
            -2.0 * t * x,
            -t * w,
            t * z,
            t * w,
            -2.0 * t * x,
        ),
        Matrix3::new(
            -2.0 * t * y,
            t * x,
            t * w,
            t * x,
            0.0,
            t * z,
            -t * w,
            t * z,
            -2.0 * t * y,
        ),
        Matrix3::new(
            -2.0 * t * z,
            -t * w,
            t * x,
            t * w,
            -2.0 * t * z,
            t * y,
            t * x,
            t * y,
            0.0,
        ),
    ]
}

/// A camera with its rotation and rotation derivatives precomputed, for
/// projecting many points and back-propagating through the projection.
#[derive(Debug, Clone)]
pub struct Projector {
    scale: f64,
    translation: Vec2,
    rot: Matrix3<f64>,
    /// `dR / dq_raw[m]`, including the normalisation Jacobian.
    drot: [Matrix3<f64>; 4],
}

impl Projector {
    pub fn new(cam: &WeakPerspectiveCamera) -> Self {
        let norm = cam.rotation.iter().map(|c| c * c).sum::<f64>().sqrt().max(1e-300);
        let q = cam.rotation.map(|c| c / norm);
        let partials = quaternion_matrix_partials(q);
        let mut drot = [Matrix3::zeros(); 4];
        for (m, d) in drot.iter_mut().enumerate() {
            for (k, part) in partials.iter().enumerate() {
                let delta = if k == m { 1.0 } else { 0.0 };
                let n_km = (delta - q[k] * q[m]) / norm;
                *d += part * n_km;
            }
        }
        Self {
            scale: cam.scale,
            translation: cam.translation,
            rot: quaternion_matrix(q),
            drot,
        }
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.rot * v
    }

    pub fn project(&self, v: &Vec3) -> Vec2 {
        let r = self.rot * v;
        Vec2::new(self.scale * r.x + self.translation.x, self.scale * r.y + self.translation.y)
    }

    /// Post-rotation depth; larger is nearer.
    pub fn depth(&self, v: &Vec3) -> f64 {
        (self.rot * v).z
    }

    /// Accumulates `dL/dcam` into `grad_cam` for one projected point with
    /// upstream gradient `grad_p` and returns `dL/dv`.
    pub fn backward(&self, v: &Vec3, grad_p: Vec2, grad_cam: &mut [f64; CAMERA_PARAMS]) -> Vec3 {
        let r = self.rot * v;
        grad_cam[0] += grad_p.x * r.x + grad_p.y * r.y;
        grad_cam[1] += grad_p.x;
        grad_cam[2] += grad_p.y;
        for m in 0..4 {
            let dr = self.drot[m] * v;
            grad_cam[3 + m] += self.scale * (grad_p.x * dr.x + grad_p.y * dr.y);
        }
        let g3 = Vec3::new(grad_p.x, grad_p.y, 0.0);
        self.rot.transpose() * g3 * self.scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cam(s: f64, t: (f64, f64), q: [f64; 4]) -> WeakPerspectiveCamera {
        WeakPerspectiveCamera::new(s, Vec2::new(t.0, t.1), q).unwrap()
    }

    #[test]
    fn orthographic_drop() {
        let c = WeakPerspectiveCamera::identity();
        assert_eq!(c.project_point(&Vec3::new(0.3, -0.7, 5.0)), Vec2::new(0.3, -0.7));
    }

    #[test]
    fn scale_and_translate() {
        let c = cam(2.0, (0.1, 0.2), [1.0, 0.0, 0.0, 0.0]);
        let p = c.project_point(&Vec3::new(1.0, 1.0, 1.0));
        assert!((p - Vec2::new(2.1, 2.2)).norm() < 1e-15);
    }

    #[test]
    fn quarter_turn_about_z() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let c = cam(1.0, (0.0, 0.0), [h, 0.0, 0.0, h]);
        let p = c.project_point(&Vec3::x());
        assert!((p - Vec2::new(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn vectorised_projection_matches_points() {
        let c = cam(0.7, (0.1, -0.3), [0.9, 0.2, -0.3, 0.1]);
        let pts: Vec<Vec3> = (0..100)
            .map(|k| {
                let k = k as f64;
                Vec3::new((k * 0.37).sin(), (k * 1.1).cos(), (k * 0.05).sin() * 2.0)
            })
            .collect();
        let all = c.project_vertices(&pts);
        for (v, p) in pts.iter().zip(&all) {
            assert_eq!(c.project_point(v), *p);
        }
        assert!(c.project_vertices(&[]).is_empty());
    }

    #[test]
    fn quaternion_normalisation() {
        assert_eq!(normalize_quaternion([2.0, 0.0, 0.0, 0.0]).unwrap(), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(normalize_quaternion([1.0, 1.0, 1.0, 1.0]).unwrap(), [0.5; 4]);
        let q = [0.5, 0.5, 0.5, 0.5];
        assert_eq!(normalize_quaternion(q).unwrap(), q);
        assert!(matches!(
            normalize_quaternion([1e-14, 0.0, 0.0, 0.0]),
            Err(Error::DegenerateQuaternion(_))
        ));
    }

    #[test]
    fn canonical_readout_flips_hemisphere() {
        let c = cam(1.0, (0.0, 0.0), [-2.0, 0.0, 0.0, 0.0]).canonical();
        assert_eq!(c.rotation, [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_non_positive_scale() {
        assert!(WeakPerspectiveCamera::new(0.0, Vec2::zeros(), [1.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let c = cam(0.8, (0.1, -0.2), [0.8, 0.3, -0.4, 0.2]);
        let v = Vec3::new(0.4, -0.6, 0.9);
        let g = Vec2::new(0.7, -1.3);
        let loss = |c: &WeakPerspectiveCamera, v: &Vec3| g.dot(&c.project_point(v));
        let mut grad_cam = [0.0; 7];
        let grad_v = Projector::new(&c).backward(&v, g, &mut grad_cam);
        let h = 1e-6;
        let params = c.params();
        for k in 0..7 {
            let mut pp = params;
            pp[k] += h;
            let mut pm = params;
            pm[k] -= h;
            let fd = (loss(&WeakPerspectiveCamera::from_params(&pp).unwrap(), &v)
                - loss(&WeakPerspectiveCamera::from_params(&pm).unwrap(), &v))
                / (2.0 * h);
            let rel = (fd - grad_cam[k]).abs() / fd.abs().max(grad_cam[k].abs()).max(1e-8);
            assert!(rel < 1e-5, "param {k}: fd {fd} analytic {}", grad_cam[k]);
        }
        for d in 0..3 {
            let mut vp = v;
            vp[d] += h;
            let mut vm = v;
            vm[d] -= h;
            let fd = (loss(&c, &vp) - loss(&c, &vm)) / (2.0 * h);
            let rel = (fd - grad_v[d]).abs() / fd.abs().max(grad_v[d].abs()).max(1e-8);
            assert!(rel < 1e-5);
        }
    }

    proptest! {
        #[test]
        fn rotation_preserves_norm(w in -1.0..1.0f64, x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64,
                                   vx in -3.0..3.0f64, vy in -3.0..3.0f64, vz in -3.0..3.0f64) {
            prop_assume!(w * w + x * x + y * y + z * z > 1e-3);
            let c = cam(1.0, (0.0, 0.0), [w, x, y, z]);
            let v = Vec3::new(vx, vy, vz);
            prop_assert!(((c.rotation_matrix() * v).norm() - v.norm()).abs() < 1e-12);
        }

        #[test]
        fn projection_is_affine(s in 0.1..3.0f64, tx in -1.0..1.0f64, ty in -1.0..1.0f64,
                                a in -2.0..2.0f64, b in -2.0..2.0f64, c in -2.0..2.0f64) {
            let k = cam(s, (tx, ty), [0.9, -0.2, 0.3, 0.1]);
            let v1 = Vec3::new(a, b, c);
            let v2 = Vec3::new(c, -a, 0.5 * b);
            let lhs = k.project_point(&(v1 + v2)) + k.project_point(&Vec3::zeros());
            let rhs = k.project_point(&v1) + k.project_point(&v2);
            prop_assert!((lhs - rhs).norm() < 1e-12);

            let unit = cam(1.0, (0.0, 0.0), k.rotation);
            let scaled = k.project_point(&v1);
            let expect = unit.project_point(&v1) * s + k.translation;
            prop_assert!((scaled - expect).norm() < 1e-12);
        }
    }
}
