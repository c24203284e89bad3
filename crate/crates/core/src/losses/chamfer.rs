use crate::error::{Error, Result};
use crate::Vec2;

fn nearest(p: &Vec2, set: &[Vec2]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, q) in set.iter().enumerate() {
        let d = (p - q).norm_squared();
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Symmetric mean of squared nearest-neighbour distances.
pub fn chamfer_2d(a: &[Vec2], b: &[Vec2]) -> Result<f64> {
    chamfer_2d_with_grad(a, b).map(|(v, _)| v)
}

/// [`chamfer_2d`] and its gradient w.r.t. the points of `a`.
pub fn chamfer_2d_with_grad(a: &[Vec2], b: &[Vec2]) -> Result<(f64, Vec<Vec2>)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut grad = vec![Vec2::zeros(); a.len()];
    let mut forward = 0.0;
    for (i, p) in a.iter().enumerate() {
        let (k, d) = nearest(p, b);
        forward += d;
        grad[i] += (p - b[k]) * (2.0 / na);
    }
    let mut backward = 0.0;
    for q in b {
        let (k, d) = nearest(q, a);
        backward += d;
        grad[k] += (a[k] - q) * (2.0 / nb);
    }
    Ok((forward / na + backward / nb, grad))
}
