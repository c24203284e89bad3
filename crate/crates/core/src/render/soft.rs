use super::SoftRasterConfig;
use crate::image::{pixel_center, Image};
use crate::Vec2;

/// Distance-squared cut-off in units of sigma: beyond it a face contributes
/// less than `sigmoid(-36) ~ 2e-16` outside its boundary.
const CUTOFF: f64 = 36.0;
const MIN_AREA2: f64 = 1e-14;

/// Soft silhouette together with the per-pixel transmittance
/// `T(p) = prod_f (1 - d_f(p))`, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Silhouette {
    pub mask: Image,
    pub transmittance: Vec<f64>,
}

struct FaceBox {
    pts: [Vec2; 3],
    area2: f64,
    rows: (usize, usize),
    cols: (usize, usize),
}

fn face_box(points: &[Vec2], face: &[usize; 3], cfg: &SoftRasterConfig) -> Option<FaceBox> {
    let pts = face.map(|i| points[i]);
    let area2 = (pts[1] - pts[0]).perp(&(pts[2] - pts[0]));
    if !(area2.abs() >= MIN_AREA2) {
        return None;
    }
    let margin = (CUTOFF * cfg.sigma).sqrt();
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let xmin = pts.iter().map(|p| p.x).fold(f64::INFINITY, f64::min) - margin;
    let xmax = pts.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max) + margin;
    let ymin = pts.iter().map(|p| p.y).fold(f64::INFINITY, f64::min) - margin;
    let ymax = pts.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max) + margin;
    // pixel centre (c + 0.5) / W * 2 - 1 within [xmin, xmax]
    let c0 = ((xmin + 1.0) * 0.5 * w - 0.5).ceil().max(0.0);
    let c1 = ((xmax + 1.0) * 0.5 * w - 0.5).floor().min(w - 1.0);
    let r0 = ((1.0 - ymax) * 0.5 * h - 0.5).ceil().max(0.0);
    let r1 = ((1.0 - ymin) * 0.5 * h - 0.5).floor().min(h - 1.0);
    if c0 > c1 || r0 > r1 {
        return None;
    }
    Some(FaceBox {
        pts,
        area2,
        rows: (r0 as usize, r1 as usize),
        cols: (c0 as usize, c1 as usize),
    })
}

/// Coverage of one face at one pixel: `(d, 1 - d, edge, t, q)` where the
/// last three describe the nearest boundary point `q = a + t (b - a)` on
/// edge `edge` (from corner `edge` to corner `edge + 1`).
struct Coverage {
    d: f64,
    one_minus: f64,
    sign: f64,
    edge: usize,
    t: f64,
    q: Vec2,
}

fn coverage(fb: &FaceBox, p: Vec2, sigma: f64) -> Coverage {
    let [a, b, c] = fb.pts;
    let w0 = (c - b).perp(&(p - b)) / fb.area2;
    let w1 = (a - c).perp(&(p - c)) / fb.area2;
    let w2 = (b - a).perp(&(p - a)) / fb.area2;
    let inside = w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0;
    let mut best = (f64::INFINITY, 0, 0.0, Vec2::zeros());
    for e in 0..3 {
        let (s, t_) = (fb.pts[e], fb.pts[(e + 1) % 3]);
        let dir = t_ - s;
        let len2 = dir.norm_squared();
        let t = if len2 > 0.0 { ((p - s).dot(&dir) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let q = s + dir * t;
        let d2 = (p - q).norm_squared();
        if d2 < best.0 {
            best = (d2, e, t, q);
        }
    }
    let sign = if inside { 1.0 } else { -1.0 };
    let z = sign * best.0 / sigma;
    Coverage {
        d: 1.0 / (1.0 + (-z).exp()),
        one_minus: 1.0 / (1.0 + z.exp()),
        sign,
        edge: best.1,
        t: best.2,
        q: best.3,
    }
}

/// Soft silhouette of projected points `points` (NDC) and triangles `faces`.
pub fn soft_silhouette(points: &[Vec2], faces: &[[usize; 3]], cfg: &SoftRasterConfig) -> Silhouette {
    let (h, w) = (cfg.height, cfg.width);
    let mut transmittance = vec![1.0; h * w];
    for face in faces {
        let Some(fb) = face_box(points, face, cfg) else { continue };
        for r in fb.rows.0..=fb.rows.1 {
            for c in fb.cols.0..=fb.cols.1 {
                let cov = coverage(&fb, pixel_center(h, w, r, c), cfg.sigma);
                transmittance[r * w + c] *= cov.one_minus;
            }
        }
    }
    let mask = Image::from_data(h, w, 1, transmittance.iter().map(|t| 1.0 - t).collect())
        .expect("mask size matches");
    Silhouette { mask, transmittance }
}

/// Gradient w.r.t. the projected points given `dL/dmask`.
pub fn soft_silhouette_backward(
    points: &[Vec2],
    faces: &[[usize; 3]],
    cfg: &SoftRasterConfig,
    sil: &Silhouette,
    grad_mask: &[f64],
) -> Vec<Vec2> {
    let (h, w) = (cfg.height, cfg.width);
    let mut grad = vec![Vec2::zeros(); points.len()];
    for face in faces {
        let Some(fb) = face_box(points, face, cfg) else { continue };
        let mut g = [Vec2::zeros(); 3];
        for r in fb.rows.0..=fb.rows.1 {
            for c in fb.cols.0..=fb.cols.1 {
                let pix = r * w + c;
                if grad_mask[pix] == 0.0 {
                    continue;
                }
                let p = pixel_center(h, w, r, c);
                let cov = coverage(&fb, p, cfg.sigma);
                if cov.one_minus == 0.0 || cov.d == 0.0 {
                    continue;
                }
                // dmask/dd_f is the transmittance of every other face
                let others = sil.transmittance[pix] / cov.one_minus;
                let dz = grad_mask[pix] * others * cov.d * cov.one_minus;
                let dd2 = dz * cov.sign / cfg.sigma;
                let diff = p - cov.q;
                g[cov.edge] += diff * (-2.0 * (1.0 - cov.t) * dd2);
                g[(cov.edge + 1) % 3] += diff * (-2.0 * cov.t * dd2);
            }
        }
        for k in 0..3 {
            grad[face[k]] += g[k];
        }
    }
    grad
}
