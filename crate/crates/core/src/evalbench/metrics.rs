use crate::error::{Error, Result};
use crate::image::{pixel_center, Image};
use crate::losses::KeypointSet;
use crate::{Vec2, Vec3};

/// Binary image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, pixels: Vec<bool>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::Dimension(format!("{} pixels for a {height}x{width} mask", pixels.len())));
        }
        Ok(Self { height, width, pixels })
    }

    /// Pixels of channel 0 at or above `threshold`.
    pub fn from_image(img: &Image, threshold: f64) -> Self {
        Self {
            height: img.height(),
            width: img.width(),
            pixels: (0..img.num_pixels()).map(|p| img.pixel(p)[0] >= threshold).collect(),
        }
    }

    pub fn to_image(&self) -> Image {
        Image::from_binary(self.height, self.width, &self.pixels).expect("consistent mask")
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    fn check(&self, other: &Mask) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::Dimension(format!(
                "mask {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    /// Foreground pixels with a background (or out-of-image) 4-neighbour.
    pub fn boundary(&self) -> Vec<(usize, usize)> {
        let (h, w) = (self.height, self.width);
        let on = |r: isize, c: isize| r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && self.pixels[r as usize * w + c as usize];
        let mut out = Vec::new();
        for r in 0..h {
            for c in 0..w {
                if !self.pixels[r * w + c] {
                    continue;
                }
                let (ri, ci) = (r as isize, c as isize);
                if !(on(ri - 1, ci) && on(ri + 1, ci) && on(ri, ci - 1) && on(ri, ci + 1)) {
                    out.push((r, c));
                }
            }
        }
        out
    }

    /// Diagonal of the foreground bounding box in NDC units (pixel centres);
    /// 0 for an empty mask.
    pub fn bbox_diagonal(&self) -> f64 {
        let fg: Vec<Vec2> = (0..self.pixels.len())
            .filter(|&p| self.pixels[p])
            .map(|p| pixel_center(self.height, self.width, p / self.width, p % self.width))
            .collect();
        if fg.is_empty() {
            return 0.0;
        }
        let lo = fg.iter().fold(Vec2::repeat(f64::INFINITY), |a, p| a.inf(p));
        let hi = fg.iter().fold(Vec2::repeat(f64::NEG_INFINITY), |a, p| a.sup(p));
        (hi - lo).norm()
    }
}

/// Region similarity `|A n B| / |A u B|`; 1 when both are empty.
pub fn mask_iou(pred: &Mask, gt: &Mask) -> Result<f64> {
    pred.check(gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in pred.pixels.iter().zip(&gt.pixels) {
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Boundary match radius: 1 px at 64x64, scaled with the larger side.
pub fn default_contour_tolerance(height: usize, width: usize) -> f64 {
    height.max(width) as f64 / 64.0
}

fn matched_fraction(from: &[(usize, usize)], to: &Mask, tolerance: f64) -> f64 {
    let reach = tolerance.floor() as isize;
    let tol2 = tolerance * tolerance;
    let (h, w) = (to.height as isize, to.width as isize);
    let mut grid = vec![false; to.pixels.len()];
    for (r, c) in to.boundary() {
        grid[r * to.width + c] = true;
    }
    let hits = from
        .iter()
        .filter(|&&(r, c)| {
            for dr in -reach..=reach {
                for dc in -reach..=reach {
                    if (dr * dr + dc * dc) as f64 > tol2 {
                        continue;
                    }
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    if rr >= 0 && cc >= 0 && rr < h && cc < w && grid[(rr * w + cc) as usize] {
                        return true;
                    }
                }
            }
            false
        })
        .count();
    hits as f64 / from.len() as f64
}

/// Boundary F-measure with hard pixel-distance matching: a boundary pixel
/// counts as matched when the other boundary has a pixel within
/// `tolerance` (Euclidean, in pixels).
pub fn contour_f(pred: &Mask, gt: &Mask, tolerance: f64) -> Result<f64> {
    pred.check(gt)?;
    let (bp, bg) = (pred.boundary(), gt.boundary());
    match (bp.is_empty(), bg.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let precision = matched_fraction(&bp, gt, tolerance);
    let recall = matched_fraction(&bg, pred, tolerance);
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

/// Fraction of visible keypoints predicted within `alpha * diagonal`.
pub fn pck(pred: &[Vec2], gt: &KeypointSet, alpha: f64, diagonal: f64) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!("{} predicted keypoints for {}", pred.len(), gt.len())));
    }
    let visible = gt.num_visible();
    if visible == 0 {
        return Err(Error::InvalidArgument("no visible keypoints".into()));
    }
    let radius = alpha * diagonal;
    let hits = pred
        .iter()
        .zip(&gt.points)
        .zip(&gt.visible)
        .filter(|((p, g), &v)| v && (*p - *g).norm() <= radius)
        .count();
    Ok(hits as f64 / visible as f64)
}

fn mean_nearest(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter()
        .map(|p| b.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / a.len() as f64
}

/// Symmetric mean squared nearest-neighbour distance between vertex sets.
pub fn chamfer_3d(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    Ok(mean_nearest(a, b) + mean_nearest(b, a))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(h: usize, w: usize, r0: usize, c0: usize, size: usize) -> Mask {
        let pixels = (0..h * w)
            .map(|p| {
                let (r, c) = (p / w, p % w);
                r >= r0 && r < r0 + size && c >= c0 && c < c0 + size
            })
            .collect();
        Mask::new(h, w, pixels).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = square(16, 16, 2, 2, 6);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        assert_eq!(mask_iou(&a, &square(16, 16, 9, 9, 6)).unwrap(), 0.0);
        // half-overlapping equal rectangles
        let l = Mask::new(4, 4, (0..16).map(|p| p % 4 < 2).collect()).unwrap();
        let m = Mask::new(4, 4, (0..16).map(|p| (1..3).contains(&(p % 4))).collect()).unwrap();
        assert!((mask_iou(&l, &m).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let empty = Mask::new(4, 4, vec![false; 16]).unwrap();
        assert_eq!(mask_iou(&empty, &empty).unwrap(), 1.0);
        assert!(mask_iou(&a, &l).is_err());
    }

    fn brute_f(pred: &Mask, gt: &Mask, tol: f64) -> f64 {
        let (bp, bg) = (pred.boundary(), gt.boundary());
        let frac = |x: &[(usize, usize)], y: &[(usize, usize)]| {
            x.iter()
                .filter(|a| {
                    y.iter().any(|b| {
                        let dr = a.0 as f64 - b.0 as f64;
                        let dc = a.1 as f64 - b.1 as f64;
                        (dr * dr + dc * dc).sqrt() <= tol
                    })
                })
                .count() as f64
                / x.len() as f64
        };
        let (p, r) = (frac(&bp, &bg), frac(&bg, &bp));
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    #[test]
    fn contour_examples() {
        let a = square(64, 64, 10, 10, 20);
        assert_eq!(contour_f(&a, &a, 1.0).unwrap(), 1.0);
        let shifted = square(64, 64, 13, 10, 20);
        let f = contour_f(&shifted, &a, 1.0).unwrap();
        assert!(f > 0.0 && f < 1.0);
        assert!((f - brute_f(&shifted, &a, 1.0)).abs() < 1e-15);
        let empty = Mask::new(64, 64, vec![false; 64 * 64]).unwrap();
        assert_eq!(contour_f(&empty, &a, 1.0).unwrap(), 0.0);
        assert_eq!(a.boundary().len(), 76);
        assert_eq!(default_contour_tolerance(128, 128), 2.0);
    }

    #[test]
    fn contour_matches_brute_force_on_random_masks() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let a = square(24, 24, rng.random_range(0..8), rng.random_range(0..8), rng.random_range(3..14));
            let pixels = (0..576).map(|_| rng.random_bool(0.3)).collect();
            let b = Mask::new(24, 24, pixels).unwrap();
            for tol in [1.0, 1.5, 2.5] {
                assert!((contour_f(&a, &b, tol).unwrap() - brute_f(&a, &b, tol)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn pck_examples() {
        let gt = KeypointSet {
            points: vec![Vec2::new(0.0, 0.0), Vec2::new(0.5, 0.5), Vec2::new(0.9, 0.9)],
            visible: vec![true, true, false],
        };
        assert_eq!(pck(&gt.points, &gt, 0.1, 1.0).unwrap(), 1.0);
        let pred = vec![Vec2::new(0.05, 0.0), Vec2::new(0.8, 0.5), Vec2::new(5.0, 5.0)];
        assert_eq!(pck(&pred, &gt, 0.1, 1.0).unwrap(), 0.5);
        let none = KeypointSet { points: gt.points.clone(), visible: vec![false; 3] };
        assert!(pck(&pred, &none, 0.1, 1.0).is_err());
    }

    #[test]
    fn chamfer_3d_examples() {
        let a = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 2.0, 3.0)];
        assert_eq!(chamfer_3d(&a, &a).unwrap(), 0.0);
        let d = 0.01;
        let b: Vec<Vec3> = a.iter().map(|p| p + Vec3::new(d, 0.0, 0.0)).collect();
        assert!((chamfer_3d(&a, &b).unwrap() - 2.0 * d * d).abs() < 1e-15);
        assert!(matches!(chamfer_3d(&a, &[]), Err(Error::EmptyPointSet)));
    }

    #[test]
    fn bbox_diagonal_of_full_mask() {
        let m = Mask::new(4, 4, vec![true; 16]).unwrap();
        // pixel centres span [-0.75, 0.75] on both axes
        assert!((m.bbox_diagonal() - 1.5 * 2f64.sqrt()).abs() < 1e-15);
    }
}
