use super::{barycentric_2d, signed_area_2d, SurfacePoint};
use crate::error::{Error, Result};
use crate::Vec2;

const INSIDE_TOL: f64 = 1e-12;

/// Fixed per-face UV triangles plus the texture resolution they index.
#[derive(Debug, Clone, PartialEq)]
pub struct UvChart {
    face_uvs: Vec<[Vec2; 3]>,
    height: usize,
    width: usize,
}

impl UvChart {
    pub fn new(face_uvs: Vec<[Vec2; 3]>, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("texture resolution must be positive".into()));
        }
        for (f, tri) in face_uvs.iter().enumerate() {
            for p in tri {
                if !(0.0..=1.0).contains(&p.x) || !(0.0..=1.0).contains(&p.y) {
                    return Err(Error::InvalidArgument(format!(
                        "uv ({}, {}) of face {f} lies outside the unit square",
                        p.x, p.y
                    )));
                }
            }
            if signed_area_2d(tri[0], tri[1], tri[2]).abs() < 1e-16 {
                return Err(Error::DegenerateFace(f));
            }
        }
        Ok(Self {
            face_uvs,
            height,
            width,
        })
    }

    pub fn face_uvs(&self) -> &[[Vec2; 3]] {
        &self.face_uvs
    }

    pub fn num_faces(&self) -> usize {
        self.face_uvs.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Same UV triangles at a different texture resolution.
    pub fn with_resolution(&self, height: usize, width: usize) -> Self {
        Self {
            face_uvs: self.face_uvs.clone(),
            height,
            width,
        }
    }

    /// UV coordinate of texel `(row, col)`'s centre.
    pub fn texel_center(&self, row: usize, col: usize) -> Vec2 {
        Vec2::new(
            (col as f64 + 0.5) / self.width as f64,
            (row as f64 + 0.5) / self.height as f64,
        )
    }

    /// UV coordinate of a surface point.
    pub fn uv_of(&self, p: &SurfacePoint) -> Vec2 {
        let t = &self.face_uvs[p.face];
        t[0] * p.bary[0] + t[1] * p.bary[1] + t[2] * p.bary[2]
    }

    /// `(row, col)` of the texel containing `uv`, clamped to the grid.
    pub fn texel_of(&self, uv: Vec2) -> (usize, usize) {
        let col = ((uv.x * self.width as f64).floor() as isize).clamp(0, self.width as isize - 1);
        let row = ((uv.y * self.height as f64).floor() as isize).clamp(0, self.height as isize - 1);
        (row as usize, col as usize)
    }

    /// Precomputes the surface point under every texel centre.
    ///
    /// Texels outside all UV triangles are marked uncharted and receive the
    /// closest point of the nearest triangle, so that every texel still has
    /// a well-defined surface location for texture-flow evaluation.
    pub fn texel_table(&self) -> TexelTable {
        let (h, w) = (self.height, self.width);
        let mut points: Vec<Option<SurfacePoint>> = vec![None; h * w];
        for (f, tri) in self.face_uvs.iter().enumerate() {
            let (lo, hi) = bbox(tri);
            let c0 = ((lo.x * w as f64 - 0.5).floor().max(0.0)) as usize;
            let c1 = ((hi.x * w as f64 - 0.5).ceil().max(0.0) as usize).min(w - 1);
            let r0 = ((lo.y * h as f64 - 0.5).floor().max(0.0)) as usize;
            let r1 = ((hi.y * h as f64 - 0.5).ceil().max(0.0) as usize).min(h - 1);
            for row in r0..=r1 {
                for col in c0..=c1 {
                    let slot = &mut points[row * w + col];
                    if slot.is_some() {
                        continue;
                    }
                    if let Some(p) = locate_in(f, tri, self.texel_center(row, col)) {
                        *slot = Some(p);
                    }
                }
            }
        }
        let charted: Vec<bool> = points.iter().map(Option::is_some).collect();
        let points = points
            .into_iter()
            .enumerate()
            .map(|(idx, p)| {
                p.unwrap_or_else(|| self.nearest_point(self.texel_center(idx / w, idx % w)))
            })
            .collect();
        TexelTable {
            height: h,
            width: w,
            points,
            charted,
        }
    }

    fn nearest_point(&self, uv: Vec2) -> SurfacePoint {
        let mut best = (f64::INFINITY, SurfacePoint::vertex(0, 0));
        for (f, tri) in self.face_uvs.iter().enumerate() {
            let q = closest_point_on_triangle(tri, uv);
            let d = (q - uv).norm_squared();
            if d < best.0 {
                let bary = barycentric_2d(tri, q).map(clamp_bary).unwrap_or([1.0, 0.0, 0.0]);
                best = (d, SurfacePoint { face: f, bary });
            }
        }
        best.1
    }
}

/// Surface point under `uv`: the first face (in index order) whose UV
/// triangle contains it.
pub fn uv_to_surface(chart: &UvChart, uv: Vec2) -> Result<SurfacePoint> {
    chart
        .face_uvs
        .iter()
        .enumerate()
        .find_map(|(f, tri)| locate_in(f, tri, uv))
        .ok_or(Error::UnchartedTexel { u: uv.x, v: uv.y })
}

/// Texel-centre lookup table of a chart, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TexelTable {
    pub height: usize,
    pub width: usize,
    pub points: Vec<SurfacePoint>,
    pub charted: Vec<bool>,
}

impl TexelTable {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn locate_in(face: usize, tri: &[Vec2; 3], uv: Vec2) -> Option<SurfacePoint> {
    let b = barycentric_2d(tri, uv)?;
    if b.iter().all(|&x| x >= -INSIDE_TOL) {
        Some(SurfacePoint {
            face,
            bary: clamp_bary(b),
        })
    } else {
        None
    }
}

fn clamp_bary(b: [f64; 3]) -> [f64; 3] {
    let c = b.map(|x| x.max(0.0));
    let s: f64 = c.iter().sum();
    c.map(|x| x / s)
}

fn bbox(tri: &[Vec2; 3]) -> (Vec2, Vec2) {
    let lo = Vec2::new(
        tri[0].x.min(tri[1].x).min(tri[2].x),
        tri[0].y.min(tri[1].y).min(tri[2].y),
    );
    let hi = Vec2::new(
        tri[0].x.max(tri[1].x).max(tri[2].x),
        tri[0].y.max(tri[1].y).max(tri[2].y),
    );
    (lo, hi)
}

fn closest_point_on_segment(a: Vec2, b: Vec2, p: Vec2) -> Vec2 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    a + ab * t
}

fn closest_point_on_triangle(tri: &[Vec2; 3], p: Vec2) -> Vec2 {
    if let Some(b) = barycentric_2d(tri, p) {
        if b.iter().all(|&x| x >= 0.0) {
            return p;
        }
    }
    let mut best = closest_point_on_segment(tri[0], tri[1], p);
    for (i, j) in [(1, 2), (2, 0)] {
        let q = closest_point_on_segment(tri[i], tri[j], p);
        if (q - p).norm_squared() < (best - p).norm_squared() {
            best = q;
        }
    }
    best
}
