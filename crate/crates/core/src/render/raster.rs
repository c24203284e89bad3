use crate::geometry::UvChart;
use crate::image::{pixel_center, Bilinear, Image};
use crate::Vec2;

pub const NO_FACE: u32 = u32::MAX;
const EDGE_TOL: f64 = 1e-12;

/// Hard z-buffered rasterisation: the nearest face covering each pixel
/// centre and the barycentric coordinates of the centre within it.
#[derive(Debug, Clone)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub face: Vec<u32>,
    pub bary: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
}

impl Raster {
    pub fn face_at(&self, pixel: usize) -> Option<usize> {
        (self.face[pixel] != NO_FACE).then(|| self.face[pixel] as usize)
    }

    /// Binary coverage as a single-channel image.
    pub fn coverage(&self) -> Image {
        Image::from_data(
            self.height,
            self.width,
            1,
            self.face.iter().map(|&f| if f == NO_FACE { 0.0 } else { 1.0 }).collect(),
        )
        .expect("coverage size matches")
    }
}

/// Rasterises projected points with per-vertex depth (larger is nearer).
/// Ties keep the lower face index.
pub fn rasterize(points: &[Vec2], depth: &[f64], faces: &[[usize; 3]], height: usize, width: usize) -> Raster {
    let n = height * width;
    let mut out = Raster {
        height,
        width,
        face: vec![NO_FACE; n],
        bary: vec![[0.0; 3]; n],
        depth: vec![f64::NEG_INFINITY; n],
    };
    let (w, h) = (width as f64, height as f64);
    for (f, face) in faces.iter().enumerate() {
        let [a, b, c] = face.map(|i| points[i]);
        let area2 = (b - a).perp(&(c - a));
        if area2.abs() < 1e-14 {
            continue;
        }
        let xmin = a.x.min(b.x).min(c.x);
        let xmax = a.x.max(b.x).max(c.x);
        let ymin = a.y.min(b.y).min(c.y);
        let ymax = a.y.max(b.y).max(c.y);
        let c0 = ((xmin + 1.0) * 0.5 * w - 0.5).ceil().max(0.0);
        let c1 = ((xmax + 1.0) * 0.5 * w - 0.5).floor().min(w - 1.0);
        let r0 = ((1.0 - ymax) * 0.5 * h - 0.5).ceil().max(0.0);
        let r1 = ((1.0 - ymin) * 0.5 * h - 0.5).floor().min(h - 1.0);
        if c0 > c1 || r0 > r1 {
            continue;
        }
        for r in r0 as usize..=r1 as usize {
            for col in c0 as usize..=c1 as usize {
                let p = pixel_center(height, width, r, col);
                let w0 = (c - b).perp(&(p - b)) / area2;
                let w1 = (a - c).perp(&(p - c)) / area2;
                let w2 = 1.0 - w0 - w1;
                if w0 < -EDGE_TOL || w1 < -EDGE_TOL || w2 < -EDGE_TOL {
                    continue;
                }
                let z = w0 * depth[face[0]] + w1 * depth[face[1]] + w2 * depth[face[2]];
                let pix = r * width + col;
                if z > out.depth[pix] {
                    out.depth[pix] = z;
                    out.face[pix] = f as u32;
                    out.bary[pix] = [w0, w1, w2];
                }
            }
        }
    }
    out
}

fn texel_stencil(raster: &Raster, chart: &UvChart, texture: &Image, pix: usize) -> Option<Bilinear> {
    let f = raster.face_at(pix)?;
    let b = raster.bary[pix];
    let tri = &chart.face_uvs()[f];
    let uv = tri[0] * b[0] + tri[1] * b[1] + tri[2] * b[2];
    Some(Bilinear::uv(texture.height(), texture.width(), uv))
}

/// Nearest-face colour through the chart and bilinear texture lookup;
/// uncovered pixels are black.
pub fn render_texture_raster(raster: &Raster, chart: &UvChart, texture: &Image) -> Image {
    let mut out = Image::new(raster.height, raster.width, texture.channels());
    for pix in 0..raster.height * raster.width {
        if let Some(st) = texel_stencil(raster, chart, texture, pix) {
            st.sample(texture, out.pixel_mut(pix));
        }
    }
    out
}

/// Gradient w.r.t. the texture of [`render_texture_raster`], accumulated
/// into `grad_texture`.
pub fn render_texture_backward(raster: &Raster, chart: &UvChart, grad_image: &Image, grad_texture: &mut Image) {
    for pix in 0..raster.height * raster.width {
        if let Some(st) = texel_stencil(raster, chart, grad_texture, pix) {
            st.scatter(grad_texture, grad_image.pixel(pix));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::barycentric_2d;

    fn quad() -> (Vec<Vec2>, Vec<[usize; 3]>, UvChart) {
        let pts = vec![
            Vec2::new(-0.6, -0.6),
            Vec2::new(0.6, -0.6),
            Vec2::new(0.6, 0.6),
            Vec2::new(-0.6, 0.6),
        ];
        let faces = vec![[0, 1, 2], [0, 2, 3]];
        let uv = |x: f64, y: f64| Vec2::new(x, y);
        let chart = UvChart::new(
            vec![
                [uv(0.0, 1.0), uv(1.0, 1.0), uv(1.0, 0.0)],
                [uv(0.0, 1.0), uv(1.0, 0.0), uv(0.0, 0.0)],
            ],
            8,
            8,
        )
        .unwrap();
        (pts, faces, chart)
    }

    #[test]
    fn constant_texture_paints_covered_pixels() {
        let (pts, faces, chart) = quad();
        let raster = rasterize(&pts, &[0.0; 4], &faces, 16, 16);
        let red = Image::filled(8, 8, &[1.0, 0.0, 0.0]);
        let img = render_texture_raster(&raster, &chart, &red);
        for pix in 0..256 {
            let expect = if raster.face_at(pix).is_some() { [1.0, 0.0, 0.0] } else { [0.0; 3] };
            for (a, b) in img.pixel(pix).iter().zip(expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(raster.face.iter().filter(|&&f| f != NO_FACE).count() > 0);
        let empty = rasterize(&[], &[], &[], 16, 16);
        assert!(render_texture_raster(&empty, &chart, &red).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checkerboard_matches_per_pixel_oracle() {
        let (pts, faces, chart) = quad();
        let tex = Image::from_fn(8, 8, 1, |r, c, _| ((r / 2 + c / 2) % 2) as f64);
        let raster = rasterize(&pts, &[0.0; 4], &faces, 32, 32);
        let img = render_texture_raster(&raster, &chart, &tex);
        let mut dark = 0;
        let mut light = 0;
        for r in 0..32 {
            for c in 0..32 {
                let p = pixel_center(32, 32, r, c);
                let mut expect = 0.0;
                for (f, face) in faces.iter().enumerate() {
                    let tri = face.map(|i| pts[i]);
                    if let Some(b) = barycentric_2d(&tri, p).filter(|b| b.iter().all(|&x| x >= -1e-12)) {
                        let t = &chart.face_uvs()[f];
                        let uv = t[0] * b[0] + t[1] * b[1] + t[2] * b[2];
                        expect = Bilinear::uv(8, 8, uv).sample_channel(&tex, 0);
                        break;
                    }
                }
                let got = img.get(r, c, 0);
                assert!((got - expect).abs() < 1e-12);
                if raster.face_at(r * 32 + c).is_some() {
                    if got > 0.5 {
                        light += 1;
                    } else {
                        dark += 1;
                    }
                }
            }
        }
        assert!(light > 100 && dark > 100);
    }

    #[test]
    fn nearer_face_wins() {
        let pts = vec![
            Vec2::new(-0.9, -0.9),
            Vec2::new(0.9, -0.9),
            Vec2::new(0.0, 0.9),
            Vec2::new(-0.9, -0.9),
            Vec2::new(0.9, -0.9),
            Vec2::new(0.0, 0.9),
        ];
        let depth = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let r = rasterize(&pts, &depth, &[[0, 1, 2], [3, 4, 5]], 8, 8);
        assert_eq!(r.face_at(4 * 8 + 4), Some(1));
    }

    #[test]
    fn texture_backward_is_adjoint() {
        let (pts, faces, chart) = quad();
        let raster = rasterize(&pts, &[0.0; 4], &faces, 12, 12);
        let tex = Image::from_fn(8, 8, 2, |r, c, k| ((r * 8 + c + k) as f64 * 0.13).cos());
        let g = Image::from_fn(12, 12, 2, |r, c, k| ((r * 5 + c * 3 + k) as f64 * 0.21).sin());
        let mut gt = Image::new(8, 8, 2);
        render_texture_backward(&raster, &chart, &g, &mut gt);
        let lhs: f64 = render_texture_raster(&raster, &chart, &tex).data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = tex.data().iter().zip(gt.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
