use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::chamfer::chamfer_2d_with_grad;
use super::keypoint::{heatmap_to_uv, order_free_mean};
use crate::camera::{Projector, WeakPerspectiveCamera, CAMERA_PARAMS};
use crate::error::{Error, Result};
use crate::geometry::TexelTable;
use crate::image::{pixel_center, Image, LabelMap};
use crate::render::TextureFlow;
use crate::{Vec2, Vec3};

/// Video-level part map in UV space and the per-vertex part assignment
/// derived from it. Part indices are 0-based (label `k` is part `k - 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct PartUv {
    pub num_parts: usize,
    pub height: usize,
    pub width: usize,
    pub texel_part: Vec<Option<usize>>,
    pub vertex_part: Vec<Option<usize>>,
}

impl PartUv {
    /// Vertex indices of every part.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_parts];
        for (v, p) in self.vertex_part.iter().enumerate() {
            if let Some(p) = p {
                out[*p].push(v);
            }
        }
        out
    }
}

/// One-hot part indicator image (`num_parts` channels) of a label map.
pub fn part_indicators(labels: &LabelMap, num_parts: usize) -> Image {
    Image::from_fn(labels.height, labels.width, num_parts, |r, c, k| {
        if labels.labels[r * labels.width + c] as usize == k + 1 {
            1.0
        } else {
            0.0
        }
    })
}

/// Maps every frame's part indicators into UV space through its flow,
/// averages over frames, and takes the per-texel argmax. Each vertex takes
/// the majority part of the charted texels whose surface point is closest
/// to it; vertices without such texels stay unassigned.
pub fn build_part_uv(
    labels: &[LabelMap],
    flows: &[TextureFlow],
    table: &TexelTable,
    faces: &[[usize; 3]],
    num_vertices: usize,
    num_parts: usize,
) -> Result<PartUv> {
    if labels.len() != flows.len() {
        return Err(Error::Dimension(format!("{} part maps for {} flows", labels.len(), flows.len())));
    }
    if num_parts == 0 {
        return Err(Error::NoParts);
    }
    let uv_maps: Vec<Image> = labels
        .iter()
        .zip(flows)
        .map(|(l, f)| heatmap_to_uv(&part_indicators(l, num_parts), f))
        .collect();
    let mean = order_free_mean(&uv_maps)?;
    let texel_part: Vec<Option<usize>> = (0..mean.num_pixels())
        .map(|t| {
            if !table.charted[t] {
                return None;
            }
            let px = mean.pixel(t);
            let (best, val) = px
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
            (val > 0.0).then_some(best)
        })
        .collect();
    let mut votes = vec![vec![0usize; num_parts]; num_vertices];
    for (t, part) in texel_part.iter().enumerate() {
        if let Some(p) = part {
            let sp = &table.points[t];
            votes[faces[sp.face][sp.dominant_corner()]][*p] += 1;
        }
    }
    let vertex_part = votes
        .iter()
        .map(|v| {
            let (best, count) = v
                .iter()
                .enumerate()
                .fold((0, 0), |acc, (k, &c)| if c > acc.1 { (k, c) } else { acc });
            (count > 0).then_some(best)
        })
        .collect();
    Ok(PartUv {
        num_parts,
        height: table.height,
        width: table.width,
        texel_part,
        vertex_part,
    })
}

/// Up to `max_per_part` foreground pixel centres (NDC) of every part, drawn
/// uniformly without replacement.
pub fn sample_part_pixels(labels: &LabelMap, num_parts: usize, max_per_part: usize, seed: u64) -> Vec<Vec<Vec2>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (1..=num_parts)
        .map(|label| {
            let pixels: Vec<usize> = (0..labels.labels.len())
                .filter(|&p| labels.labels[p] as usize == label)
                .collect();
            let take = pixels.len().min(max_per_part);
            let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, pixels.len(), take)
                .into_iter()
                .map(|i| pixels[i])
                .collect();
            picked.sort_unstable();
            picked
                .into_iter()
                .map(|p| pixel_center(labels.height, labels.width, p / labels.width, p % labels.width))
                .collect()
        })
        .collect()
}

/// Part-correspondence term of one frame:
/// `sum_parts chamfer(project(V_part), Y_part) / |V_part|`, skipping parts
/// without vertices or samples. Gradients are accumulated with factor
/// `scale`.
#[allow(clippy::too_many_arguments)]
pub fn part_term(
    vertices: &[Vec3],
    proj: &Projector,
    members: &[Vec<usize>],
    samples: &[Vec<Vec2>],
    scale: f64,
    grad_vertices: Option<&mut [Vec3]>,
    grad_camera: Option<&mut [f64; CAMERA_PARAMS]>,
) -> Result<f64> {
    let mut value = 0.0;
    let mut gv_acc = grad_vertices;
    let mut gc_acc = grad_camera;
    for (part, ys) in members.iter().zip(samples) {
        if part.is_empty() || ys.is_empty() {
            continue;
        }
        let pts: Vec<Vec2> = part.iter().map(|&v| proj.project(&vertices[v])).collect();
        let (c, g) = chamfer_2d_with_grad(&pts, ys)?;
        let w = 1.0 / part.len() as f64;
        value += w * c;
        if let (Some(gv), Some(gc)) = (gv_acc.as_deref_mut(), gc_acc.as_deref_mut()) {
            for (&v, gp) in part.iter().zip(g) {
                gv[v] += proj.backward(&vertices[v], gp * (w * scale), gc);
            }
        }
    }
    Ok(value)
}

/// One frame's input to [`loss_part_correspondence`].
#[derive(Debug, Clone, Copy)]
pub struct PartFrame<'a> {
    pub vertices: &'a [Vec3],
    pub camera: &'a WeakPerspectiveCamera,
    pub samples: &'a [Vec<Vec2>],
}

/// Sum over frames and parts of the per-part Chamfer terms.
pub fn loss_part_correspondence(frames: &[PartFrame], members: &[Vec<usize>]) -> Result<f64> {
    if members.iter().all(Vec::is_empty) {
        return Err(Error::NoParts);
    }
    frames.iter().try_fold(0.0, |acc, f| {
        let proj = Projector::new(f.camera);
        Ok(acc + part_term(f.vertices, &proj, members, f.samples, 1.0, None, None)?)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{icosphere, latlong_chart};

    #[test]
    fn single_vertex_part() {
        let v = vec![Vec3::new(0.1, 0.2, 0.0)];
        let cam = WeakPerspectiveCamera::identity();
        let samples = vec![vec![Vec2::new(0.4, 0.6)]];
        let frame = PartFrame {
            vertices: &v,
            camera: &cam,
            samples: &samples,
        };
        let got = loss_part_correspondence(&[frame], &[vec![0]]).unwrap();
        assert!((got - 2.0 * 0.25).abs() < 1e-15);
        let on = vec![vec![Vec2::new(0.1, 0.2)]];
        let exact = PartFrame { samples: &on, ..frame };
        assert_eq!(loss_part_correspondence(&[exact], &[vec![0]]).unwrap(), 0.0);
        assert!(matches!(loss_part_correspondence(&[exact], &[vec![]]), Err(Error::NoParts)));
    }

    #[test]
    fn two_frame_toy_matches_brute_force() {
        let v1 = vec![Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.5, 0.1, 0.0), Vec3::new(-0.3, 0.4, 2.0)];
        let v2 = vec![Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.6, -0.2, 0.0), Vec3::new(-0.2, 0.3, 0.0)];
        let c1 = WeakPerspectiveCamera::identity();
        let c2 = WeakPerspectiveCamera::new(2.0, Vec2::new(0.1, 0.0), [1.0, 0.0, 0.0, 0.0]).unwrap();
        let members = vec![vec![0, 1], vec![2]];
        let s1 = vec![vec![Vec2::new(0.0, 0.1), Vec2::new(0.4, 0.0), Vec2::new(0.2, 0.2)], vec![Vec2::new(-0.3, 0.5)]];
        let s2 = vec![vec![Vec2::new(0.3, 0.0)], vec![Vec2::new(-0.4, 0.7), Vec2::new(0.0, 0.5)]];
        let frames = [
            PartFrame { vertices: &v1, camera: &c1, samples: &s1 },
            PartFrame { vertices: &v2, camera: &c2, samples: &s2 },
        ];
        let got = loss_part_correspondence(&frames, &members).unwrap();
        let brute = |a: &[Vec2], b: &[Vec2]| -> f64 {
            let one = |x: &[Vec2], y: &[Vec2]| {
                x.iter()
                    .map(|p| y.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min))
                    .sum::<f64>()
                    / x.len() as f64
            };
            one(a, b) + one(b, a)
        };
        let mut expect = 0.0;
        for (v, c, s) in [(&v1, &c1, &s1), (&v2, &c2, &s2)] {
            for (part, ys) in members.iter().zip(s.iter()) {
                let pts: Vec<Vec2> = part.iter().map(|&i| c.project_point(&v[i])).collect();
                expect += brute(&pts, ys) / part.len() as f64;
            }
        }
        assert!((got - expect).abs() < 1e-12);
    }

    fn stripes(h: usize, w: usize) -> LabelMap {
        let mut l = LabelMap::new(h, w);
        for r in 0..h {
            for c in 0..w {
                l.labels[r * w + c] = (1 + c * 3 / w) as u8;
            }
        }
        l
    }

    fn grid_flow(h: usize, w: usize) -> TextureFlow {
        TextureFlow::from_coords(
            h,
            w,
            (0..h * w).map(|t| pixel_center(h, w, t / w, t % w)).collect(),
        )
    }

    #[test]
    fn part_uv_is_identity_on_identical_frames_and_order_free() {
        let mesh = icosphere(2);
        let table = latlong_chart(&mesh, 16, 16).texel_table();
        let labels = stripes(16, 16);
        let flow = grid_flow(16, 16);
        let one = build_part_uv(&[labels.clone()], &[flow.clone()], &table, mesh.faces(), 162, 3).unwrap();
        let three = build_part_uv(&vec![labels.clone(); 3], &vec![flow.clone(); 3], &table, mesh.faces(), 162, 3).unwrap();
        assert_eq!(one, three);
        for t in 0..256 {
            if table.charted[t] {
                assert_eq!(one.texel_part[t], Some((t % 16) * 3 / 16));
            } else {
                assert_eq!(one.texel_part[t], None);
            }
        }

        let mut corrupted = labels.clone();
        for p in 0..40 {
            corrupted.labels[p] = 3;
        }
        let set_a = vec![labels.clone(), corrupted.clone(), labels.clone()];
        let set_b = vec![corrupted, labels.clone(), labels];
        let a = build_part_uv(&set_a, &vec![flow.clone(); 3], &table, mesh.faces(), 162, 3).unwrap();
        let b = build_part_uv(&set_b, &vec![flow; 3], &table, mesh.faces(), 162, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.texel_part, one.texel_part);
    }

    #[test]
    fn samples_are_seeded_and_bounded() {
        let labels = stripes(16, 16);
        let a = sample_part_pixels(&labels, 4, 20, 9);
        assert_eq!(a, sample_part_pixels(&labels, 4, 20, 9));
        assert_eq!(a.iter().map(Vec::len).collect::<Vec<_>>(), vec![20, 20, 20, 0]);
        for p in &a[0] {
            assert!(p.x < -0.3);
        }
    }
}
