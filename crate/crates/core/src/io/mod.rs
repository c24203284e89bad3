//! Flat text formats: camera trajectories, keypoint lists, basis-set and
//! problem manifests, and per-frame reconstruction directories.
//!
//! Paths inside manifests are relative to the manifest's directory.
//! Numbers are written in Rust's shortest round-trip form, so a write
//! followed by a read reproduces every value bit for bit.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::adaptation::{Mode, VideoProblem};
use crate::camera::WeakPerspectiveCamera;
use crate::error::{Error, Result};
use crate::evalbench::{evaluate_frames, FrameEval, Mask, MetricReport};
use crate::geometry::{load_obj, load_obj_with_uv, save_obj, SurfacePoint, Topology, TriMesh, UvChart};
use crate::image::{Image, LabelMap};
use crate::losses::{KeypointSet, LossWeights};
use crate::shape::{MirrorPairing, ShapeBasisSet};
use crate::Vec2;

pub const TRAJECTORY_FILE: &str = "cameras.txt";
pub const KEYPOINTS_FILE: &str = "keypoints.txt";
pub const BASIS_MANIFEST: &str = "bases.txt";
pub const PROBLEM_MANIFEST: &str = "manifest.txt";

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn base_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Non-empty, comment-stripped lines with their 1-based line numbers.
fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let fields: Vec<&str> = raw.split('#').next().unwrap_or("").split_whitespace().collect();
        (!fields.is_empty()).then_some((i + 1, fields))
    })
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::parse(path, line, format!("malformed value `{s}`")))
}

fn expect_len(path: &Path, line: usize, fields: &[&str], n: usize) -> Result<()> {
    if fields.len() != n {
        return Err(Error::parse(path, line, format!("expected {n} fields, got {}", fields.len())));
    }
    Ok(())
}

/// One camera per line: `s tx ty qw qx qy qz`, canonicalised.
pub fn trajectory_to_text(cameras: &[WeakPerspectiveCamera]) -> String {
    let mut out = String::new();
    for cam in cameras {
        let p = cam.canonical().params();
        let line: Vec<String> = p.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn parse_trajectory(text: &str, name: &Path) -> Result<Vec<WeakPerspectiveCamera>> {
    records(text)
        .map(|(line, f)| {
            expect_len(name, line, &f, 7)?;
            let p: Vec<f64> = f.iter().map(|s| field(name, line, s)).collect::<Result<_>>()?;
            WeakPerspectiveCamera::from_params(&p).map_err(|e| Error::parse(name, line, e.to_string()))
        })
        .collect()
}

pub fn save_trajectory(path: impl AsRef<Path>, cameras: &[WeakPerspectiveCamera]) -> Result<()> {
    write_text(path.as_ref(), &trajectory_to_text(cameras))
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<Vec<WeakPerspectiveCamera>> {
    let path = path.as_ref();
    parse_trajectory(&read_text(path)?, path)
}

/// One keypoint per line: `frame index x y visible` with `visible` 0 or 1.
pub fn keypoints_to_text(sets: &[KeypointSet]) -> String {
    let mut out = String::new();
    for (f, set) in sets.iter().enumerate() {
        for (i, (p, v)) in set.points.iter().zip(&set.visible).enumerate() {
            let _ = writeln!(out, "{f} {i} {} {} {}", p.x, p.y, *v as u8);
        }
    }
    out
}

/// Parses a keypoint list for `num_frames` frames. Every frame must list
/// the same keypoint indices `0..K` exactly once.
pub fn parse_keypoints(text: &str, name: &Path, num_frames: usize) -> Result<Vec<KeypointSet>> {
    let mut entries: Vec<Vec<Option<(Vec2, bool)>>> = vec![Vec::new(); num_frames];
    for (line, f) in records(text) {
        expect_len(name, line, &f, 5)?;
        let frame: usize = field(name, line, f[0])?;
        let index: usize = field(name, line, f[1])?;
        let (x, y): (f64, f64) = (field(name, line, f[2])?, field(name, line, f[3])?);
        let visible = match f[4] {
            "0" => false,
            "1" => true,
            other => return Err(Error::parse(name, line, format!("visibility must be 0 or 1, got `{other}`"))),
        };
        let slots = entries
            .get_mut(frame)
            .ok_or_else(|| Error::parse(name, line, format!("frame {frame} out of range ({num_frames} frames)")))?;
        if slots.len() <= index {
            slots.resize(index + 1, None);
        }
        if slots[index].replace((Vec2::new(x, y), visible)).is_some() {
            return Err(Error::parse(name, line, format!("keypoint {index} of frame {frame} listed twice")));
        }
    }
    let k = entries.first().map_or(0, Vec::len);
    entries
        .into_iter()
        .enumerate()
        .map(|(frame, slots)| {
            if slots.len() != k || slots.iter().any(Option::is_none) {
                return Err(Error::parse(name, 0, format!("frame {frame} does not list keypoints 0..{k}")));
            }
            let (points, visible) = slots.into_iter().map(|s| s.expect("checked")).unzip();
            Ok(KeypointSet { points, visible })
        })
        .collect()
}

pub fn load_keypoints(path: impl AsRef<Path>, num_frames: usize) -> Result<Vec<KeypointSet>> {
    let path = path.as_ref();
    parse_keypoints(&read_text(path)?, path, num_frames)
}

/// One surface point per line: `face b0 b1 b2`.
pub fn surface_points_to_text(points: &[SurfacePoint]) -> String {
    let mut out = String::new();
    for p in points {
        let _ = writeln!(out, "{} {} {} {}", p.face, p.bary[0], p.bary[1], p.bary[2]);
    }
    out
}

pub fn parse_surface_points(text: &str, name: &Path) -> Result<Vec<SurfacePoint>> {
    records(text)
        .map(|(line, f)| {
            expect_len(name, line, &f, 4)?;
            let face = field(name, line, f[0])?;
            let bary = [field(name, line, f[1])?, field(name, line, f[2])?, field(name, line, f[3])?];
            SurfacePoint::new(face, bary).map_err(|e| Error::parse(name, line, e.to_string()))
        })
        .collect()
}

/// Writes `basis_NNN.obj` files and a manifest holding the basis count and
/// the topology hash. Returns the manifest path.
pub fn save_basis_set(dir: impl AsRef<Path>, bases: &ShapeBasisSet, topology: &Arc<Topology>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    let mut manifest = format!("num_bases {}\ntopology_hash {:016x}\n", bases.len(), topology.hash());
    for (k, b) in bases.bases().iter().enumerate() {
        let file = format!("basis_{k:03}.obj");
        save_obj(dir.join(&file), &TriMesh::from_topology(topology.clone(), b.clone())?, None)?;
        let _ = writeln!(manifest, "basis {file}");
    }
    let path = dir.join(BASIS_MANIFEST);
    write_text(&path, &manifest)?;
    Ok(path)
}

/// Loads a basis set, checking the count and that every mesh has the
/// recorded topology.
pub fn load_basis_set(manifest: impl AsRef<Path>) -> Result<(ShapeBasisSet, Arc<Topology>)> {
    let manifest = manifest.as_ref();
    let dir = base_dir(manifest);
    let mut count = None;
    let mut hash = None;
    let mut meshes: Vec<TriMesh> = Vec::new();
    for (line, f) in records(&read_text(manifest)?) {
        expect_len(manifest, line, &f, 2)?;
        match f[0] {
            "num_bases" => count = Some(field::<usize>(manifest, line, f[1])?),
            "topology_hash" => {
                hash = Some(
                    u64::from_str_radix(f[1], 16)
                        .map_err(|_| Error::parse(manifest, line, format!("malformed hash `{}`", f[1])))?,
                )
            }
            "basis" => meshes.push(load_obj(dir.join(f[1]))?),
            other => return Err(Error::parse(manifest, line, format!("unknown key `{other}`"))),
        }
    }
    let count = count.ok_or_else(|| Error::parse(manifest, 0, "missing `num_bases`"))?;
    if count != meshes.len() {
        return Err(Error::parse(manifest, 0, format!("num_bases {count} but {} basis files", meshes.len())));
    }
    let first = meshes.first().ok_or_else(|| Error::parse(manifest, 0, "no basis files"))?;
    let topology = first.topology().clone();
    for (k, m) in meshes.iter().enumerate() {
        if m.faces() != topology.faces() {
            return Err(Error::Topology(format!("basis {k} does not share the topology of basis 0")));
        }
    }
    if let Some(h) = hash {
        if h != topology.hash() {
            return Err(Error::Topology(format!(
                "topology hash {:016x} does not match the manifest's {h:016x}",
                topology.hash()
            )));
        }
    }
    let bases = ShapeBasisSet::new(meshes.into_iter().map(|m| m.vertices).collect())?;
    Ok((bases, topology))
}

/// Per-frame outputs of a reconstruction, or the ground truth in the same
/// layout: `cameras.txt`, `meshes/NNNN.obj`, `masks/NNNN.pgm` and an
/// optional `keypoints.txt`. Predicted keypoints carry the visibility of
/// the corresponding ground truth only when it is known; metrics always use
/// the ground-truth visibility.
#[derive(Debug, Clone)]
pub struct FrameSet {
    pub topology: Arc<Topology>,
    pub cameras: Vec<WeakPerspectiveCamera>,
    pub vertices: Vec<Vec<crate::Vec3>>,
    pub masks: Vec<Mask>,
    pub keypoints: Option<Vec<KeypointSet>>,
}

pub fn frame_file(dir: &str, frame: usize, ext: &str) -> String {
    format!("{dir}/{frame:04}.{ext}")
}

impl FrameSet {
    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let n = self.len();
        if self.vertices.len() != n || self.masks.len() != n {
            return Err(Error::Dimension(format!(
                "{n} cameras, {} meshes, {} masks",
                self.vertices.len(),
                self.masks.len()
            )));
        }
        create_dir(&dir.join("meshes"))?;
        create_dir(&dir.join("masks"))?;
        save_trajectory(dir.join(TRAJECTORY_FILE), &self.cameras)?;
        for k in 0..n {
            let mesh = TriMesh::from_topology(self.topology.clone(), self.vertices[k].clone())?;
            save_obj(dir.join(frame_file("meshes", k, "obj")), &mesh, None)?;
            self.masks[k].to_image().write_pnm(dir.join(frame_file("masks", k, "pgm")))?;
        }
        if let Some(kp) = &self.keypoints {
            write_text(&dir.join(KEYPOINTS_FILE), &keypoints_to_text(kp))?;
        }
        Ok(())
    }

    /// Loads a frame set; the frame count comes from the camera file.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let cameras = load_trajectory(dir.join(TRAJECTORY_FILE))?;
        let n = cameras.len();
        let mut topology: Option<Arc<Topology>> = None;
        let mut vertices = Vec::with_capacity(n);
        let mut masks = Vec::with_capacity(n);
        for k in 0..n {
            let path = dir.join(frame_file("meshes", k, "obj"));
            let mesh = load_obj(&path)?;
            match &topology {
                None => topology = Some(mesh.topology().clone()),
                Some(t) if t.faces() != mesh.faces() => {
                    return Err(Error::Topology(format!("{} does not share the topology of frame 0", path.display())))
                }
                Some(_) => {}
            }
            vertices.push(mesh.vertices);
            masks.push(Mask::from_image(&Image::read_pnm(dir.join(frame_file("masks", k, "pgm")))?, 0.5));
        }
        let topology = topology.ok_or_else(|| Error::parse(dir.join(TRAJECTORY_FILE), 0, "no frames"))?;
        let kp_path = dir.join(KEYPOINTS_FILE);
        let keypoints = if kp_path.exists() { Some(load_keypoints(&kp_path, n)?) } else { None };
        Ok(Self {
            topology,
            cameras,
            vertices,
            masks,
            keypoints,
        })
    }
}

/// Scores a prediction against ground truth of the same frame count.
/// PCK is reported when both sides carry keypoints and chamfer when the
/// meshes are compared.
pub fn evaluate_sets(pred: &FrameSet, gt: &FrameSet) -> Result<MetricReport> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!("{} predicted frames for {} ground-truth frames", pred.len(), gt.len())));
    }
    let evals: Vec<FrameEval> = (0..gt.len())
        .map(|k| FrameEval {
            pred_mask: &pred.masks[k],
            gt_mask: &gt.masks[k],
            pred_keypoints: pred.keypoints.as_ref().map(|s| s[k].points.as_slice()),
            gt_keypoints: gt.keypoints.as_ref().map(|s| &s[k]),
            pred_vertices: Some(&pred.vertices[k]),
            gt_vertices: Some(&gt.vertices[k]),
        })
        .collect();
    evaluate_frames(&evals)
}

/// Where a problem lives on disk.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProblemFiles {
    pub template: String,
    pub texture_resolution: (usize, usize),
    pub bases: String,
    pub mirror_axis: Option<usize>,
    pub num_parts: usize,
    pub keypoints: Option<String>,
    pub keypoints3d: Option<String>,
    pub weights: Option<String>,
    pub mode: Option<String>,
    /// Directory with the ground truth as a [`FrameSet`].
    pub ground_truth: Option<String>,
    /// `(image, mask, parts)` per frame.
    pub frames: Vec<(String, String, String)>,
}

impl ProblemFiles {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "template {}", self.template);
        let _ = writeln!(out, "texture_resolution {} {}", self.texture_resolution.0, self.texture_resolution.1);
        let _ = writeln!(out, "bases {}", self.bases);
        if let Some(a) = self.mirror_axis {
            let _ = writeln!(out, "mirror_axis {a}");
        }
        let _ = writeln!(out, "num_parts {}", self.num_parts);
        for (key, value) in [
            ("keypoints", &self.keypoints),
            ("keypoints3d", &self.keypoints3d),
            ("weights", &self.weights),
            ("mode", &self.mode),
            ("ground_truth", &self.ground_truth),
        ] {
            if let Some(v) = value {
                let _ = writeln!(out, "{key} {v}");
            }
        }
        for (image, mask, parts) in &self.frames {
            let _ = writeln!(out, "frame {image} {mask} {parts}");
        }
        out
    }

    pub fn parse(text: &str, name: &Path) -> Result<Self> {
        let mut out = ProblemFiles::default();
        let mut seen_template = false;
        let mut seen_bases = false;
        for (line, f) in records(text) {
            let one = |f: &[&str]| -> Result<String> {
                expect_len(name, line, f, 2)?;
                Ok(f[1].to_string())
            };
            match f[0] {
                "template" => {
                    out.template = one(&f)?;
                    seen_template = true;
                }
                "texture_resolution" => {
                    expect_len(name, line, &f, 3)?;
                    out.texture_resolution = (field(name, line, f[1])?, field(name, line, f[2])?);
                }
                "bases" => {
                    out.bases = one(&f)?;
                    seen_bases = true;
                }
                "mirror_axis" => out.mirror_axis = Some(field(name, line, &one(&f)?)?),
                "num_parts" => out.num_parts = field(name, line, &one(&f)?)?,
                "keypoints" => out.keypoints = Some(one(&f)?),
                "keypoints3d" => out.keypoints3d = Some(one(&f)?),
                "weights" => out.weights = Some(one(&f)?),
                "mode" => out.mode = Some(one(&f)?),
                "ground_truth" => out.ground_truth = Some(one(&f)?),
                "frame" => {
                    expect_len(name, line, &f, 4)?;
                    out.frames.push((f[1].to_string(), f[2].to_string(), f[3].to_string()));
                }
                other => return Err(Error::parse(name, line, format!("unknown key `{other}`"))),
            }
        }
        if !seen_template || !seen_bases {
            return Err(Error::parse(name, 0, "manifest needs `template` and `bases` entries"));
        }
        if out.texture_resolution.0 == 0 || out.texture_resolution.1 == 0 {
            return Err(Error::parse(name, 0, "manifest needs a positive `texture_resolution`"));
        }
        Ok(out)
    }
}

/// A problem loaded from a manifest, with the location of its ground truth.
#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub problem: VideoProblem,
    pub ground_truth: Option<PathBuf>,
}

/// Writes a problem directory: `frames/`, `masks/`, `parts/`, the template
/// with its chart, the basis set, keypoint files, the weights and the
/// manifest. `template` supplies the chart's rest positions and the mirror
/// plane is recorded by axis. Returns the manifest path.
pub fn save_problem(
    dir: impl AsRef<Path>,
    problem: &VideoProblem,
    template: &[crate::Vec3],
    mirror_axis: Option<usize>,
    ground_truth: Option<&FrameSet>,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    problem.validate()?;
    for sub in ["frames", "masks", "parts"] {
        create_dir(&dir.join(sub))?;
    }
    let mesh = TriMesh::from_topology(problem.topology.clone(), template.to_vec())?;
    save_obj(dir.join("template.obj"), &mesh, Some(&problem.chart))?;
    save_basis_set(dir.join("bases"), &problem.bases, &problem.topology)?;
    write_text(&dir.join("weights.txt"), &problem.weights.to_config())?;
    let mut files = ProblemFiles {
        template: "template.obj".into(),
        texture_resolution: (problem.chart.height(), problem.chart.width()),
        bases: format!("bases/{BASIS_MANIFEST}"),
        mirror_axis,
        num_parts: problem.num_parts,
        weights: Some("weights.txt".into()),
        mode: Some(problem.mode.to_string()),
        ..ProblemFiles::default()
    };
    if let Some(kp) = &problem.keypoints {
        write_text(&dir.join(KEYPOINTS_FILE), &keypoints_to_text(kp))?;
        files.keypoints = Some(KEYPOINTS_FILE.into());
    }
    if let Some(k3) = &problem.keypoints3d {
        write_text(&dir.join("keypoints3d.txt"), &surface_points_to_text(k3))?;
        files.keypoints3d = Some("keypoints3d.txt".into());
    }
    if let Some(gt) = ground_truth {
        gt.save(dir.join("gt"))?;
        files.ground_truth = Some("gt".into());
    }
    for k in 0..problem.num_frames() {
        let entry = (frame_file("frames", k, "ppm"), frame_file("masks", k, "pgm"), frame_file("parts", k, "pgm"));
        problem.frames[k].write_pnm(dir.join(&entry.0))?;
        problem.masks[k].write_pnm(dir.join(&entry.1))?;
        problem.parts[k].write_pgm(dir.join(&entry.2))?;
        files.frames.push(entry);
    }
    let path = dir.join(PROBLEM_MANIFEST);
    write_text(&path, &files.to_text())?;
    Ok(path)
}

pub fn load_problem(manifest: impl AsRef<Path>) -> Result<LoadedProblem> {
    let manifest = manifest.as_ref();
    let files = ProblemFiles::parse(&read_text(manifest)?, manifest)?;
    let dir = base_dir(manifest);
    let (template, face_uvs) = load_obj_with_uv(dir.join(&files.template))?;
    let face_uvs = face_uvs.ok_or_else(|| {
        Error::parse(dir.join(&files.template), 0, "the template needs texture coordinates on every face")
    })?;
    let chart = UvChart::new(face_uvs, files.texture_resolution.0, files.texture_resolution.1)?;
    let (bases, topology) = load_basis_set(dir.join(&files.bases))?;
    if topology.faces() != template.faces() {
        return Err(Error::Topology("the basis set does not share the template's topology".into()));
    }
    let mirror = files
        .mirror_axis
        .map(|axis| MirrorPairing::from_positions(&template.vertices, axis, 1e-9))
        .transpose()?;
    let mut frames = Vec::with_capacity(files.frames.len());
    let mut masks = Vec::with_capacity(files.frames.len());
    let mut parts = Vec::with_capacity(files.frames.len());
    for (image, mask, part) in &files.frames {
        frames.push(Image::read_pnm(dir.join(image))?);
        masks.push(Image::read_pnm(dir.join(mask))?);
        parts.push(LabelMap::read_pgm(dir.join(part))?);
    }
    let n = frames.len();
    let keypoints = files.keypoints.as_ref().map(|p| load_keypoints(dir.join(p), n)).transpose()?;
    let keypoints3d = files
        .keypoints3d
        .as_ref()
        .map(|p| {
            let path = dir.join(p);
            parse_surface_points(&read_text(&path)?, &path)
        })
        .transpose()?;
    let weights = match &files.weights {
        Some(p) => LossWeights::zero().load(dir.join(p))?,
        None => LossWeights::adaptation(),
    };
    let mode = match &files.mode {
        Some(m) => m.parse().map_err(|_| Error::parse(manifest, 0, format!("unknown mode `{m}`")))?,
        None => Mode::Weak,
    };
    let problem = VideoProblem {
        frames,
        masks,
        parts,
        num_parts: files.num_parts,
        keypoints,
        keypoints3d,
        topology,
        chart,
        bases,
        mirror,
        weights,
        mode,
    };
    problem.validate()?;
    Ok(LoadedProblem {
        problem,
        ground_truth: files.ground_truth.map(|g| dir.join(g)),
    })
}
