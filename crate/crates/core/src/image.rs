//! Dense float images, label maps, binary PNM IO and bilinear sampling.
//!
//! Image-plane points use normalised device coordinates: `x` grows to the
//! right, `y` grows upwards and both span `[-1, 1]` across the image. The
//! centre of pixel `(row, col)` sits at
//! `((col + 0.5) / W * 2 - 1, 1 - (row + 0.5) / H * 2)`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::Vec2;

/// Row-major `H x W x C` image with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, value: &[f64]) -> Self {
        let data = value.iter().copied().cycle().take(height * width * value.len()).collect();
        Self {
            height,
            width,
            channels: value.len(),
            data,
        }
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for k in 0..channels {
                    data.push(f(r, c, k));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        self.data[(row * self.width + col) * self.channels + ch] = value;
    }

    /// Channels of the pixel with flat index `row * W + col`.
    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn pixel_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn check_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "image shapes differ: {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )))
        }
    }

    /// Multiplies every channel by a single-channel mask of the same size.
    pub fn masked(&self, mask: &Image) -> Result<Image> {
        if mask.channels != 1 || mask.height != self.height || mask.width != self.width {
            return Err(Error::Dimension("mask must be single-channel and match the image size".into()));
        }
        let mut out = self.clone();
        for (p, &m) in mask.data.iter().enumerate() {
            for v in out.pixel_mut(p) {
                *v *= m;
            }
        }
        Ok(out)
    }

    /// Pixelwise `value >= threshold` of channel 0.
    pub fn threshold(&self, threshold: f64) -> Vec<bool> {
        self.data.iter().step_by(self.channels.max(1)).map(|&v| v >= threshold).collect()
    }

    pub fn from_binary(height: usize, width: usize, mask: &[bool]) -> Result<Image> {
        Image::from_data(height, width, 1, mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
    }

    /// Reads a binary PGM (P5, one channel) or PPM (P6, three channels)
    /// with 8-bit samples, scaled to `[0, 1]`.
    pub fn read_pnm(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (magic, height, width, raster) = parse_pnm(&bytes, path)?;
        let channels = if magic == "P5" { 1 } else { 3 };
        let data = raster.iter().map(|&b| b as f64 / 255.0).collect();
        Image::from_data(height, width, channels, data)
    }

    /// Writes P5 for one channel and P6 for three, quantising to 8 bits.
    pub fn write_pnm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let magic = match self.channels {
            1 => "P5",
            3 => "P6",
            c => return Err(Error::Dimension(format!("cannot write a {c}-channel image as PNM"))),
        };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn parse_pnm<'a>(bytes: &'a [u8], path: &Path) -> Result<(&'a str, usize, usize, &'a [u8])> {
    let mut pos = 0;
    let mut fields: Vec<&str> = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(path, 1, "truncated PNM header"));
        }
        let field = std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::parse(path, 1, "non-ASCII PNM header"))?;
        fields.push(field);
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let magic = fields[0];
    if magic != "P5" && magic != "P6" {
        return Err(Error::parse(path, 1, format!("unsupported PNM magic `{magic}`")));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::parse(path, 1, format!("malformed PNM field `{s}`")));
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(Error::parse(path, 1, format!("only 8-bit PNM is supported, maxval {maxval}")));
    }
    let channels = if magic == "P5" { 1 } else { 3 };
    let need = width * height * channels;
    if bytes.len() < pos + need {
        return Err(Error::parse(path, 1, "PNM raster is truncated"));
    }
    Ok((magic, height, width, &bytes[pos..pos + need]))
}

/// Integer label image; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: vec![0; height * width],
        }
    }

    /// Reads raw label values from a P5 file (no rescaling).
    pub fn read_pgm(path: impl AsRef<Path>) -> Result<LabelMap> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (magic, height, width, raster) = parse_pnm(&bytes, path)?;
        if magic != "P5" {
            return Err(Error::parse(path, 1, "label maps must be P5"));
        }
        Ok(LabelMap {
            height,
            width,
            labels: raster.to_vec(),
        })
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.labels);
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

pub fn pixel_center(height: usize, width: usize, row: usize, col: usize) -> Vec2 {
    Vec2::new(
        (col as f64 + 0.5) / width as f64 * 2.0 - 1.0,
        1.0 - (row as f64 + 0.5) / height as f64 * 2.0,
    )
}

/// Pixel containing an NDC point, if it lies inside the image.
pub fn ndc_to_pixel(height: usize, width: usize, p: Vec2) -> Option<(usize, usize)> {
    let col = ((p.x + 1.0) * 0.5 * width as f64).floor();
    let row = ((1.0 - p.y) * 0.5 * height as f64).floor();
    (col >= 0.0 && row >= 0.0 && (col as usize) < width && (row as usize) < height).then(|| (row as usize, col as usize))
}

/// Four-tap bilinear stencil with the derivatives of its weights w.r.t. the
/// two sampling coordinates. Coordinates outside the pixel-centre range are
/// clamped (border replication) and receive zero derivative there.
#[derive(Debug, Clone, Copy)]
pub struct Bilinear {
    pub index: [usize; 4],
    pub weight: [f64; 4],
    pub d_first: [f64; 4],
    pub d_second: [f64; 4],
}

impl Bilinear {
    /// Stencil for an NDC point; derivatives are w.r.t. `(x, y)`.
    pub fn ndc(height: usize, width: usize, p: Vec2) -> Self {
        let col = (p.x + 1.0) * 0.5 * width as f64 - 0.5;
        let row = (1.0 - p.y) * 0.5 * height as f64 - 0.5;
        Self::at(height, width, row, col, -0.5 * height as f64, 0.5 * width as f64)
    }

    /// Stencil for a texture coordinate `(u, v)` with `v` growing down the
    /// rows and texel centres at `((col + 0.5) / W, (row + 0.5) / H)`.
    pub fn uv(height: usize, width: usize, uv: Vec2) -> Self {
        let col = uv.x * width as f64 - 0.5;
        let row = uv.y * height as f64 - 0.5;
        Self::at(height, width, row, col, height as f64, width as f64)
    }

    fn at(height: usize, width: usize, row: f64, col: f64, drow: f64, dcol: f64) -> Self {
        let (r0, r1, fr, dr) = axis(row, height, drow);
        let (c0, c1, fc, dc) = axis(col, width, dcol);
        let index = [r0 * width + c0, r0 * width + c1, r1 * width + c0, r1 * width + c1];
        let weight = [(1.0 - fr) * (1.0 - fc), (1.0 - fr) * fc, fr * (1.0 - fc), fr * fc];
        // first coordinate moves columns, second moves rows
        let d_first = [-(1.0 - fr) * dc, (1.0 - fr) * dc, -fr * dc, fr * dc];
        let d_second = [-(1.0 - fc) * dr, -fc * dr, (1.0 - fc) * dr, fc * dr];
        Self {
            index,
            weight,
            d_first,
            d_second,
        }
    }

    pub fn sample(&self, img: &Image, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..4 {
            for (o, &v) in out.iter_mut().zip(img.pixel(self.index[k])) {
                *o += self.weight[k] * v;
            }
        }
    }

    pub fn sample_channel(&self, img: &Image, ch: usize) -> f64 {
        let c = img.channels();
        (0..4).map(|k| self.weight[k] * img.data()[self.index[k] * c + ch]).sum()
    }

    /// Gradient w.r.t. the sampling coordinates given the gradient w.r.t.
    /// the sampled channels.
    pub fn coord_grad(&self, img: &Image, grad_out: &[f64]) -> Vec2 {
        let mut g = Vec2::zeros();
        for k in 0..4 {
            let dot: f64 = img.pixel(self.index[k]).iter().zip(grad_out).map(|(a, b)| a * b).sum();
            g.x += self.d_first[k] * dot;
            g.y += self.d_second[k] * dot;
        }
        g
    }

    /// Accumulates the gradient w.r.t. the sampled image.
    pub fn scatter(&self, grad_img: &mut Image, grad_out: &[f64]) {
        for k in 0..4 {
            for (g, &go) in grad_img.pixel_mut(self.index[k]).iter_mut().zip(grad_out) {
                *g += self.weight[k] * go;
            }
        }
    }
}

fn axis(x: f64, n: usize, dx: f64) -> (usize, usize, f64, f64) {
    if n <= 1 {
        return (0, 0, 0.0, 0.0);
    }
    let hi = (n - 1) as f64;
    let (x, d) = if x < 0.0 {
        (0.0, 0.0)
    } else if x > hi {
        (hi, 0.0)
    } else {
        (x, dx)
    };
    let i0 = (x.floor() as usize).min(n - 2);
    (i0, i0 + 1, x - i0 as f64, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_center_and_lookup_agree() {
        for (r, c) in [(0, 0), (3, 7), (15, 15)] {
            let p = pixel_center(16, 16, r, c);
            assert_eq!(ndc_to_pixel(16, 16, p), Some((r, c)));
        }
        assert_eq!(ndc_to_pixel(16, 16, Vec2::new(1.5, 0.0)), None);
        assert_eq!(pixel_center(2, 2, 0, 0), Vec2::new(-0.5, 0.5));
    }

    #[test]
    fn bilinear_hits_pixel_centres_exactly() {
        let img = Image::from_fn(5, 7, 2, |r, c, k| (r * 10 + c) as f64 + k as f64 * 0.5);
        let mut out = [0.0; 2];
        for r in 0..5 {
            for c in 0..7 {
                Bilinear::ndc(5, 7, pixel_center(5, 7, r, c)).sample(&img, &mut out);
                assert!((out[0] - img.get(r, c, 0)).abs() < 1e-12);
                assert!((out[1] - img.get(r, c, 1)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bilinear_reproduces_linear_functions_and_clamps() {
        let f = |r: f64, c: f64| 0.3 * r - 0.2 * c + 1.0;
        let img = Image::from_fn(8, 8, 1, |r, c, _| f(r as f64, c as f64));
        let b = Bilinear::uv(8, 8, Vec2::new(0.41, 0.63));
        let expect = f(0.63 * 8.0 - 0.5, 0.41 * 8.0 - 0.5);
        assert!((b.sample_channel(&img, 0) - expect).abs() < 1e-12);
        let outside = Bilinear::uv(8, 8, Vec2::new(-0.5, 0.5));
        assert_eq!(outside.d_first, [0.0; 4]);
        assert!((outside.sample_channel(&img, 0) - f(0.5 * 8.0 - 0.5, 0.0)).abs() < 1e-12);
    }

    #[test]
    fn bilinear_coordinate_gradient_matches_differences() {
        let img = Image::from_fn(6, 9, 3, |r, c, k| ((r * 3 + c * 7 + k) as f64 * 0.37).sin());
        let w = [0.3, -1.2, 0.7];
        let eval = |p: Vec2| {
            let mut out = [0.0; 3];
            Bilinear::ndc(6, 9, p).sample(&img, &mut out);
            out.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        let p = Vec2::new(0.123, -0.377);
        let g = Bilinear::ndc(6, 9, p).coord_grad(&img, &w);
        let h = 1e-7;
        let gx = (eval(p + Vec2::new(h, 0.0)) - eval(p - Vec2::new(h, 0.0))) / (2.0 * h);
        let gy = (eval(p + Vec2::new(0.0, h)) - eval(p - Vec2::new(0.0, h))) / (2.0 * h);
        assert!((g.x - gx).abs() < 1e-6 && (g.y - gy).abs() < 1e-6);
    }

    #[test]
    fn pnm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = Image::from_fn(4, 5, 3, |r, c, k| ((r + c + k) % 4) as f64 / 3.0);
        rgb.write_pnm(dir.path().join("a.ppm")).unwrap();
        let back = Image::read_pnm(dir.path().join("a.ppm")).unwrap();
        assert!(back.same_shape(&rgb));
        for (a, b) in back.data().iter().zip(rgb.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        let labels = LabelMap {
            height: 2,
            width: 3,
            labels: vec![0, 1, 2, 3, 4, 5],
        };
        labels.write_pgm(dir.path().join("l.pgm")).unwrap();
        assert_eq!(LabelMap::read_pgm(dir.path().join("l.pgm")).unwrap(), labels);
        std::fs::write(dir.path().join("bad.ppm"), b"P3\n1 1\n255\n0 0 0\n").unwrap();
        assert!(matches!(Image::read_pnm(dir.path().join("bad.ppm")), Err(Error::Parse { .. })));
    }
}
