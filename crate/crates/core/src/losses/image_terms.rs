use std::str::FromStr;

use crate::error::{Error, Result};
use crate::image::Image;

/// Soft negative IoU `1 - sum(A B) / sum(A + B - A B)`; 0 when both masks
/// are empty.
pub fn niou(a: &Image, b: &Image) -> Result<f64> {
    niou_with_grad(a, b).map(|(v, _)| v)
}

/// [`niou`] and its gradient w.r.t. `a`.
pub fn niou_with_grad(a: &Image, b: &Image) -> Result<(f64, Vec<f64>)> {
    a.check_shape(b)?;
    let (mut inter, mut union) = (0.0, 0.0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += x * y;
        union += x + y - x * y;
    }
    if union <= 0.0 {
        return Ok((0.0, vec![0.0; a.data().len()]));
    }
    let u2 = union * union;
    let grad = b
        .data()
        .iter()
        .map(|&y| -(y * union - inter * (1.0 - y)) / u2)
        .collect();
    Ok((1.0 - inter / union, grad))
}

/// Image distance used by the texture terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ImageDistance {
    /// Mean over `levels` 2x2-average-pooled scales of the mean Charbonnier
    /// penalty `sqrt(d^2 + eps^2) - eps`.
    Pyramid { levels: usize, eps: f64 },
    /// Plain mean absolute difference.
    L1,
}

impl Default for ImageDistance {
    fn default() -> Self {
        ImageDistance::Pyramid { levels: 3, eps: 1e-3 }
    }
}

impl FromStr for ImageDistance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pyramid" => Ok(ImageDistance::default()),
            "l1" => Ok(ImageDistance::L1),
            other => Err(Error::InvalidArgument(format!("unknown image distance `{other}` (pyramid|l1)"))),
        }
    }
}

impl ImageDistance {
    pub fn eval(&self, a: &Image, b: &Image) -> Result<f64> {
        self.eval_with_grad(a, b).map(|(v, _)| v)
    }

    /// Distance and its gradient w.r.t. `a`.
    pub fn eval_with_grad(&self, a: &Image, b: &Image) -> Result<(f64, Image)> {
        a.check_shape(b)?;
        match *self {
            ImageDistance::L1 => {
                let n = a.data().len().max(1) as f64;
                let mut grad = Image::new(a.height(), a.width(), a.channels());
                let mut sum = 0.0;
                for ((g, &x), &y) in grad.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
                    let d = x - y;
                    sum += d.abs();
                    *g = if d > 0.0 {
                        1.0 / n
                    } else if d < 0.0 {
                        -1.0 / n
                    } else {
                        0.0
                    };
                }
                Ok((sum / n, grad))
            }
            ImageDistance::Pyramid { levels, eps } => pyramid(a, b, levels.max(1), eps),
        }
    }
}

fn pyramid(a: &Image, b: &Image, levels: usize, eps: f64) -> Result<(f64, Image)> {
    let mut diffs = vec![diff(a, b)];
    while diffs.len() < levels {
        let last = diffs.last().expect("non-empty");
        if last.height() < 2 || last.width() < 2 {
            break;
        }
        diffs.push(pool(last));
    }
    let used = diffs.len() as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(diffs.len());
    for d in &diffs {
        let n = d.data().len().max(1) as f64;
        let mut g = Image::new(d.height(), d.width(), d.channels());
        let mut sum = 0.0;
        for (gv, &x) in g.data_mut().iter_mut().zip(d.data()) {
            let r = (x * x + eps * eps).sqrt();
            sum += r - eps;
            *gv = x / r / (n * used);
        }
        value += sum / n / used;
        grads.push(g);
    }
    // fold coarse gradients back to full resolution
    while grads.len() > 1 {
        let coarse = grads.pop().expect("len > 1");
        let fine = grads.last_mut().expect("len >= 1");
        unpool_add(&coarse, fine);
    }
    Ok((value, grads.pop().expect("one level")))
}

fn diff(a: &Image, b: &Image) -> Image {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    Image::from_data(a.height(), a.width(), a.channels(), data).expect("same shape")
}

fn pool(img: &Image) -> Image {
    let (h, w, c) = (img.height() / 2, img.width() / 2, img.channels());
    Image::from_fn(h, w, c, |r, col, k| {
        0.25 * (img.get(2 * r, 2 * col, k)
            + img.get(2 * r, 2 * col + 1, k)
            + img.get(2 * r + 1, 2 * col, k)
            + img.get(2 * r + 1, 2 * col + 1, k))
    })
}

fn unpool_add(coarse: &Image, fine: &mut Image) {
    for r in 0..coarse.height() {
        for col in 0..coarse.width() {
            for k in 0..coarse.channels() {
                let g = 0.25 * coarse.get(r, col, k);
                for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let v = fine.get(2 * r + dr, 2 * col + dc, k);
                    fine.set(2 * r + dr, 2 * col + dc, k, v + g);
                }
            }
        }
    }
}
