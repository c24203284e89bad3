use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Metrics of one frame. Keypoint and 3D metrics are absent when the frame
/// has no visible keypoints or no ground-truth mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMetrics {
    pub frame: usize,
    pub iou: f64,
    pub contour: f64,
    pub pck: Option<f64>,
    pub chamfer: Option<f64>,
}

/// Means over frames; optional metrics average over the frames that have
/// them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanMetrics {
    pub iou: f64,
    pub contour: f64,
    pub pck: Option<f64>,
    pub chamfer: Option<f64>,
}

/// Line-oriented metric report: `frame <k> <J> <F> <PCK> <chamfer>` per
/// frame, then `mean <J> <F> <PCK> <chamfer>`. Missing values print as `-`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub frames: Vec<FrameMetrics>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl MetricReport {
    pub fn mean(&self) -> MeanMetrics {
        MeanMetrics {
            iou: mean_of(self.frames.iter().map(|f| f.iou)).unwrap_or(f64::NAN),
            contour: mean_of(self.frames.iter().map(|f| f.contour)).unwrap_or(f64::NAN),
            pck: mean_of(self.frames.iter().filter_map(|f| f.pck)),
            chamfer: mean_of(self.frames.iter().filter_map(|f| f.chamfer)),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for f in &self.frames {
            writeln!(
                s,
                "frame {} {:.6} {:.6} {} {}",
                f.frame,
                f.iou,
                f.contour,
                fmt_opt(f.pck),
                fmt_opt(f.chamfer)
            )
            .expect("write to string");
        }
        let m = self.mean();
        writeln!(s, "mean {:.6} {:.6} {} {}", m.iou, m.contour, fmt_opt(m.pck), fmt_opt(m.chamfer))
            .expect("write to string");
        s
    }

    /// Parses the frame lines of a report; the mean line is checked for
    /// shape only, since it is recomputed from the frames.
    pub fn parse(text: &str, name: &Path) -> Result<Self> {
        let mut frames = Vec::new();
        let mut saw_mean = false;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let tok: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|_| Error::parse(name, i + 1, format!("malformed number `{s}`")))
            };
            let opt = |s: &str| -> Result<Option<f64>> { if s == "-" { Ok(None) } else { num(s).map(Some) } };
            match tok.first().copied() {
                Some("frame") if tok.len() == 6 => {
                    let frame = tok[1]
                        .parse()
                        .map_err(|_| Error::parse(name, i + 1, format!("malformed frame index `{}`", tok[1])))?;
                    frames.push(FrameMetrics {
                        frame,
                        iou: num(tok[2])?,
                        contour: num(tok[3])?,
                        pck: opt(tok[4])?,
                        chamfer: opt(tok[5])?,
                    });
                }
                Some("mean") if tok.len() == 5 => saw_mean = true,
                _ => return Err(Error::parse(name, i + 1, format!("unexpected report line `{line}`"))),
            }
        }
        if !saw_mean {
            return Err(Error::parse(name, text.lines().count(), "report has no mean line"));
        }
        Ok(Self { frames })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_means() {
        let r = MetricReport {
            frames: vec![
                FrameMetrics { frame: 0, iou: 0.9, contour: 0.8, pck: Some(1.0), chamfer: Some(0.01) },
                FrameMetrics { frame: 1, iou: 0.7, contour: 0.6, pck: None, chamfer: Some(0.03) },
            ],
        };
        let text = r.to_text();
        assert!(text.ends_with("mean 0.800000 0.700000 1.000000 0.020000\n"), "{text}");
        let back = MetricReport::parse(&text, Path::new("r")).unwrap();
        assert_eq!(back, r);
        assert!(MetricReport::parse("frame 0 1 1 - -\n", Path::new("r")).is_err());
        assert!(MetricReport::parse("frame x 1 1 - -\nmean 1 1 - -\n", Path::new("r")).is_err());
    }
}
