use std::path::Path;

use crate::error::{Error, Result};

/// Weights of every objective term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub silhouette: f64,
    pub texture: f64,
    pub laplacian: f64,
    pub arap: f64,
    pub keypoint: f64,
    pub part: f64,
    pub texture_swap: f64,
    pub base_swap: f64,
}

pub const WEIGHT_KEYS: [&str; 8] = [
    "silhouette",
    "texture",
    "laplacian",
    "arap",
    "keypoint",
    "part",
    "texture_swap",
    "base_swap",
];

impl Default for LossWeights {
    fn default() -> Self {
        Self::adaptation()
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            silhouette: 0.0,
            texture: 0.0,
            laplacian: 0.0,
            arap: 0.0,
            keypoint: 0.0,
            part: 0.0,
            texture_swap: 0.0,
            base_swap: 0.0,
        }
    }

    /// Online-adaptation weights.
    pub fn adaptation() -> Self {
        Self {
            silhouette: 0.1,
            texture: 0.5,
            laplacian: 0.0006,
            arap: 2.0,
            keypoint: 0.0,
            part: 1.0,
            texture_swap: 2.0,
            base_swap: 1.0,
        }
    }

    /// Single-image reconstruction weights (mask, texture, smoothness,
    /// keypoint, ARAP).
    pub fn image_stage() -> Self {
        Self {
            silhouette: 3.0,
            texture: 3.0,
            laplacian: 0.0008,
            arap: 10.0,
            keypoint: 5.0,
            ..Self::zero()
        }
    }

    /// Zeroes the three cross-frame invariance terms.
    pub fn without_invariance(self) -> Self {
        Self {
            part: 0.0,
            texture_swap: 0.0,
            base_swap: 0.0,
            ..self
        }
    }

    fn slot(&mut self, key: &str) -> Result<&mut f64> {
        Ok(match key {
            "silhouette" | "mask" => &mut self.silhouette,
            "texture" => &mut self.texture,
            "laplacian" => &mut self.laplacian,
            "arap" => &mut self.arap,
            "keypoint" => &mut self.keypoint,
            "part" | "part_correspondence" => &mut self.part,
            "texture_swap" => &mut self.texture_swap,
            "base_swap" => &mut self.base_swap,
            other => return Err(Error::UnknownWeight(other.to_string())),
        })
    }

    pub fn get(&self, key: &str) -> Result<f64> {
        let mut copy = *self;
        copy.slot(key).map(|v| *v)
    }

    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::InvalidArgument(format!("weight `{key}` must be finite and non-negative, got {value}")));
        }
        *self.slot(key)? = value;
        Ok(())
    }

    /// Applies flat `key = value` lines (`#` starts a comment) on top of
    /// `self`.
    pub fn parse_overrides(self, text: &str) -> Result<Self> {
        self.parse_named(text, Path::new("weights"))
    }

    fn parse_named(mut self, text: &str, name: &Path) -> Result<Self> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(name, lineno + 1, format!("expected key = value, got `{line}`")))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::parse(name, lineno + 1, format!("malformed number `{}`", value.trim())))?;
            self.set(key.trim(), value)?;
        }
        Ok(self)
    }

    pub fn load(self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.parse_named(&text, path)
    }

    pub fn to_config(&self) -> String {
        WEIGHT_KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("known key")))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let a = LossWeights::adaptation();
        assert_eq!(
            [a.silhouette, a.texture, a.laplacian, a.arap, a.texture_swap, a.part, a.base_swap],
            [0.1, 0.5, 0.0006, 2.0, 2.0, 1.0, 1.0]
        );
        let s = LossWeights::image_stage();
        assert_eq!([s.silhouette, s.texture, s.laplacian, s.keypoint, s.arap], [3.0, 3.0, 0.0008, 5.0, 10.0]);
        let off = a.without_invariance();
        assert_eq!([off.part, off.texture_swap, off.base_swap], [0.0; 3]);
        assert_eq!(off.arap, 2.0);
    }

    #[test]
    fn config_round_trip_and_errors() {
        let w = LossWeights::zero().parse_overrides("# test\narap = 3.5\nmask=1 # alias\n\n").unwrap();
        assert_eq!(w.arap, 3.5);
        assert_eq!(w.silhouette, 1.0);
        let back = LossWeights::zero().parse_overrides(&w.to_config()).unwrap();
        assert_eq!(back, w);
        assert!(matches!(
            LossWeights::zero().parse_overrides("lpips = 1"),
            Err(Error::UnknownWeight(k)) if k == "lpips"
        ));
        assert!(LossWeights::zero().parse_overrides("arap 1").is_err());
        assert!(LossWeights::zero().parse_overrides("arap = -1").is_err());
    }
}
