use std::fmt;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An "affordance@object" label such as `sweep@broom`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Category(String);

impl Category {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut parts = s.split('@');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(o), None) if !a.is_empty() && !o.is_empty() => Ok(Self(s.to_string())),
            _ => Err(Error::MalformedRecord {
                line: 0,
                reason: format!("category {s:?} is not of the form affordance@object"),
            }),
        }
    }

    pub fn affordance(&self) -> &str {
        self.0.split('@').next().unwrap_or_default()
    }

    pub fn object(&self) -> &str {
        self.0.split('@').nth(1).unwrap_or_default()
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for Category {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Self::parse(&s)
    }
}

impl From<Category> for String {
    fn from(c: Category) -> String {
        c.0
    }
}

/// One image, one audio clip and the two region masks.
///
/// `image` is H×W×3 in `[0, 1]`; masks are H×W with values in `{0, 1}`.
/// A missing dependency annotation is stored as an all-zero `mask_dep`
/// with `has_dep = false` so every sample has the same tensor layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Array3<f32>,
    pub audio: Vec<f32>,
    pub sample_rate: u32,
    pub mask_func: Array2<u8>,
    pub mask_dep: Array2<u8>,
    pub category: Category,
    pub has_dep: bool,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.image.dim().0
    }

    pub fn width(&self) -> usize {
        self.image.dim().1
    }

    pub fn audio_seconds(&self) -> f64 {
        self.audio.len() as f64 / self.sample_rate as f64
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w, c) = self.image.dim();
        if c != 3 {
            return Err(Error::BadShape(format!("image has {c} channels, expected 3")));
        }
        if self.mask_func.dim() != (h, w) || self.mask_dep.dim() != (h, w) {
            return Err(Error::ShapeMismatch(format!(
                "masks {:?}/{:?} vs image {h}x{w}",
                self.mask_func.dim(),
                self.mask_dep.dim()
            )));
        }
        if self.mask_func.iter().chain(self.mask_dep.iter()).any(|&v| v > 1) {
            return Err(Error::BadShape("mask values outside {0,1}".into()));
        }
        if !self.has_dep && self.mask_dep.iter().any(|&v| v != 0) {
            return Err(Error::BadShape(
                "has_dep is false but the dependency mask is not empty".into(),
            ));
        }
        if self.audio.is_empty() {
            return Err(Error::BadShape("empty audio".into()));
        }
        Ok(())
    }
}
