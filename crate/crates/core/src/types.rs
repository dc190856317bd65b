//! Domain types shared by every pipeline stage.
//!
//! All of these are immutable once constructed, so they can be shared
//! freely across worker threads.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Inputs with a Euclidean norm below this are rejected by [`unit_normalize`].
pub const MIN_NORM: f64 = 1e-12;

/// Tolerance used when checking that a stored embedding is unit length.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Decoded 8-bit raster image, row-major, channels interleaved.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    height: u32,
    width: u32,
    channels: u8,
    data: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(height: u32, width: u32, channels: u8, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!(
                "expected 1 or 3 channels, got {channels}"
            )));
        }
        let expected = height as usize * width as usize * channels as usize;
        if data.len() != expected {
            return Err(Error::InvalidImage(format!(
                "data holds {} bytes, {width}x{height}x{channels} needs {expected}",
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

    /// Image filled with a single pixel value.
    pub fn filled(height: u32, width: u32, pixel: &[u8]) -> Result<Self> {
        let n = height as usize * width as usize;
        let data = pixel.iter().copied().cycle().take(n * pixel.len()).collect();
        Self::new(height, width, pixel.len() as u8, data)
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.height as usize * self.width as usize
    }

    /// Channel values of the pixel at (`row`, `col`).
    pub fn pixel(&self, row: u32, col: u32) -> &[u8] {
        let c = self.channels as usize;
        let start = (row as usize * self.width as usize + col as usize) * c;
        &self.data[start..start + c]
    }

    /// Iterator over all pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = &[u8]> {
        self.data.chunks_exact(self.channels as usize)
    }

    /// SHA-256 over the dimensions and every data byte.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(b"image\0");
        hasher.update(self.height.to_le_bytes());
        hasher.update(self.width.to_le_bytes());
        hasher.update([self.channels]);
        hasher.update(&self.data);
        hasher.finalize().into()
    }
}

impl fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageBuffer")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

/// Integer pixel rectangle `[x, y, w, h]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BoundingBox {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    /// Box covering a whole `width` x `height` image.
    pub const fn full(width: u32, height: u32) -> Self {
        Self::new(0, 0, width, height)
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn as_array(&self) -> [u32; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

impl From<[u32; 4]> for BoundingBox {
    fn from([x, y, w, h]: [u32; 4]) -> Self {
        Self::new(x, y, w, h)
    }
}

/// True iff `bbox` has positive area and lies inside a `width` x `height` image.
pub fn validate_box(bbox: &BoundingBox, width: u32, height: u32) -> bool {
    bbox.w >= 1
        && bbox.h >= 1
        && bbox.x as u64 + bbox.w as u64 <= width as u64
        && bbox.y as u64 + bbox.h as u64 <= height as u64
}

/// Unit-norm vector in the joint image-text space.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Wraps coefficients that are already unit length.
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::ZeroNorm(0.0));
        }
        let norm = l2_norm(&values);
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::Schema(format!("embedding norm {norm} is not 1")));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }
}

pub(crate) fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Scales `values` to unit Euclidean norm.
pub fn unit_normalize(values: &[f64]) -> Result<EmbeddingVector> {
    let norm = l2_norm(values);
    if values.is_empty() || !norm.is_finite() || norm < MIN_NORM {
        return Err(Error::ZeroNorm(norm));
    }
    Ok(EmbeddingVector(values.iter().map(|v| v / norm).collect()))
}

/// Product category, e.g. `bottle`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "CategoryRepr", into = "CategoryRepr")]
pub struct CategoryId {
    name: String,
    display_name: String,
}

#[derive(Serialize, Deserialize)]
struct CategoryRepr {
    name: String,
    #[serde(default)]
    display_name: Option<String>,
}

impl TryFrom<CategoryRepr> for CategoryId {
    type Error = Error;

    fn try_from(repr: CategoryRepr) -> Result<Self> {
        match repr.display_name {
            Some(display) => Self::with_display_name(repr.name, display),
            None => Self::new(repr.name),
        }
    }
}

impl From<CategoryId> for CategoryRepr {
    fn from(id: CategoryId) -> Self {
        CategoryRepr {
            name: id.name,
            display_name: Some(id.display_name),
        }
    }
}

impl CategoryId {
    /// Validates `name`; the display name replaces underscores with spaces.
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        let display = name.replace('_', " ");
        Self::with_display_name(name, display)
    }

    pub fn with_display_name(name: impl Into<String>, display_name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        let valid = !name.is_empty()
            && !name.contains(['/', '\\'])
            && name != "."
            && name != ".."
            && !name.chars().any(|c| c.is_whitespace() || c.is_uppercase() || c.is_control());
        if !valid {
            return Err(Error::InvalidCategory(name));
        }
        Ok(Self {
            name,
            display_name: display_name.into(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn display_name(&self) -> &str {
        &self.display_name
    }
}

impl fmt::Display for CategoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomaly,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomaly => "anomaly",
        }
    }

    pub fn is_anomaly(&self) -> bool {
        matches!(self, Label::Anomaly)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn validate_box_examples() {
        assert!(validate_box(&BoundingBox::new(0, 0, 4, 4), 4, 4));
        assert!(!validate_box(&BoundingBox::new(3, 3, 2, 2), 4, 4));
        assert!(!validate_box(&BoundingBox::new(1, 1, 0, 2), 4, 4));
    }

    #[test]
    fn validate_box_matches_inequalities_exhaustively() {
        for width in 1..=5u32 {
            for height in 1..=5u32 {
                for x in 0..=6 {
                    for y in 0..=6 {
                        for w in 0..=6 {
                            for h in 0..=6 {
                                let expected = w >= 1 && h >= 1 && x + w <= width && y + h <= height;
                                let b = BoundingBox::new(x, y, w, h);
                                assert_eq!(validate_box(&b, width, height), expected, "{b:?}");
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn validate_box_does_not_overflow() {
        assert!(!validate_box(&BoundingBox::new(u32::MAX, 0, 2, 1), 4, 4));
    }

    #[test]
    fn unit_normalize_examples() {
        let v = unit_normalize(&[3.0, 4.0]).unwrap();
        assert_eq!(v.values(), &[0.6, 0.8]);
        assert!(matches!(unit_normalize(&[0.0, 0.0]), Err(Error::ZeroNorm(_))));
        assert!(matches!(unit_normalize(&[]), Err(Error::ZeroNorm(_))));
        // 1/sqrt(2) to 16 digits
        let half_sqrt2 = 0.707_106_781_186_547_5;
        let v = unit_normalize(&[1.0, 1.0]).unwrap();
        for c in v.values() {
            assert!((c - half_sqrt2).abs() < 1e-6);
        }
    }

    #[test]
    fn from_unit_rejects_non_unit() {
        assert!(EmbeddingVector::from_unit(vec![0.6, 0.8]).is_ok());
        assert!(EmbeddingVector::from_unit(vec![3.0, 4.0]).is_err());
        assert!(EmbeddingVector::from_unit(vec![]).is_err());
    }

    #[test]
    fn image_buffer_validation() {
        assert!(ImageBuffer::new(2, 2, 3, vec![0; 12]).is_ok());
        assert!(ImageBuffer::new(2, 2, 3, vec![0; 11]).is_err());
        assert!(ImageBuffer::new(0, 2, 1, vec![]).is_err());
        assert!(ImageBuffer::new(1, 1, 2, vec![0; 2]).is_err());
    }

    #[test]
    fn content_hash_covers_dims_and_bytes() {
        let a = ImageBuffer::new(1, 4, 1, vec![1, 2, 3, 4]).unwrap();
        let b = ImageBuffer::new(2, 2, 1, vec![1, 2, 3, 4]).unwrap();
        let c = ImageBuffer::new(1, 4, 1, vec![1, 2, 3, 5]).unwrap();
        assert_ne!(a.content_hash(), b.content_hash());
        assert_ne!(a.content_hash(), c.content_hash());
        assert_eq!(a.content_hash(), a.clone().content_hash());
    }

    #[test]
    fn category_validation() {
        assert!(CategoryId::new("bottle").is_ok());
        assert_eq!(CategoryId::new("metal_nut").unwrap().display_name(), "metal nut");
        for bad in ["", "a/b", "a\\b", "Bottle", "two words", ".."] {
            assert!(CategoryId::new(bad).is_err(), "{bad:?}");
        }
    }

    proptest! {
        #[test]
        fn normalize_is_scale_invariant(
            v in prop::collection::vec(-100.0f64..100.0, 1..16),
            k in 1e-3f64..1e3,
        ) {
            prop_assume!(l2_norm(&v) > 1e-6);
            let scaled: Vec<f64> = v.iter().map(|x| x * k).collect();
            let a = unit_normalize(&v).unwrap();
            let b = unit_normalize(&scaled).unwrap();
            prop_assert!((a.norm() - 1.0).abs() < 1e-9);
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
