//! Product localization with a text-queried detector, and patch cropping.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{validate_box, BoundingBox, CategoryId, ImageBuffer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub confidence: f64,
    #[serde(default)]
    pub phrase: String,
}

impl Detection {
    pub fn new(bbox: BoundingBox, confidence: f64, phrase: impl Into<String>) -> Self {
        Self {
            bbox,
            confidence,
            phrase: phrase.into(),
        }
    }

    fn check(&self, width: u32, height: u32) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::InvalidDetection(format!(
                "confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        if !validate_box(&self.bbox, width, height) {
            return Err(Error::InvalidDetection(format!(
                "box {:?} outside {width}x{height} image",
                self.bbox.as_array()
            )));
        }
        Ok(())
    }
}

/// Text-queried object detector.
pub trait DetectorBackend: Send + Sync {
    /// Boxes for `query` in `image`. An empty list is a valid answer.
    fn detect(&self, image: &ImageBuffer, query: &str) -> Result<Vec<Detection>>;

    fn concurrency_safe(&self) -> bool {
        false
    }
}

impl<T: DetectorBackend + ?Sized> DetectorBackend for Box<T> {
    fn detect(&self, image: &ImageBuffer, query: &str) -> Result<Vec<Detection>> {
        (**self).detect(image, query)
    }

    fn concurrency_safe(&self) -> bool {
        (**self).concurrency_safe()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionConfig {
    pub confidence_threshold: f64,
    pub top_k: usize,
    pub min_area_fraction: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.25,
            top_k: 3,
            min_area_fraction: 0.01,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::Config(format!(
                "detection.confidence_threshold {} outside [0, 1]",
                self.confidence_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.min_area_fraction) {
            return Err(Error::Config(format!(
                "detection.min_area_fraction {} outside [0, 1]",
                self.min_area_fraction
            )));
        }
        if self.top_k == 0 {
            return Err(Error::Config("detection.top_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Queries `backend` with the category name and returns its detections as-is.
///
/// Fails with [`Error::InvalidDetection`] if any detection does not fit the image.
pub fn detect_objects(
    backend: &dyn DetectorBackend,
    image: &ImageBuffer,
    category: &CategoryId,
) -> Result<Vec<Detection>> {
    let detections = backend.detect(image, category.name())?;
    for d in &detections {
        d.check(image.width(), image.height())?;
    }
    Ok(detections)
}

/// Like [`detect_objects`], but boxes that overhang the image are clipped to
/// it first and boxes entirely outside are dropped.
pub fn detect_objects_clipped(
    backend: &dyn DetectorBackend,
    image: &ImageBuffer,
    category: &CategoryId,
) -> Result<Vec<Detection>> {
    let (w, h) = (image.width(), image.height());
    let mut out = Vec::new();
    for mut d in backend.detect(image, category.name())? {
        match clip_box(&d.bbox, w, h) {
            Some(b) => d.bbox = b,
            None => continue,
        }
        d.check(w, h)?;
        out.push(d);
    }
    Ok(out)
}

/// Filters by confidence and area, sorts by confidence descending (ties by
/// `(y, x, w, h)` ascending), and keeps at most `top_k` boxes.
pub fn postprocess(
    detections: &[Detection],
    config: &DetectionConfig,
    image_w: u32,
    image_h: u32,
) -> Vec<BoundingBox> {
    let min_area = config.min_area_fraction * image_w as f64 * image_h as f64;
    let mut kept: Vec<&Detection> = detections
        .iter()
        .filter(|d| d.confidence >= config.confidence_threshold)
        .filter(|d| d.bbox.area() as f64 >= min_area)
        .collect();
    kept.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap_or(Ordering::Equal)
            .then_with(|| tie_key(&a.bbox).cmp(&tie_key(&b.bbox)))
    });
    kept.into_iter().take(config.top_k).map(|d| d.bbox).collect()
}

fn tie_key(b: &BoundingBox) -> (u32, u32, u32, u32) {
    (b.y, b.x, b.w, b.h)
}

/// `image[y..y+h, x..x+w]`, all channels.
pub fn crop(image: &ImageBuffer, bbox: &BoundingBox) -> Result<ImageBuffer> {
    if !validate_box(bbox, image.width(), image.height()) {
        return Err(Error::InvalidBox {
            x: bbox.x,
            y: bbox.y,
            w: bbox.w,
            h: bbox.h,
            width: image.width(),
            height: image.height(),
        });
    }
    let c = image.channels() as usize;
    let stride = image.width() as usize * c;
    let row_len = bbox.w as usize * c;
    let mut data = Vec::with_capacity(row_len * bbox.h as usize);
    for row in bbox.y..bbox.y + bbox.h {
        let start = row as usize * stride + bbox.x as usize * c;
        data.extend_from_slice(&image.data()[start..start + row_len]);
    }
    ImageBuffer::new(bbox.h, bbox.w, image.channels(), data)
}

/// Intersection of `bbox` with the image rectangle, or `None` if empty.
pub fn clip_box(bbox: &BoundingBox, image_w: u32, image_h: u32) -> Option<BoundingBox> {
    let x1 = (bbox.x as u64 + bbox.w as u64).min(image_w as u64);
    let y1 = (bbox.y as u64 + bbox.h as u64).min(image_h as u64);
    let x0 = bbox.x as u64;
    let y0 = bbox.y as u64;
    if x1 <= x0 || y1 <= y0 {
        return None;
    }
    Some(BoundingBox::new(
        bbox.x,
        bbox.y,
        (x1 - x0) as u32,
        (y1 - y0) as u32,
    ))
}

/// Signed-coordinate box as emitted by some detectors, clamped into the image.
pub fn clamp_signed_box(x: i64, y: i64, w: i64, h: i64, image_w: u32, image_h: u32) -> Option<BoundingBox> {
    let x0 = x.max(0);
    let y0 = y.max(0);
    let x1 = x.saturating_add(w).min(image_w as i64);
    let y1 = y.saturating_add(h).min(image_h as i64);
    if x1 <= x0 || y1 <= y0 {
        return None;
    }
    Some(BoundingBox::new(
        x0 as u32,
        y0 as u32,
        (x1 - x0) as u32,
        (y1 - y0) as u32,
    ))
}
