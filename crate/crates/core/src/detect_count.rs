//! Detect-then-count: count `person` boxes produced by an external detector.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PERSON_LABEL: &str = "person";
pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.5;

/// Canonical ROI size of the pyramid level-assignment rule.
const CANONICAL_ROI: f64 = 224.0;
pub const DEFAULT_CANONICAL_LEVEL: i32 = 4;
pub const MIN_PYRAMID_LEVEL: i32 = 2;
pub const MAX_PYRAMID_LEVEL: i32 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// `[x1, y1, x2, y2]` in pixels.
    pub bbox: [f64; 4],
    pub label: String,
    pub score: f64,
}

impl Detection {
    pub fn width(&self) -> f64 {
        self.bbox[2] - self.bbox[0]
    }

    pub fn height(&self) -> f64 {
        self.bbox[3] - self.bbox[1]
    }

    pub fn is_person(&self) -> bool {
        self.label == PERSON_LABEL
    }

    fn check(&self) -> std::result::Result<(), String> {
        let [x1, y1, x2, y2] = self.bbox;
        if !self.bbox.iter().all(|v| v.is_finite()) {
            return Err(format!("box {:?} has non-finite coordinates", self.bbox));
        }
        if x2 <= x1 || y2 <= y1 {
            return Err(format!(
                "box ({x1}, {y1}, {x2}, {y2}) is degenerate; need x2 > x1 and y2 > y1"
            ));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(format!("score {} is outside [0, 1]", self.score));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    #[serde(rename = "id")]
    pub frame_id: String,
    pub detections: Vec<Detection>,
}

impl DetectionSet {
    pub fn validate(&self) -> Result<()> {
        for (index, det) in self.detections.iter().enumerate() {
            det.check().map_err(|msg| {
                Error::invalid(format!("frame '{}' detection {index}", self.frame_id), msg)
            })?;
        }
        Ok(())
    }
}

/// Pyramid level an ROI of size `w × h` is pooled from:
/// `⌊k0 + log2(√(w·h)/224)⌋`, clamped to levels 2..=5.
pub fn fpn_level(w: f64, h: f64, k0: i32) -> Result<i32> {
    if !(w.is_finite() && w > 0.0 && h.is_finite() && h > 0.0) {
        return Err(Error::Config(format!("ROI size must be positive, got {w}x{h}")));
    }
    let raw = (f64::from(k0) + ((w * h).sqrt() / CANONICAL_ROI).log2()).floor();
    Ok((raw.clamp(f64::from(MIN_PYRAMID_LEVEL), f64::from(MAX_PYRAMID_LEVEL))) as i32)
}

/// Number of `person` detections scoring at least `score_threshold`.
pub fn count_persons(set: &DetectionSet, score_threshold: f64) -> usize {
    set.detections
        .iter()
        .filter(|d| d.is_person() && d.score >= score_threshold)
        .count()
}

#[derive(Deserialize)]
struct DetectionFile {
    frames: Vec<DetectionSet>,
}

pub fn parse_detections(text: &str) -> std::result::Result<Vec<DetectionSet>, serde_json::Error> {
    serde_json::from_str::<DetectionFile>(text).map(|f| f.frames)
}

/// Loads a detections file; frames keep file order.
pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<DetectionSet>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    let sets = parse_detections(&text).map_err(|source| Error::Json {
        path: path.to_owned(),
        source,
    })?;
    for set in &sets {
        set.validate()?;
    }
    Ok(sets)
}
