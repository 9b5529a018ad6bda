//! Head-point annotations and the pixel/grid coordinate conventions.
//!
//! Pixel coordinates follow image practice: `x` grows rightward along
//! columns, `y` grows downward along rows, the origin is the top-left corner
//! and sub-pixel positions are allowed. A [`GridSpec`] tiles the image with
//! square cells of `stride` pixels; cell `(i, j)` (column `i`, row `j`) is
//! represented by its center `((i + 0.5)·stride, (j + 0.5)·stride)`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A position in pixel space. Serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance_squared(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn distance(self, other: Point) -> f64 {
        self.distance_squared(other).sqrt()
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Point { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// One annotated frame: image size plus the ordered head centers.
///
/// The index of a point in `points` identifies its head label for the
/// whole toolkit (posterior columns, expected counts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    #[serde(rename = "id")]
    pub frame_id: String,
    #[serde(rename = "width")]
    pub image_width: u32,
    #[serde(rename = "height")]
    pub image_height: u32,
    pub points: Vec<Point>,
}

impl FrameAnnotation {
    /// Builds a frame and checks every invariant.
    pub fn new(
        frame_id: impl Into<String>,
        image_width: u32,
        image_height: u32,
        points: Vec<Point>,
    ) -> Result<Self> {
        let frame = FrameAnnotation {
            frame_id: frame_id.into(),
            image_width,
            image_height,
            points,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn min_side(&self) -> u32 {
        self.image_width.min(self.image_height)
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = || format!("frame '{}'", self.frame_id);
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::invalid(
                ctx(),
                format!(
                    "image dimensions must be at least 1x1, got {}x{}",
                    self.image_width, self.image_height
                ),
            ));
        }
        let (w, h) = (f64::from(self.image_width), f64::from(self.image_height));
        for (index, p) in self.points.iter().enumerate() {
            let inside = p.x.is_finite()
                && p.y.is_finite()
                && (0.0..w).contains(&p.x)
                && (0.0..h).contains(&p.y);
            if !inside {
                return Err(Error::invalid(
                    ctx(),
                    format!(
                        "point {index} ({}, {}) lies outside the {}x{} image",
                        p.x, p.y, self.image_width, self.image_height
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Tiling of an image into square density cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub stride: f64,
    pub cols: usize,
    pub rows: usize,
}

impl GridSpec {
    pub fn new(stride: f64, cols: usize, rows: usize) -> Result<Self> {
        if !(stride.is_finite() && stride > 0.0) {
            return Err(Error::Config(format!(
                "stride must be a positive number, got {stride}"
            )));
        }
        if cols == 0 || rows == 0 {
            return Err(Error::Config(format!(
                "grid must have at least one cell, got {cols}x{rows}"
            )));
        }
        Ok(GridSpec { stride, cols, rows })
    }

    /// Smallest grid of the given stride that covers the frame's image.
    pub fn for_frame(frame: &FrameAnnotation, stride: f64) -> Result<Self> {
        Self::for_image(frame.image_width, frame.image_height, stride)
    }

    pub fn for_image(width: u32, height: u32, stride: f64) -> Result<Self> {
        if !(stride.is_finite() && stride > 0.0) {
            return Err(Error::Config(format!(
                "stride must be a positive number, got {stride}"
            )));
        }
        let cols = (f64::from(width) / stride).ceil() as usize;
        let rows = (f64::from(height) / stride).ceil() as usize;
        Self::new(stride, cols, rows)
    }

    /// Number of cells, `M`.
    pub fn len(&self) -> usize {
        self.cols * self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.cols + col
    }

    pub fn col_row(&self, index: usize) -> (usize, usize) {
        (index % self.cols, index / self.cols)
    }

    pub fn cell_center(&self, col: usize, row: usize) -> Point {
        Point::new(
            (col as f64 + 0.5) * self.stride,
            (row as f64 + 0.5) * self.stride,
        )
    }

    /// Centers of all cells in row-major order.
    pub fn centers(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.rows)
            .flat_map(move |row| (0..self.cols).map(move |col| self.cell_center(col, row)))
    }

    /// Pixel extent `(width, height)` covered by the grid.
    pub fn covered_extent(&self) -> (f64, f64) {
        (self.cols as f64 * self.stride, self.rows as f64 * self.stride)
    }

    /// True when the grid is exactly the one derived from this frame.
    pub fn matches_frame(&self, frame: &FrameAnnotation) -> bool {
        GridSpec::for_frame(frame, self.stride).is_ok_and(|g| g == *self)
    }
}

#[derive(Serialize, Deserialize)]
struct AnnotationFile {
    frames: Vec<RawFrame>,
}

// Dimensions are parsed as signed so negative sizes produce a targeted
// message instead of a generic type error.
#[derive(Serialize, Deserialize)]
struct RawFrame {
    id: String,
    width: i64,
    height: i64,
    points: Vec<Point>,
}

/// Parses the annotation JSON text. Frames keep file order.
pub fn parse_annotations(text: &str) -> std::result::Result<Vec<FrameAnnotation>, ParseError> {
    let file: AnnotationFile = serde_json::from_str(text).map_err(ParseError::Json)?;
    file.frames
        .into_iter()
        .enumerate()
        .map(|(index, raw)| {
            let ctx = format!("frame {index} ('{}')", raw.id);
            let dim = |v: i64, name: &str| {
                u32::try_from(v).map_err(|_| {
                    Error::invalid(ctx.clone(), format!("{name} must be a positive integer, got {v}"))
                })
            };
            let width = dim(raw.width, "width")?;
            let height = dim(raw.height, "height")?;
            FrameAnnotation::new(raw.id, width, height, raw.points).map_err(|e| match e {
                Error::Invalid { message, .. } => Error::invalid(ctx.clone(), message),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(ParseError::Invalid)
}

#[derive(Debug)]
pub enum ParseError {
    Json(serde_json::Error),
    Invalid(Error),
}

/// Loads and validates an annotation file.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<FrameAnnotation>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_annotations(&text).map_err(|e| match e {
        ParseError::Json(source) => Error::Json {
            path: path.to_owned(),
            source,
        },
        ParseError::Invalid(err) => err,
    })
}

pub fn annotations_to_json(frames: &[FrameAnnotation]) -> String {
    let file = AnnotationFile {
        frames: frames
            .iter()
            .map(|f| RawFrame {
                id: f.frame_id.clone(),
                width: i64::from(f.image_width),
                height: i64::from(f.image_height),
                points: f.points.clone(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("annotation structs always serialize")
}

pub fn save_annotations(path: impl AsRef<Path>, frames: &[FrameAnnotation]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, annotations_to_json(frames)).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

/// Regular lattice of heads, `rows × cols` points spaced `spacing` pixels
/// apart, with the first point at `(margin, margin)`.
///
/// The image is sized so that every point has at least `margin` pixels of
/// clearance on all sides.
pub fn synth_lattice(rows: usize, cols: usize, spacing: f64, margin: f64) -> Result<FrameAnnotation> {
    if rows == 0 || cols == 0 {
        return Err(Error::Config(format!(
            "lattice needs at least one row and column, got {rows}x{cols}"
        )));
    }
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::Config(format!("lattice spacing must be positive, got {spacing}")));
    }
    if !(margin.is_finite() && margin >= 0.0) {
        return Err(Error::Config(format!("lattice margin must be non-negative, got {margin}")));
    }
    let points: Vec<Point> = (0..rows)
        .flat_map(|r| {
            (0..cols).map(move |c| Point::new(margin + c as f64 * spacing, margin + r as f64 * spacing))
        })
        .collect();
    let extent = |n: usize| {
        let last = margin + (n - 1) as f64 * spacing;
        let padded = (last + margin).ceil();
        // points must stay strictly inside even with zero margin
        padded.max(last.floor() + 1.0) as u32
    };
    FrameAnnotation::new(
        format!("lattice_{rows}x{cols}"),
        extent(cols),
        extent(rows),
        points,
    )
}
