//! Ground-truth density maps from head points, counting by integration, and
//! red-channel heatmap overlays.

use image::RgbImage;

use crate::annotations::{FrameAnnotation, GridSpec, Point};
use crate::error::{Error, Result};

/// Default kernel bandwidth in pixels.
pub const DEFAULT_SIGMA: f64 = 8.0;

/// Floor for the overlay gain so an all-zero grid renders as zero red.
const OVERLAY_PEAK_FLOOR: f64 = 1e-12;

/// Isotropic Gaussian kernel parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub sigma: f64,
    /// Unit-mass kernel `1/(2πσ²)·exp(..)` when set, bare `exp(..)` otherwise.
    pub normalized: bool,
    /// Support cut-off in units of sigma; `None` keeps the full kernel.
    pub truncation_radius: Option<f64>,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            sigma: DEFAULT_SIGMA,
            normalized: true,
            truncation_radius: None,
        }
    }
}

impl KernelParams {
    pub fn new(sigma: f64) -> Result<Self> {
        let params = KernelParams {
            sigma,
            ..Default::default()
        };
        params.validate()?;
        Ok(params)
    }

    /// Same kernel cut off at `radius·sigma`. This is an approximation:
    /// each head then contributes slightly less than unit mass.
    pub fn truncated(self, radius: f64) -> Result<Self> {
        let params = KernelParams {
            truncation_radius: Some(radius),
            ..self
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if let Some(r) = self.truncation_radius {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::Config(format!(
                    "truncation radius must be positive, got {r}"
                )));
            }
        }
        Ok(())
    }

    /// Peak value of the kernel (its value at distance zero).
    pub fn peak(&self) -> f64 {
        if self.normalized {
            gaussian_norm(self.sigma)
        } else {
            1.0
        }
    }
}

/// `1/(2πσ²)`, the normalization of a 2D isotropic Gaussian.
pub fn gaussian_norm(sigma: f64) -> f64 {
    1.0 / (2.0 * std::f64::consts::PI * sigma * sigma)
}

/// Isotropic Gaussian `N(x; z, σ²I)` at `x`, subject to the kernel's
/// normalization and truncation settings.
pub fn gaussian_at(x: Point, z: Point, params: &KernelParams) -> f64 {
    let d2 = x.distance_squared(z);
    let s2 = params.sigma * params.sigma;
    if let Some(r) = params.truncation_radius {
        if d2 > r * r * s2 {
            return 0.0;
        }
    }
    params.peak() * (-d2 / (2.0 * s2)).exp()
}

/// Non-negative per-cell mass over a [`GridSpec`], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    spec: GridSpec,
    values: Vec<f64>,
}

impl DensityGrid {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::Shape(format!(
                "grid {}x{} needs {} values, got {}",
                spec.cols,
                spec.rows,
                spec.len(),
                values.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::Raster(format!(
                "cell {i} holds {v}; density values must be finite and non-negative"
            )));
        }
        Ok(DensityGrid { spec, values })
    }

    pub fn zeros(spec: GridSpec) -> Self {
        DensityGrid {
            spec,
            values: vec![0.0; spec.len()],
        }
    }

    pub fn filled(spec: GridSpec, value: f64) -> Result<Self> {
        Self::new(spec, vec![value; spec.len()])
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[self.spec.index(col, row)]
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Integrated count, `Σ_m values(m)`.
    pub fn total_count(&self) -> f64 {
        total_count(self)
    }
}

pub fn total_count(grid: &DensityGrid) -> f64 {
    grid.values.iter().sum()
}

/// Ground-truth density: every head spreads one Gaussian over the grid.
///
/// Cell mass is the kernel value at the cell center times the cell area
/// (`stride²`), so the grid sum approximates the integral and is close to
/// `N` regardless of stride. Contributions are accumulated head by head in
/// annotation order.
pub fn generate_gt_density(
    frame: &FrameAnnotation,
    spec: &GridSpec,
    params: &KernelParams,
) -> Result<DensityGrid> {
    params.validate()?;
    if !spec.matches_frame(frame) {
        let expected = GridSpec::for_frame(frame, spec.stride)?;
        return Err(Error::Shape(format!(
            "frame '{}' ({}x{} px) needs a {}x{} grid at stride {}, got {}x{}",
            frame.frame_id,
            frame.image_width,
            frame.image_height,
            expected.cols,
            expected.rows,
            spec.stride,
            spec.cols,
            spec.rows
        )));
    }
    let area = spec.stride * spec.stride;
    let mut values = vec![0.0; spec.len()];
    for &z in &frame.points {
        let (cols, rows) = support_window(z, spec, params);
        for row in rows {
            for col in cols.clone() {
                let m = spec.index(col, row);
                values[m] += gaussian_at(spec.cell_center(col, row), z, params) * area;
            }
        }
    }
    Ok(DensityGrid {
        spec: *spec,
        values,
    })
}

// Cells that can receive mass from a head at `z`; the whole grid unless the
// kernel is truncated.
fn support_window(
    z: Point,
    spec: &GridSpec,
    params: &KernelParams,
) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    match params.truncation_radius {
        None => (0..spec.cols, 0..spec.rows),
        Some(r) => {
            let reach = r * params.sigma;
            let span = |center: f64, n: usize| {
                // centers (k + 0.5)·stride within [center - reach, center + reach]
                let lo = ((center - reach) / spec.stride - 0.5).ceil().max(0.0) as usize;
                let hi = ((center + reach) / spec.stride - 0.5).floor();
                let hi = if hi < 0.0 { 0 } else { (hi as usize + 1).min(n) };
                lo.min(hi)..hi
            };
            (span(z.x, spec.cols), span(z.y, spec.rows))
        }
    }
}

/// Replaces the red channel of `image` with the density, scaled so the
/// grid's own peak saturates at 255. Each cell paints its `stride × stride`
/// pixel block (nearest-neighbour upsampling); green and blue are kept.
pub fn render_overlay(image: &RgbImage, grid: &DensityGrid) -> Result<RgbImage> {
    let spec = grid.spec();
    let expected = GridSpec::for_image(image.width(), image.height(), spec.stride)?;
    if expected != *spec {
        return Err(Error::Shape(format!(
            "{}x{} image needs a {}x{} grid at stride {}, got {}x{}",
            image.width(),
            image.height(),
            expected.cols,
            expected.rows,
            spec.stride,
            spec.cols,
            spec.rows
        )));
    }
    let peak = grid.max_value().max(OVERLAY_PEAK_FLOOR);
    let mut out = image.clone();
    for (px, py, pixel) in out.enumerate_pixels_mut() {
        let col = ((f64::from(px) + 0.5) / spec.stride).floor() as usize;
        let row = ((f64::from(py) + 0.5) / spec.stride).floor() as usize;
        let v = grid.get(col.min(spec.cols - 1), row.min(spec.rows - 1));
        pixel[0] = (255.0 * (v / peak).min(1.0)).round() as u8;
    }
    Ok(out)
}
