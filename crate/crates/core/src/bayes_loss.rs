//! Bayesian counting loss for point supervision.
//!
//! Every head `n` explains grid cell `m` with a Gaussian likelihood
//! centered on its annotation. Normalizing the likelihoods over heads (and,
//! optionally, a per-cell background point) gives posterior label
//! probabilities `p(y_n | x_m)`. Weighting an estimated density by those
//! posteriors yields an expected count per head, `E[c_n]`, and for the
//! background, `E[c_0]`. The loss is the L1 distance of those expectations
//! from their targets, one per head and zero for the background:
//!
//! ```text
//! loss = Σ_n |1 − E[c_n]| + |E[c_0]|
//! ```
//!
//! The loss is piecewise linear in the estimated density, so its
//! subgradient is available in closed form.
//!
//! Uniform label priors cancel in the posterior and are never stored. The
//! kernel normalization `1/(2πσ²)` cancels too, so posteriors are computed
//! from log-likelihoods with the row maximum subtracted; far-away cells never
//! underflow to an all-zero row.

use serde::{Deserialize, Serialize};

use crate::annotations::{FrameAnnotation, GridSpec, Point};
use crate::density::{gaussian_norm, DensityGrid, DEFAULT_SIGMA};
use crate::error::{Error, Result};

/// Default background distance, as a fraction of the image's shorter side.
pub const DEFAULT_BACKGROUND_DISTANCE: f64 = 0.15;

/// How [`BayesConfig::d`] is converted to pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceMode {
    /// `d · min(width, height)` of the frame.
    FractionOfMinSide,
    /// `d` is already in pixels.
    AbsolutePixels,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BayesConfig {
    pub sigma: f64,
    pub background_enabled: bool,
    pub d: f64,
    pub d_mode: DistanceMode,
    /// Use the nearest head's likelihood as the numerator of the background
    /// posterior instead of the background likelihood. Off by default; the
    /// resulting rows no longer sum to one. Kept for side-by-side comparison.
    pub literal_background_numerator: bool,
}

impl Default for BayesConfig {
    fn default() -> Self {
        BayesConfig {
            sigma: DEFAULT_SIGMA,
            background_enabled: true,
            d: DEFAULT_BACKGROUND_DISTANCE,
            d_mode: DistanceMode::FractionOfMinSide,
            literal_background_numerator: false,
        }
    }
}

impl BayesConfig {
    pub fn without_background() -> Self {
        BayesConfig {
            background_enabled: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.d.is_finite() && self.d > 0.0) {
            return Err(Error::Config(format!(
                "background distance d must be positive, got {}",
                self.d
            )));
        }
        if self.d_mode == DistanceMode::FractionOfMinSide && self.d >= 1.0 {
            return Err(Error::Config(format!(
                "background distance d is a fraction of the shorter image side and must be < 1, got {}",
                self.d
            )));
        }
        Ok(())
    }

    /// Background distance in pixels for this frame.
    pub fn d_pixels(&self, frame: &FrameAnnotation) -> f64 {
        match self.d_mode {
            DistanceMode::FractionOfMinSide => self.d * f64::from(frame.min_side()),
            DistanceMode::AbsolutePixels => self.d,
        }
    }

    fn log_kernel(&self, distance_squared: f64) -> f64 {
        -distance_squared / (2.0 * self.sigma * self.sigma)
    }
}

/// Row-major `cells × labels` matrix of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTable {
    labels: usize,
    data: Vec<f64>,
}

impl LabelTable {
    pub fn from_rows(labels: usize, data: Vec<f64>) -> Result<Self> {
        if labels == 0 || data.len() % labels != 0 {
            return Err(Error::Shape(format!(
                "{} values do not form rows of {labels} labels",
                data.len()
            )));
        }
        Ok(LabelTable { labels, data })
    }

    pub fn cells(&self) -> usize {
        self.data.len() / self.labels
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.data[m * self.labels..(m + 1) * self.labels]
    }

    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.data[m * self.labels + n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.labels)
    }
}

/// Gaussian likelihoods `p(x_m | y_n)` for every cell (rows) and head
/// (columns), with the normalized, untruncated kernel.
pub fn likelihoods(frame: &FrameAnnotation, spec: &GridSpec, cfg: &BayesConfig) -> Result<LabelTable> {
    cfg.validate()?;
    if frame.is_empty() {
        return Err(Error::NoAnnotations);
    }
    let norm = gaussian_norm(cfg.sigma);
    let data = spec
        .centers()
        .flat_map(|x| {
            frame
                .points
                .iter()
                .map(move |&z| norm * cfg.log_kernel(x.distance_squared(z)).exp())
        })
        .collect();
    LabelTable::from_rows(frame.len(), data)
}

/// Per-cell background annotation: the point `d_pixels` away from the
/// nearest head `z_nearest`, in the direction of the cell center `x`.
///
/// Fails with [`Error::DegenerateBackground`] when `x == z_nearest`; use
/// [`background_likelihood`], which is defined everywhere, instead.
pub fn background_point(x: Point, z_nearest: Point, d_pixels: f64) -> Result<Point> {
    if !(d_pixels.is_finite() && d_pixels > 0.0) {
        return Err(Error::Config(format!(
            "background distance must be positive, got {d_pixels}"
        )));
    }
    let r = x.distance(z_nearest);
    if r == 0.0 {
        return Err(Error::DegenerateBackground);
    }
    let scale = d_pixels / r;
    Ok(Point::new(
        z_nearest.x + scale * (x.x - z_nearest.x),
        z_nearest.y + scale * (x.y - z_nearest.y),
    ))
}

// Nearest head: squared distance and index. Ties resolve to the lower index.
fn nearest_head(x: Point, points: &[Point]) -> Option<(f64, usize)> {
    points
        .iter()
        .enumerate()
        .map(|(n, &z)| (x.distance_squared(z), n))
        .fold(None, |best, cur| match best {
            Some(b) if b.0 <= cur.0 => Some(b),
            _ => Some(cur),
        })
}

/// Likelihood of `x` under the background label.
///
/// The background point lies on the ray from the nearest head through `x`,
/// so `‖x − z_0‖ = |r − d|` with `r` the distance to the nearest head. That
/// distance form is used directly and stays defined at `r = 0`.
pub fn background_likelihood(x: Point, frame: &FrameAnnotation, cfg: &BayesConfig) -> Result<f64> {
    cfg.validate()?;
    let (r2, _) = nearest_head(x, &frame.points).ok_or(Error::NoAnnotations)?;
    let gap = r2.sqrt() - cfg.d_pixels(frame);
    Ok(gaussian_norm(cfg.sigma) * cfg.log_kernel(gap * gap).exp())
}

/// Posterior label probabilities for every grid cell.
///
/// Columns `0..N` hold `p(y_n | x_m)`; with the background enabled a final
/// column holds `p(y_0 | x_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTable {
    spec: GridSpec,
    heads: usize,
    background_enabled: bool,
    table: LabelTable,
}

impl PosteriorTable {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Number of annotated heads, `N`.
    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn background_enabled(&self) -> bool {
        self.background_enabled
    }

    pub fn table(&self) -> &LabelTable {
        &self.table
    }

    pub fn row(&self, m: usize) -> &[f64] {
        self.table.row(m)
    }

    pub fn head(&self, m: usize, n: usize) -> f64 {
        self.table.get(m, n)
    }

    /// `p(y_0 | x_m)`, zero when the background is disabled.
    pub fn background(&self, m: usize) -> f64 {
        if self.background_enabled {
            self.table.get(m, self.heads)
        } else {
            0.0
        }
    }
}

/// Normalizes one row of linear-domain likelihoods into posteriors.
///
/// `background` is `p(x_m | y_0)` when the background label is modeled.
/// With `literal_numerator` the background entry uses `nearest_head`'s
/// likelihood as its numerator.
pub fn normalize_row(
    head_likelihoods: &[f64],
    background: Option<f64>,
    literal_numerator: Option<usize>,
) -> Option<Vec<f64>> {
    let total: f64 = head_likelihoods.iter().sum::<f64>() + background.unwrap_or(0.0);
    if !(total.is_finite() && total > 0.0) {
        return None;
    }
    let mut row: Vec<f64> = head_likelihoods.iter().map(|&l| l / total).collect();
    if let Some(b) = background {
        let numerator = match literal_numerator {
            Some(n) => head_likelihoods[n],
            None => b,
        };
        row.push(numerator / total);
    }
    Some(row)
}

pub fn posterior(frame: &FrameAnnotation, spec: &GridSpec, cfg: &BayesConfig) -> Result<PosteriorTable> {
    cfg.validate()?;
    if frame.is_empty() {
        return Err(Error::NoAnnotations);
    }
    let heads = frame.len();
    let labels = heads + usize::from(cfg.background_enabled);
    let d = cfg.d_pixels(frame);
    let mut data = Vec::with_capacity(spec.len() * labels);
    let mut logs = vec![0.0; labels];
    for (m, x) in spec.centers().enumerate() {
        for (slot, &z) in logs.iter_mut().zip(&frame.points) {
            *slot = cfg.log_kernel(x.distance_squared(z));
        }
        let mut nearest = 0;
        if cfg.background_enabled {
            let (r2, n) = nearest_head(x, &frame.points).expect("frame has heads");
            let gap = r2.sqrt() - d;
            logs[heads] = cfg.log_kernel(gap * gap);
            nearest = n;
        }
        let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = data.len();
        data.extend(logs.iter().map(|&l| (l - peak).exp()));
        let total: f64 = data[start..].iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::ZeroPosteriorRow { row: m });
        }
        if cfg.background_enabled && cfg.literal_background_numerator {
            data[start + heads] = data[start + nearest];
        }
        for v in &mut data[start..] {
            *v /= total;
        }
    }
    Ok(PosteriorTable {
        spec: *spec,
        heads,
        background_enabled: cfg.background_enabled,
        table: LabelTable::from_rows(labels, data)?,
    })
}

/// Posterior-weighted counts `(E[c_n] for each head, E[c_0])`.
///
/// Sums run over cells in ascending index order.
pub fn expected_counts(post: &PosteriorTable, est: &DensityGrid) -> Result<(Vec<f64>, f64)> {
    if post.spec() != est.spec() {
        return Err(Error::Shape(format!(
            "posterior grid {:?} does not match density grid {:?}",
            post.spec(),
            est.spec()
        )));
    }
    Ok(weighted_sums(post, est.values()))
}

fn weighted_sums(post: &PosteriorTable, values: &[f64]) -> (Vec<f64>, f64) {
    let mut sums = vec![0.0; post.table.labels()];
    for (row, &v) in post.table.rows().zip(values) {
        for (s, &p) in sums.iter_mut().zip(row) {
            *s += p * v;
        }
    }
    let background = if post.background_enabled {
        sums.pop().expect("background column")
    } else {
        0.0
    };
    (sums, background)
}

/// Loss value, expected counts and the subgradient with respect to every
/// cell of the estimated density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossResult {
    pub loss: f64,
    pub expected_counts: Vec<f64>,
    pub expected_background: f64,
    /// Row-major over the estimate's grid. Not serialized.
    #[serde(skip)]
    pub gradient: Vec<f64>,
}

impl LossResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("loss result always serializes")
    }
}

/// Sign with `sign(0) = 0`, the subgradient picked at L1 kinks.
pub fn kink_sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Loss for one frame, with the posteriors computed once and reused across
/// evaluations (the posterior does not depend on the estimate).
#[derive(Debug, Clone)]
pub struct LossEvaluator {
    spec: GridSpec,
    posterior: Option<PosteriorTable>,
}

impl LossEvaluator {
    /// Frames without heads treat every cell as background: the loss is the
    /// total estimated mass.
    pub fn new(frame: &FrameAnnotation, spec: &GridSpec, cfg: &BayesConfig) -> Result<Self> {
        cfg.validate()?;
        if !spec.matches_frame(frame) {
            return Err(Error::Shape(format!(
                "grid {}x{} at stride {} does not cover frame '{}' ({}x{} px)",
                spec.cols, spec.rows, spec.stride, frame.frame_id, frame.image_width, frame.image_height
            )));
        }
        let posterior = if frame.is_empty() {
            None
        } else {
            Some(posterior(frame, spec, cfg)?)
        };
        Ok(LossEvaluator {
            spec: *spec,
            posterior,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn posterior(&self) -> Option<&PosteriorTable> {
        self.posterior.as_ref()
    }

    pub fn evaluate(&self, est: &DensityGrid) -> Result<LossResult> {
        if *est.spec() != self.spec {
            return Err(Error::Shape(format!(
                "estimate grid {:?} does not match frame grid {:?}",
                est.spec(),
                self.spec
            )));
        }
        self.evaluate_values(est.values())
    }

    /// Same as [`evaluate`](Self::evaluate) on raw row-major cell values.
    /// Values need not be non-negative, which finite-difference probes rely on.
    pub fn evaluate_values(&self, values: &[f64]) -> Result<LossResult> {
        if values.len() != self.spec.len() {
            return Err(Error::Shape(format!(
                "expected {} cell values, got {}",
                self.spec.len(),
                values.len()
            )));
        }
        let Some(post) = &self.posterior else {
            let mass: f64 = values.iter().sum();
            let s = kink_sign(mass);
            return Ok(LossResult {
                loss: mass.abs(),
                expected_counts: Vec::new(),
                expected_background: mass,
                gradient: vec![s; self.spec.len()],
            });
        };
        let (counts, background) = weighted_sums(post, values);
        let loss = counts.iter().map(|e| (1.0 - e).abs()).sum::<f64>() + background.abs();

        // d|1 - E|/dE = -sign(1 - E); d|E_0|/dE_0 = sign(E_0)
        let head_weights: Vec<f64> = counts.iter().map(|e| -kink_sign(1.0 - e)).collect();
        let background_weight = kink_sign(background);
        let heads = post.heads();
        let gradient = post
            .table
            .rows()
            .map(|row| {
                let g: f64 = row[..heads]
                    .iter()
                    .zip(&head_weights)
                    .map(|(p, w)| p * w)
                    .sum();
                if post.background_enabled {
                    g + background_weight * row[heads]
                } else {
                    g
                }
            })
            .collect();
        Ok(LossResult {
            loss,
            expected_counts: counts,
            expected_background: background,
            gradient,
        })
    }
}

/// One-shot loss evaluation on the estimate's own grid.
pub fn bayes_loss(frame: &FrameAnnotation, est: &DensityGrid, cfg: &BayesConfig) -> Result<LossResult> {
    LossEvaluator::new(frame, est.spec(), cfg)?.evaluate(est)
}
