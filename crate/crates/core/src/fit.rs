//! Direct minimization of the Bayesian counting loss over a free,
//! non-negative density field by projected subgradient descent.
//!
//! The posterior does not depend on the field, so the loss is convex and
//! piecewise linear in it. Each iteration takes
//! `est ← max(0, est − α_k · g_k)` with `g_k` the closed-form subgradient.

use crate::annotations::{FrameAnnotation, GridSpec};
use crate::bayes_loss::{BayesConfig, LossEvaluator};
use crate::density::{generate_gt_density, DensityGrid, KernelParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FitInit {
    Zeros,
    Uniform(f64),
    /// Ground-truth density of the frame with the loss's sigma.
    GtDensity,
}

/// How the per-iteration step `α_k` is derived from `step_size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    /// `α_k = step_size · loss_k / ‖g_k‖²`. The loss has a known lower bound
    /// of zero, so this is a Polyak step with `step_size` as relaxation
    /// factor; it scales with the grid and stays stable for `step_size ≤ 1`.
    Polyak,
    /// `α_k = step_size`, applied per cell.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub steps: usize,
    pub step_size: f64,
    pub init: FitInit,
    pub record_trace_every: usize,
    pub step_rule: StepRule,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            steps: 500,
            step_size: 0.5,
            init: FitInit::Zeros,
            record_trace_every: 10,
            step_rule: StepRule::Polyak,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("fit needs at least one step".into()));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::Config(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.record_trace_every == 0 {
            return Err(Error::Config("trace interval must be at least 1".into()));
        }
        if let FitInit::Uniform(c) = self.init {
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::Config(format!(
                    "uniform init value must be non-negative, got {c}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub step: usize,
    pub loss: f64,
    pub total_count: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    /// Loss and mass of the iterate after `step` updates. Always contains
    /// step 0 and the final step.
    pub iterations: Vec<TracePoint>,
    pub final_grid: DensityGrid,
}

impl FitTrace {
    pub fn initial(&self) -> &TracePoint {
        &self.iterations[0]
    }

    pub fn last(&self) -> &TracePoint {
        self.iterations.last().expect("trace is never empty")
    }

    /// `step,loss,total_count` CSV with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,total_count\n");
        for p in &self.iterations {
            out.push_str(&format!("{},{},{}\n", p.step, p.loss, p.total_count));
        }
        out
    }
}

pub fn initial_field(
    frame: &FrameAnnotation,
    spec: &GridSpec,
    bayes: &BayesConfig,
    init: FitInit,
) -> Result<DensityGrid> {
    match init {
        FitInit::Zeros => Ok(DensityGrid::zeros(*spec)),
        FitInit::Uniform(c) => DensityGrid::filled(*spec, c),
        FitInit::GtDensity => generate_gt_density(frame, spec, &KernelParams::new(bayes.sigma)?),
    }
}

pub fn fit_density(
    frame: &FrameAnnotation,
    spec: &GridSpec,
    bayes: &BayesConfig,
    fitcfg: &FitConfig,
) -> Result<FitTrace> {
    fitcfg.validate()?;
    let evaluator = LossEvaluator::new(frame, spec, bayes)?;
    let mut field = initial_field(frame, spec, bayes, fitcfg.init)?.into_values();
    let mut iterations = Vec::new();

    for step in 0..=fitcfg.steps {
        let result = evaluator.evaluate_values(&field)?;
        if !result.loss.is_finite() || result.gradient.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        if step % fitcfg.record_trace_every == 0 || step == fitcfg.steps {
            iterations.push(TracePoint {
                step,
                loss: result.loss,
                total_count: field.iter().sum(),
            });
        }
        if step == fitcfg.steps {
            break;
        }
        let alpha = match fitcfg.step_rule {
            StepRule::Constant => fitcfg.step_size,
            StepRule::Polyak => {
                let norm2: f64 = result.gradient.iter().map(|g| g * g).sum();
                if norm2 == 0.0 {
                    0.0
                } else {
                    fitcfg.step_size * result.loss / norm2
                }
            }
        };
        for (v, g) in field.iter_mut().zip(&result.gradient) {
            *v = (*v - alpha * g).max(0.0);
        }
    }

    Ok(FitTrace {
        iterations,
        final_grid: DensityGrid::new(*spec, field)?,
    })
}

/// Largest disagreement between the analytic subgradient and a central
/// difference `(L(est + h·e_m) − L(est − h·e_m)) / 2h` over all cells.
///
/// Cells are skipped when the probe could land on or across an L1 kink:
/// some expected count within `kink_tol` of its target, or moved by the
/// probe by at least its distance to the target. Returns 0 when every cell
/// is skipped.
pub fn finite_diff_check(
    frame: &FrameAnnotation,
    spec: &GridSpec,
    bayes: &BayesConfig,
    est: &DensityGrid,
    h: f64,
    kink_tol: f64,
) -> Result<f64> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let evaluator = LossEvaluator::new(frame, spec, bayes)?;
    let base = evaluator.evaluate(est)?;
    let post = evaluator.posterior();

    let mut probe = est.values().to_vec();
    let mut worst: f64 = 0.0;
    for m in 0..spec.len() {
        let near_kink = match post {
            Some(post) => {
                let heads = base.expected_counts.iter().enumerate().any(|(n, e)| {
                    let gap = (1.0 - e).abs();
                    gap <= kink_tol || h * post.head(m, n) >= gap
                });
                let gap0 = base.expected_background.abs();
                let bg = post.background_enabled()
                    && (gap0 <= kink_tol || h * post.background(m) >= gap0);
                heads || bg
            }
            None => base.expected_background.abs() <= kink_tol.max(h),
        };
        if near_kink {
            continue;
        }
        let original = probe[m];
        probe[m] = original + h;
        let plus = evaluator.evaluate_values(&probe)?.loss;
        probe[m] = original - h;
        let minus = evaluator.evaluate_values(&probe)?.loss;
        probe[m] = original;
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max((numeric - base.gradient[m]).abs());
    }
    Ok(worst)
}
